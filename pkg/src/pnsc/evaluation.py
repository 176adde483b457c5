"""Objective evaluation: size-weighted validation cross-entropy, SNR and report export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decoder.train import DecoderBank, evaluate_ce, weighted_validation_loss
from .fileio import atomic_write

SNR_CAP = 99.9


def snr(reference, decoded) -> float:
    """``10 log10(sum s^2 / sum (s - s_hat)^2)`` in dB, clamped to +/-99.9.

    ``decoded`` is trimmed or zero-padded to the reference length; an exact
    match reports the +99.9 sentinel.
    """
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    dec = np.asarray(getattr(decoded, "samples", decoded), dtype=np.float64)
    if dec.size < ref.size:
        dec = np.concatenate([dec, np.zeros(ref.size - dec.size)])
    dec = dec[: ref.size]
    signal = float(np.sum(ref * ref))
    noise = float(np.sum((ref - dec) ** 2))
    if noise == 0.0:
        return SNR_CAP
    if signal == 0.0:
        return -SNR_CAP
    return float(np.clip(10.0 * math.log10(signal / noise), -SNR_CAP, SNR_CAP))


@dataclass
class EvalReport:
    group_losses: list[float]
    group_sizes: list[int]
    weighted_loss: float
    generic_group_losses: list[float] | None = None
    generic_loss: float | None = None
    epochs: list[dict] = field(default_factory=list)
    snr_db: dict = field(default_factory=dict)
    bitrate: float | None = None
    classifications: dict = field(default_factory=dict)

    @property
    def n_total(self) -> int:
        return sum(self.group_sizes)

    @property
    def relative_gain(self) -> float | None:
        if self.generic_loss is None:
            return None
        return 1.0 - self.weighted_loss / self.generic_loss

    def to_json(self) -> str:
        d = asdict(self)
        d["n_total"] = self.n_total
        d["relative_gain"] = self.relative_gain
        return json.dumps(d, indent=2, sort_keys=True)

    def write_csv(self, fh) -> None:
        """Per-epoch curves to a text stream: epoch, weighted bank loss, generic loss."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "bank_weighted_val_loss", "generic_val_loss"])
        for row in self.epochs:
            w.writerow([row["epoch"], row["bank"], "" if row.get("generic") is None else row["generic"]])


def epoch_curves(bank_histories, sizes, generic_history=None) -> list[dict]:
    """Weighted bank loss per epoch from each member's own-group validation loss."""
    live = [(h, n) for h, n in zip(bank_histories, sizes) if n > 0]
    if not live:
        return []
    rows = []
    for e in range(min(len(h) for h, _ in live)):
        row = {"epoch": live[0][0][e]["epoch"], "bank": weighted_validation_loss([h[e]["val_loss"] for h, _ in live], [n for _, n in live])}
        if generic_history is not None and e < len(generic_history):
            row["generic"] = generic_history[e]["val_loss"]
        rows.append(row)
    return rows


def evaluate(bank: DecoderBank, generic, val_by_speaker: dict, val_groups: dict, chunk_frames: int = 4) -> EvalReport:
    """Bank against a generic decoder on validation speakers routed by ``val_groups``.

    Group sizes count validation speakers. The generic decoder is scored with
    the same per-group weighting so both numbers average the same material.
    """
    C = len(bank)
    members = [[s for s in sorted(val_by_speaker) if val_groups[s] == c] for c in range(C)]
    sizes = [len(m) for m in members]
    if sum(sizes) == 0:
        raise ValueError("no validation speakers")
    losses, generic_losses = [], []
    for c in range(C):
        if not members[c]:
            losses.append(float("nan"))
            generic_losses.append(float("nan"))
            continue
        utts = [u for s in members[c] for u in val_by_speaker[s]]
        losses.append(evaluate_ce(bank.decoders[c], utts, chunk_frames))
        if generic is not None:
            generic_losses.append(evaluate_ce(generic, utts, chunk_frames))
    live = [c for c in range(C) if sizes[c]]
    weighted = weighted_validation_loss([losses[c] for c in live], [sizes[c] for c in live])
    report = EvalReport(losses, sizes, weighted, classifications=dict(val_groups))
    if generic is not None:
        report.generic_group_losses = generic_losses
        report.generic_loss = weighted_validation_loss([generic_losses[c] for c in live], [sizes[c] for c in live])
    return report


def write_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = atomic_write(out / "eval.json", report.to_json() + "\n")
    buf = io.StringIO()
    report.write_csv(buf)
    return js, atomic_write(out / "eval.csv", buf.getvalue())
