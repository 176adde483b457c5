"""16 kHz mono PCM16 WAV reading and writing."""

from __future__ import annotations

import os
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000


class WavFormatError(ValueError):
    """The file is not 16-bit mono PCM at 16 kHz."""


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError(f"sample rate {self.sample_rate} Hz unsupported; need {SAMPLE_RATE}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def to_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def read_wav(path) -> AudioBuffer:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV not supported")
            if w.getnchannels() != 1:
                raise WavFormatError(f"{path}: {w.getnchannels()} channels, need mono")
            if w.getsampwidth() != 2:
                raise WavFormatError(f"{path}: {8 * w.getsampwidth()}-bit samples, need 16-bit")
            if w.getframerate() != SAMPLE_RATE:
                raise WavFormatError(f"{path}: {w.getframerate()} Hz, need {SAMPLE_RATE}")
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0)


def write_wav(path, audio) -> None:
    """Write atomically (temp file, then rename)."""
    samples = audio.samples if isinstance(audio, AudioBuffer) else audio
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(SAMPLE_RATE)
            w.writeframes(to_pcm16(samples).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
