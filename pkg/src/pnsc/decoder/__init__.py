"""Group-specialised LPC-based neural decoders."""

from .data import TrainingBatch, UtteranceData, evaluation_batches, prepare_utterance, random_batch
from .model import (
    PRESETS,
    DecoderConfig,
    DecoderModel,
    RecurrentState,
    frame_rate_forward,
    preset,
    sample_rate_forward,
    sample_rate_logits,
    teacher_forced_loss,
)
from .synth import (
    SynthesisOutput,
    decode_dispatch,
    sample_excitation,
    synthesize,
    synthesize_features,
    synthesize_stream,
)
from .train import (
    DecoderBank,
    DecoderTrainConfig,
    dump_bank,
    evaluate_ce,
    group_training_sets,
    load_bank,
    load_decoder,
    save_decoder,
    train_bank,
    train_decoder,
    weighted_validation_loss,
)

__all__ = [
    "PRESETS",
    "DecoderBank",
    "DecoderConfig",
    "DecoderModel",
    "DecoderTrainConfig",
    "RecurrentState",
    "SynthesisOutput",
    "TrainingBatch",
    "UtteranceData",
    "decode_dispatch",
    "dump_bank",
    "evaluate_ce",
    "evaluation_batches",
    "frame_rate_forward",
    "group_training_sets",
    "load_bank",
    "load_decoder",
    "prepare_utterance",
    "preset",
    "random_batch",
    "sample_excitation",
    "sample_rate_forward",
    "sample_rate_logits",
    "save_decoder",
    "synthesize",
    "synthesize_features",
    "synthesize_stream",
    "teacher_forced_loss",
    "train_bank",
    "train_decoder",
    "weighted_validation_loss",
]
