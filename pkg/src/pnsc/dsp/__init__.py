"""Signal-processing front end: framing, LPC, Bark cepstrum, pitch, mu-law, WAV I/O."""

from .features import (
    FRAME_SIZE,
    LOG_FLOOR,
    N_BANDS,
    N_FEATURES,
    PITCH_MAX,
    PITCH_MIN,
    SAMPLE_RATE,
    WINDOW_SIZE,
    Frame,
    bark_cepstrum,
    cepstrum_to_lpc,
    estimate_pitch,
    frame_features,
    frame_signal,
    normalize_features,
)
from .lpc import (
    LPC_ORDER,
    LpcCoeffs,
    autocorrelate,
    excitation,
    levinson_durbin,
    lpc_predict,
    lpc_prediction_signal,
)
from .mulaw import mulaw_decode, mulaw_encode
from .wav import AudioBuffer, WavFormatError, read_wav, write_wav

__all__ = [
    "AudioBuffer",
    "FRAME_SIZE",
    "Frame",
    "LOG_FLOOR",
    "LPC_ORDER",
    "LpcCoeffs",
    "N_BANDS",
    "N_FEATURES",
    "PITCH_MAX",
    "PITCH_MIN",
    "SAMPLE_RATE",
    "WINDOW_SIZE",
    "WavFormatError",
    "autocorrelate",
    "bark_cepstrum",
    "cepstrum_to_lpc",
    "estimate_pitch",
    "excitation",
    "frame_features",
    "frame_signal",
    "levinson_durbin",
    "lpc_predict",
    "lpc_prediction_signal",
    "mulaw_decode",
    "mulaw_encode",
    "normalize_features",
    "read_wav",
    "write_wav",
]
