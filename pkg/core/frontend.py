"""
Waveform handling and 40-dim log-mel filter-bank features.

Per frame: pre-emphasis, Hamming window, magnitude spectrum, HTK-scale mel filter bank,
natural log with a floor. Speed perturbation resamples the waveform by linear interpolation
(no anti-alias filter), which changes tempo and pitch together like an external speed tool.
"""
import math
import os
import struct
import wave
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from core.numerics.checkpoint import atomic_write_bytes
from utils.config import LASConfig
from utils.errors import AudioFormatError, InsufficientSamplesError, InvalidArgumentError, NumericDomainError
from utils.logger import logger

FBANK_MAGIC = b"FBNK"
FBANK_VERSION = 1


class Waveform(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: np.ndarray
    sample_rate: int

    @field_validator("sample_rate")
    @classmethod
    def _positive_rate(cls, value: int) -> int:
        if value <= 0:
            raise ValueError(f"sample_rate must be positive, got {value}")
        return value

    @field_validator("samples")
    @classmethod
    def _finite_samples(cls, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(value)):
            raise ValueError("waveform contains non-finite samples")
        return value

    def __len__(self) -> int:
        return len(self.samples)


class FeatureSequence(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: np.ndarray                 # T x D
    frame_shift: float                 # seconds
    utt_id: str = ""

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])


class FbankOptions(BaseModel):
    sample_rate: Optional[int] = None  # expected input rate; None accepts any
    window_ms: float = 25.0
    hop_ms: float = 10.0
    preemphasis: float = 0.97
    num_mel_bins: int = 40
    low_freq: float = 20.0
    high_freq: float = 0.0             # 0 means Nyquist
    log_floor: float = 1e-10
    apply_cmvn: bool = False

    @classmethod
    def from_config(cls, cfg: LASConfig) -> "FbankOptions":
        return cls(
            sample_rate=cfg.sample_rate,
            window_ms=cfg.window_ms,
            hop_ms=cfg.hop_ms,
            preemphasis=cfg.preemphasis,
            num_mel_bins=cfg.num_mel_bins,
            low_freq=cfg.low_freq,
            high_freq=cfg.high_freq,
            log_floor=cfg.log_floor,
            apply_cmvn=cfg.apply_cmvn,
        )

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


def num_frames(num_samples: int, window: int, hop: int) -> int:
    return 1 + (num_samples - window) // hop


def _mel(hz):
    return 1127.0 * np.log(1.0 + np.asarray(hz) / 700.0)


def mel_filterbank(num_bins: int, nfft: int, sample_rate: int, low_freq: float, high_freq: float) -> np.ndarray:
    """Triangular filters evenly spaced on the HTK mel scale, shape (num_bins, nfft//2 + 1)."""
    nyquist = sample_rate / 2.0
    high = nyquist if high_freq <= 0 else min(high_freq, nyquist)
    if not 0 <= low_freq < high:
        raise InvalidArgumentError(f"invalid mel range [{low_freq}, {high}]")
    centers = np.linspace(_mel(low_freq), _mel(high), num_bins + 2)
    fft_mels = _mel(np.arange(nfft // 2 + 1) * sample_rate / nfft)
    bank = np.zeros((num_bins, nfft // 2 + 1))
    for m in range(num_bins):
        left, center, right = centers[m], centers[m + 1], centers[m + 2]
        rising = (fft_mels - left) / (center - left)
        falling = (right - fft_mels) / (right - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def compute_fbank(w: Waveform, opts: Optional[FbankOptions] = None, utt_id: str = "") -> FeatureSequence:
    """
    Log-mel filter-bank features.

    Args:
        w: input waveform
        opts: frame/filter options (defaults: 25 ms / 10 ms at the waveform's rate, 40 bins)

    Returns:
        FeatureSequence with T = 1 + floor((N - window) / hop) frames
    """
    opts = opts or FbankOptions()
    if opts.sample_rate is not None and w.sample_rate != opts.sample_rate:
        raise AudioFormatError(f"utterance '{utt_id}' is sampled at {w.sample_rate} Hz, expected {opts.sample_rate} Hz")
    window, hop = opts.window_samples(w.sample_rate), opts.hop_samples(w.sample_rate)
    if window < 1 or hop < 1:
        raise InvalidArgumentError(f"{opts.window_ms} ms / {opts.hop_ms} ms framing is under one sample at {w.sample_rate} Hz")
    n = len(w.samples)
    if n < window:
        raise InsufficientSamplesError(f"{n} samples is shorter than the {window}-sample window")

    count = num_frames(n, window, hop)
    index = np.arange(window)[None, :] + hop * np.arange(count)[:, None]
    frames = w.samples[index].astype(np.float64)

    emphasized = frames.copy()
    emphasized[:, 1:] -= opts.preemphasis * frames[:, :-1]
    emphasized[:, 0] -= opts.preemphasis * frames[:, 0]
    emphasized *= np.hamming(window)

    nfft = 1 << max(0, (window - 1).bit_length())
    magnitude = np.abs(np.fft.rfft(emphasized, n=nfft, axis=1))
    bank = mel_filterbank(opts.num_mel_bins, nfft, w.sample_rate, opts.low_freq, opts.high_freq)
    feats = np.log(np.maximum(magnitude @ bank.T, opts.log_floor))

    if opts.apply_cmvn:
        feats = apply_cmvn(feats)
    if not np.all(np.isfinite(feats)):
        raise NumericDomainError(f"non-finite features for utterance '{utt_id}'")
    return FeatureSequence(frames=feats, frame_shift=hop / w.sample_rate, utt_id=utt_id)


def apply_cmvn(feats: np.ndarray) -> np.ndarray:
    """Per-utterance mean/variance normalisation."""
    std = feats.std(axis=0)
    return (feats - feats.mean(axis=0)) / np.where(std > 0, std, 1.0)


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """
    Resample at positions i * factor with linear interpolation.

    The output has round(N / factor) samples and keeps the input sample rate.
    """
    if factor <= 0:
        raise InvalidArgumentError(f"speed factor must be positive, got {factor}")
    samples = w.samples
    if factor == 1.0:
        return Waveform(samples=samples.copy(), sample_rate=w.sample_rate)
    n = len(samples)
    out_len = int(math.floor(n / factor + 0.5))
    if n == 0 or out_len == 0:
        return Waveform(samples=np.zeros(out_len), sample_rate=w.sample_rate)
    positions = np.minimum(np.arange(out_len) * factor, n - 1)
    left = np.floor(positions).astype(np.int64)
    right = np.minimum(left + 1, n - 1)
    frac = positions - left
    resampled = samples[left] * (1.0 - frac) + samples[right] * frac
    return Waveform(samples=resampled, sample_rate=w.sample_rate)


def read_audio(path: str) -> Waveform:
    """Read a 16-bit PCM mono WAV file, scaling samples by 1/32768."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"audio file not found: {path}")
    try:
        with wave.open(path, "rb") as wav:
            channels, width, rate, count = wav.getnchannels(), wav.getsampwidth(), wav.getframerate(), wav.getnframes()
            raw = wav.readframes(count)
    except (wave.Error, EOFError, struct.error) as e:
        logger.error(f"Failed to parse WAV {path}: {e}")
        raise AudioFormatError(f"{path}: {e}") from e
    if channels != 1 or width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit mono PCM, got {channels} channel(s) of {8 * width}-bit")
    if len(raw) % 2:
        raise AudioFormatError(f"{path}: odd number of data bytes")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_audio(path: str, w: Waveform) -> None:
    """Write 16-bit PCM mono WAV (values clipped to the int16 range)."""
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with wave.open(path, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(w.sample_rate)
        wav.writeframes(ints.tobytes())


def encode_features(feats: FeatureSequence) -> bytes:
    t, d = feats.frames.shape
    header = FBANK_MAGIC + struct.pack("<IIIf", FBANK_VERSION, t, d, feats.frame_shift)
    return header + np.ascontiguousarray(feats.frames, dtype="<f4").tobytes()


def write_features(path: str, feats: FeatureSequence) -> None:
    atomic_write_bytes(path, encode_features(feats))


def read_features(path: str, utt_id: str = "") -> FeatureSequence:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20 or blob[:4] != FBANK_MAGIC:
        raise AudioFormatError(f"{path}: not an FBNK feature file")
    version, t, d, shift = struct.unpack("<IIIf", blob[4:20])
    if version != FBANK_VERSION:
        raise AudioFormatError(f"{path}: unsupported feature file version {version}")
    body = blob[20:]
    if len(body) != 4 * t * d:
        raise AudioFormatError(f"{path}: expected {t}x{d} values, found {len(body) // 4}")
    frames = np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float64)
    return FeatureSequence(frames=frames, frame_shift=float(shift), utt_id=utt_id)
