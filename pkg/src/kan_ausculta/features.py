"""Audio preprocessing and statistical feature extraction.

Pipeline per recording: decode WAV -> resample to 22 050 Hz (polyphase)
-> zero-phase Butterworth band-pass 100-2000 Hz -> peak normalize ->
compute mel / MFCC(+delta,+delta-delta) / chroma / spectral / onset
streams -> summarize each stream row with seven statistics (mean, std,
min, max, median, skewness, excess kurtosis) -> concatenate into one
feature vector, imputing NaN/Inf as zero.

STFT parameters are frame 2048 / hop 512 with a Hann window. Standard
deviation is the population (1/N) convention throughout. The "log-f"
chroma variant folds a log-frequency (12 bins/octave) spectrogram rather
than a true constant-Q transform.

Extraction is a pure function of (bytes, config): the layout fingerprint
binds feature matrices and model checkpoints to the exact configuration
that produced them.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

from .errors import ContractViolation, DataError, FingerprintError

__all__ = [
    "FeatureConfig",
    "AudioSignal",
    "FeatureLayout",
    "FeatureVector",
    "STAT_NAMES",
    "read_wav",
    "preprocess",
    "power_spectrogram",
    "magnitude_spectrogram",
    "mel_filterbank",
    "mel_band_centers",
    "mel_stream",
    "mfcc_from_mel",
    "mfcc_stream",
    "chroma_streams",
    "spectral_streams",
    "onset_stream",
    "aggregate",
    "default_layout",
    "extract",
    "save_feature_cache",
    "load_feature_cache",
]

log = logging.getLogger(__name__)

STAT_NAMES = ("mean", "std", "min", "max", "median", "skewness", "kurtosis")

CACHE_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 22050
    band_low: float = 100.0
    band_high: float = 2000.0
    filter_order: int = 4
    frame_length: int = 2048
    hop_length: int = 512
    n_mels: int = 128
    n_mfcc: int = 40
    n_chroma: int = 12
    subbands: bool = False  # adds 4 equal mel-group energy streams when on

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not (0 < self.band_low < self.band_high < self.sample_rate / 2):
            raise ValueError(
                f"band ({self.band_low}, {self.band_high}) must sit inside "
                f"(0, {self.sample_rate / 2})"
            )
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc cannot exceed n_mels")


@dataclass
class AudioSignal:
    samples: np.ndarray  # mono, float, nominally in [-1, 1]
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered (stream, statistic) pairs plus the config that generates them."""

    entries: tuple
    config: FeatureConfig

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            {"entries": list(self.entries), "config": self.config.__dict__},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class FeatureVector:
    values: np.ndarray
    fingerprint: str


# ----------------------------------------------------------------------------
# decoding and preprocessing


def read_wav(path) -> AudioSignal:
    """Decode a PCM/float WAV to mono float samples in [-1, 1]."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as exc:
        raise DataError(f"unreadable audio file {path}: {exc}") from exc
    if data.size == 0:
        raise DataError(f"empty audio file {path}")
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.uint8:
        samples = (data.astype(float) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(float) / 2147483648.0
    else:
        samples = data.astype(float)
    return AudioSignal(samples=samples, sample_rate=int(rate))


def _resample(samples: np.ndarray, rate: int, target: int) -> np.ndarray:
    if rate == target:
        return samples
    ratio = Fraction(target, rate).limit_denominator(1000)
    return scipy.signal.resample_poly(samples, ratio.numerator, ratio.denominator)


def preprocess(sig: AudioSignal, cfg: FeatureConfig = FeatureConfig()) -> AudioSignal:
    """Resample, band-pass (forward-backward, zero phase), peak-normalize."""
    samples = np.asarray(sig.samples, dtype=float)
    if samples.size == 0:
        raise DataError("empty signal")
    samples = _resample(samples, sig.sample_rate, cfg.sample_rate)

    sos = scipy.signal.butter(
        cfg.filter_order,
        [cfg.band_low, cfg.band_high],
        btype="bandpass",
        fs=cfg.sample_rate,
        output="sos",
    )
    default_pad = 3 * (2 * len(sos) + 1)
    padlen = min(default_pad, max(0, len(samples) - 1))
    filtered = scipy.signal.sosfiltfilt(sos, samples, padlen=padlen)

    peak = np.max(np.abs(filtered))
    if peak > 0:
        filtered = filtered / peak
    return AudioSignal(samples=filtered, sample_rate=cfg.sample_rate)


# ----------------------------------------------------------------------------
# spectrogram plumbing


def _frame(samples: np.ndarray, frame: int, hop: int) -> np.ndarray:
    if len(samples) < frame:
        log.warning(
            "signal shorter than one frame (%d < %d); using a single zero-padded frame",
            len(samples),
            frame,
        )
        padded = np.zeros(frame)
        padded[: len(samples)] = samples
        return padded[None, :]
    n = 1 + (len(samples) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def magnitude_spectrogram(sig: AudioSignal, cfg: FeatureConfig) -> np.ndarray:
    """(n_fft/2 + 1, T) Hann-windowed magnitude STFT."""
    frames = _frame(np.asarray(sig.samples, dtype=float), cfg.frame_length, cfg.hop_length)
    window = np.hanning(cfg.frame_length)
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def power_spectrogram(sig: AudioSignal, cfg: FeatureConfig) -> np.ndarray:
    mag = magnitude_spectrogram(sig, cfg)
    return mag * mag


def _fft_freqs(cfg: FeatureConfig) -> np.ndarray:
    return np.fft.rfftfreq(cfg.frame_length, d=1.0 / cfg.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """(n_mels, n_fft/2 + 1) triangular filters spanning 0..sample_rate/2."""
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    lower = (freqs[None, :] - hz_points[:-2, None]) / (
        hz_points[1:-1, None] - hz_points[:-2, None]
    )
    upper = (hz_points[2:, None] - freqs[None, :]) / (
        hz_points[2:, None] - hz_points[1:-1, None]
    )
    return np.maximum(0.0, np.minimum(lower, upper))


def mel_band_centers(cfg: FeatureConfig) -> np.ndarray:
    mel_points = np.linspace(
        hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2
    )
    return mel_to_hz(mel_points)[1:-1]


def mel_stream(sig: AudioSignal, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """(n_mels, T) mel power spectrogram."""
    power = power_spectrogram(sig, cfg)
    filters = mel_filterbank(cfg.n_mels, cfg.frame_length, cfg.sample_rate)
    return filters @ power


def mfcc_from_mel(mel: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """(3 * n_mfcc, T): cepstra from log-mel plus delta and delta-delta rows."""
    log_mel = np.log(mel + 1e-10)
    cepstra = scipy.fft.dct(log_mel, type=2, axis=0, norm="ortho")[: cfg.n_mfcc]
    d1 = _delta(cepstra)
    d2 = _delta(d1)
    return np.vstack([cepstra, d1, d2])


def mfcc_stream(sig: AudioSignal, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    return mfcc_from_mel(mel_stream(sig, cfg), cfg)


def _delta(rows: np.ndarray, half_window: int = 2) -> np.ndarray:
    """Regression-slope delta over a +/- half_window frame neighborhood."""
    padded = np.pad(rows, ((0, 0), (half_window, half_window)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, half_window + 1))
    out = np.zeros_like(rows)
    for n in range(1, half_window + 1):
        out += n * (
            padded[:, half_window + n : padded.shape[1] - half_window + n]
            - padded[:, half_window - n : padded.shape[1] - half_window - n]
        )
    return out / denom


_C1_HZ = 32.70319566257483  # lowest log-frequency bin (C1), 12 bins/octave upward


def _pitch_classes(freqs: np.ndarray) -> np.ndarray:
    """Nearest pitch class (0 = C, 9 = A) for each positive frequency."""
    midi = 69.0 + 12.0 * np.log2(freqs / 440.0)
    return (np.round(midi).astype(int)) % 12


def _chroma_from_power(power: np.ndarray, cfg: FeatureConfig):
    freqs = _fft_freqs(cfg)
    positive = freqs > 0

    chroma_stft = np.zeros((cfg.n_chroma, power.shape[1]))
    classes = _pitch_classes(freqs[positive])
    np.add.at(chroma_stft, classes, power[positive])

    # log-frequency (constant-Q-like) folding: 12 bins/octave from C1 upward
    n_octaves = int(np.floor(np.log2((cfg.sample_rate / 2.0) / _C1_HZ)))
    n_bins = 12 * n_octaves
    centers = _C1_HZ * 2.0 ** (np.arange(n_bins) / 12.0)
    chroma_logf = np.zeros((cfg.n_chroma, power.shape[1]))
    half_step = 2.0 ** (1.0 / 24.0)
    for b, fc in enumerate(centers):
        lo, hi = fc / half_step, fc * half_step
        mask = (freqs >= lo) & (freqs < hi)
        if mask.any():
            chroma_logf[b % 12] += power[mask].sum(axis=0)

    for chroma in (chroma_stft, chroma_logf):
        peaks = chroma.max(axis=0)
        nonzero = peaks > 0
        chroma[:, nonzero] /= peaks[nonzero]
    return chroma_stft, chroma_logf


def chroma_streams(sig: AudioSignal, cfg: FeatureConfig = FeatureConfig()):
    """Two (12, T) chroma variants: direct STFT folding and log-frequency folding."""
    return _chroma_from_power(power_spectrogram(sig, cfg), cfg)


def _spectral_from_mag(mag: np.ndarray, cfg: FeatureConfig):
    freqs = _fft_freqs(cfg)
    total = mag.sum(axis=0)
    voiced = total > 0
    centroid = np.zeros(mag.shape[1])
    bandwidth = np.zeros(mag.shape[1])
    if voiced.any():
        centroid[voiced] = (freqs[:, None] * mag[:, voiced]).sum(axis=0) / total[voiced]
        spread = (freqs[:, None] - centroid[None, voiced]) ** 2
        bandwidth[voiced] = np.sqrt((spread * mag[:, voiced]).sum(axis=0) / total[voiced])
    return centroid, bandwidth


def spectral_streams(sig: AudioSignal, cfg: FeatureConfig = FeatureConfig()):
    """Per-frame magnitude-weighted mean frequency and spread around it."""
    return _spectral_from_mag(magnitude_spectrogram(sig, cfg), cfg)


def _onset_from_mel(mel: np.ndarray, duration: float):
    flux = np.zeros(mel.shape[1])
    if mel.shape[1] > 1:
        diff = np.maximum(0.0, mel[:, 1:] - mel[:, :-1])
        flux[1:] = diff.sum(axis=0)

    threshold = flux.mean() + flux.std()
    count = 0
    for t in range(len(flux)):
        if flux[t] <= threshold or flux[t] <= 0:
            continue
        lo, hi = max(0, t - 3), min(len(flux), t + 4)
        if flux[t] < flux[lo:hi].max():
            continue
        if t > 0 and flux[t] == flux[t - 1]:  # count plateaus once
            continue
        count += 1
    rate = count / duration if duration > 0 else 0.0
    return flux, count, rate


def onset_stream(sig: AudioSignal, cfg: FeatureConfig = FeatureConfig()):
    """Onset strength envelope, onset count, and onsets per second.

    The envelope is the half-wave-rectified positive spectral flux of the
    mel spectrogram summed over bands; onsets are local envelope maxima
    (within +/- 3 frames) exceeding mean + 1 std.
    """
    return _onset_from_mel(mel_stream(sig, cfg), sig.duration)


# ----------------------------------------------------------------------------
# aggregation and assembly


def aggregate(series) -> np.ndarray:
    """(mean, std, min, max, median, skewness, excess kurtosis) of a series.

    Population (1/N) standard deviation; a zero-variance series reports
    skewness and kurtosis of 0 by convention.
    """
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ContractViolation("cannot aggregate an empty series")
    mean = series.mean()
    centered = series - mean
    m2 = np.mean(centered**2)
    std = np.sqrt(m2)
    if std <= 1e-12 * max(1.0, abs(mean)):
        skew = 0.0
        kurt = 0.0
    else:
        skew = np.mean(centered**3) / m2**1.5
        kurt = np.mean(centered**4) / (m2 * m2) - 3.0
    return np.array(
        [mean, std, series.min(), series.max(), np.median(series), skew, kurt]
    )


def _stream_labels(cfg: FeatureConfig):
    labels = []
    labels += [f"mel[{i}]" for i in range(cfg.n_mels)]
    labels += [f"mfcc[{i}]" for i in range(3 * cfg.n_mfcc)]
    labels += [f"chroma_stft[{i}]" for i in range(cfg.n_chroma)]
    labels += [f"chroma_logf[{i}]" for i in range(cfg.n_chroma)]
    labels += ["centroid", "bandwidth", "onset_envelope"]
    if cfg.subbands:
        labels += [f"mel_subband[{i}]" for i in range(4)]
    return labels


def default_layout(cfg: FeatureConfig = FeatureConfig()) -> FeatureLayout:
    """The declared stream/statistic ordering; dim 1927 for the defaults."""
    entries = []
    for label in _stream_labels(cfg):
        entries += [(label, stat) for stat in STAT_NAMES]
    entries += [("onset_count", "value"), ("onset_rate", "value")]
    return FeatureLayout(entries=tuple(entries), config=cfg)


def extract(sig: AudioSignal, layout: FeatureLayout) -> FeatureVector:
    """Aggregate every stream and concatenate in layout order; NaN/Inf -> 0.

    A fully silent signal carries no information and short-circuits to the
    all-zero vector (mel/chroma/spectral/onset streams are all zero there;
    the cepstral log floor would otherwise leak a constant).
    """
    cfg = layout.config
    if sig.sample_rate != cfg.sample_rate:
        raise FingerprintError(
            f"signal rate {sig.sample_rate} does not match layout rate {cfg.sample_rate}; "
            "run preprocess first"
        )
    samples = np.asarray(sig.samples, dtype=float)
    if not samples.size or not np.any(samples):
        return FeatureVector(values=np.zeros(layout.dim), fingerprint=layout.fingerprint)

    mag = magnitude_spectrogram(sig, cfg)
    power = mag * mag
    mel = mel_filterbank(cfg.n_mels, cfg.frame_length, cfg.sample_rate) @ power
    mfcc = mfcc_from_mel(mel, cfg)
    chroma_stft, chroma_logf = _chroma_from_power(power, cfg)
    centroid, bandwidth = _spectral_from_mag(mag, cfg)
    envelope, n_onsets, onset_rate = _onset_from_mel(mel, sig.duration)

    blocks = [mel, mfcc, chroma_stft, chroma_logf, centroid[None, :], bandwidth[None, :], envelope[None, :]]
    if cfg.subbands:
        groups = np.array_split(mel, 4, axis=0)
        blocks.append(np.vstack([g.mean(axis=0, keepdims=True) for g in groups]))

    pieces = [np.concatenate([aggregate(row) for row in block]) for block in blocks]
    pieces.append(np.array([float(n_onsets), onset_rate]))
    values = np.concatenate(pieces)
    if values.shape[0] != layout.dim:
        raise FingerprintError(
            f"extractor produced {values.shape[0]} values but layout declares {layout.dim}"
        )
    values = np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0)
    return FeatureVector(values=values, fingerprint=layout.fingerprint)


# ----------------------------------------------------------------------------
# feature matrix cache


def save_feature_cache(path, fingerprint: str, paths, matrix, labels=None) -> None:
    """Columnar container binding a feature matrix to its layout fingerprint."""
    payload = {
        "version": np.array(CACHE_VERSION),
        "fingerprint": np.array(fingerprint),
        "paths": np.array(list(paths), dtype=object),
        "matrix": np.asarray(matrix, dtype=float),
    }
    if labels is not None:
        payload["labels"] = np.asarray(labels, dtype=int)
    np.savez_compressed(path, **payload)


def load_feature_cache(path, expected_fingerprint: str | None = None):
    """Returns (fingerprint, paths, matrix, labels-or-None)."""
    with np.load(path, allow_pickle=True) as data:
        version = int(data["version"])
        if version != CACHE_VERSION:
            raise DataError(f"unsupported feature cache version {version}")
        fingerprint = str(data["fingerprint"])
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise FingerprintError(
                f"feature cache fingerprint {fingerprint} != expected {expected_fingerprint}"
            )
        paths = [str(p) for p in data["paths"]]
        matrix = data["matrix"]
        labels = data["labels"] if "labels" in data.files else None
    return fingerprint, paths, matrix, labels
