"""Peak-to-average power metrics and CCDF estimation.

Peaks of the underlying continuous-time waveform are captured by
oversampling the critically sampled frame with ideal bandlimited
(frequency-domain zero-padding) interpolation before taking the maximum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError

DEFAULT_OVERSAMPLING = 4
DEFAULT_THRESHOLDS_DB = np.arange(0.0, 14.0 + 1e-9, 0.1)


@dataclass(frozen=True)
class PaprSample:
    """PAPR of one frame within a Monte-Carlo ensemble."""

    papr_db: float
    frame_id: int

    def __post_init__(self):
        if self.papr_db < 0:
            raise ConfigurationError("PAPR cannot be below 0 dB")


@dataclass(frozen=True)
class CcdfCurve:
    """Empirical exceedance probabilities over ascending thresholds."""

    thresholds_db: np.ndarray
    exceed_prob: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds_db, dtype=float)
        p = np.asarray(self.exceed_prob, dtype=float)
        if t.shape != p.shape:
            raise ConfigurationError("thresholds and probabilities must align")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("thresholds must be strictly ascending")
        if np.any((p < 0) | (p > 1)) or np.any(np.diff(p) > 1e-12):
            raise ConfigurationError("exceedance probabilities must be nonincreasing in [0,1]")
        object.__setattr__(self, "thresholds_db", t)
        object.__setattr__(self, "exceed_prob", p)

    def threshold_at(self, prob: float) -> float:
        """Smallest tabulated threshold whose exceedance is <= ``prob``."""
        idx = np.nonzero(self.exceed_prob <= prob)[0]
        if idx.size == 0:
            return float(self.thresholds_db[-1])
        return float(self.thresholds_db[idx[0]])


def oversample(frame: np.ndarray, j: int = DEFAULT_OVERSAMPLING) -> np.ndarray:
    """Bandlimited interpolation of a frame by an integer factor.

    Zero-pads the discrete spectrum (low bins kept low, high bins moved to
    the top so every original tone stays a single tone) and rescales so the
    average power is preserved; original samples reappear at stride ``j``.
    """
    frame = np.asarray(frame, dtype=complex)
    if j < 1:
        raise ConfigurationError("oversampling factor must be >= 1")
    if j == 1:
        return frame.copy()
    length = frame.shape[-1]
    spec = np.fft.fft(frame, axis=-1)
    half = length // 2
    up = np.zeros(frame.shape[:-1] + (j * length,), dtype=complex)
    up[..., :half] = spec[..., :half]
    up[..., j * length - (length - half):] = spec[..., half:]
    return j * np.fft.ifft(up, axis=-1)


def oversample_adjoint(g: np.ndarray, j: int) -> np.ndarray:
    """Adjoint of the :func:`oversample` linear map (back to critical rate).

    With the real-pair gradient convention, back-propagating through
    ``oversample(s, j)`` means applying this to the upstream gradient; the
    algebra collapses to fft at the high rate, bin truncation, ifft at the
    low rate, with no extra scaling.
    """
    g = np.asarray(g, dtype=complex)
    if j < 1:
        raise ConfigurationError("oversampling factor must be >= 1")
    if j == 1:
        return g.copy()
    jl = g.shape[-1]
    length = jl // j
    half = length // 2
    spec = np.fft.fft(g, axis=-1)
    down = np.concatenate(
        [spec[..., :half], spec[..., jl - (length - half):]], axis=-1
    )
    return np.fft.ifft(down, axis=-1)


def papr(frame: np.ndarray, mean_power: float | None = None) -> float:
    """PAPR of a frame in dB: peak sample power over average power.

    Args:
        frame: complex samples (already oversampled if desired).
        mean_power: optional ensemble-average power to use as the
            denominator instead of the per-frame empirical mean.
    """
    frame = np.asarray(frame, dtype=complex)
    power = np.abs(frame) ** 2
    denom = float(np.mean(power)) if mean_power is None else float(mean_power)
    if denom <= 0:
        raise DegenerateInputError("PAPR undefined for an all-zero frame")
    return float(10.0 * np.log10(np.max(power) / denom))


def papr_batch(frames: np.ndarray, oversampling: int = 1) -> np.ndarray:
    """Per-frame PAPR (dB) of a (batch, length) array."""
    frames = np.asarray(frames, dtype=complex)
    if oversampling > 1:
        frames = oversample(frames, oversampling)
    power = np.abs(frames) ** 2
    mean = np.mean(power, axis=-1)
    if np.any(mean <= 0):
        raise DegenerateInputError("PAPR undefined for an all-zero frame")
    return 10.0 * np.log10(np.max(power, axis=-1) / mean)


def ccdf(samples, thresholds_db=None) -> CcdfCurve:
    """Empirical CCDF of a PAPR ensemble.

    Args:
        samples: sequence of :class:`PaprSample` or raw dB floats.
        thresholds_db: ascending thresholds; defaults to 0:0.1:14 dB.
    """
    values = np.asarray(
        [s.papr_db if isinstance(s, PaprSample) else float(s) for s in samples]
    )
    if values.size == 0:
        raise ConfigurationError("cannot estimate a CCDF from an empty ensemble")
    if thresholds_db is None:
        thresholds_db = DEFAULT_THRESHOLDS_DB
    thresholds_db = np.asarray(thresholds_db, dtype=float)
    probs = np.array([np.mean(values > t) for t in thresholds_db])
    return CcdfCurve(thresholds_db=thresholds_db, exceed_prob=probs)
