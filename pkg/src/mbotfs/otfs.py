"""Delay-Doppler modulation core.

Symbols live on an M (delay) x N (Doppler) grid. The transmitter applies a
unitary inverse DFT along the Doppler axis of each delay row and reads the
result out time-sample by time-sample; the receiver applies the exact inverse.
Doubly-dispersive channels are described by a small set of paths, each with a
complex gain, an integer delay tap and an integer Doppler bin, and can be
materialized either as a time-domain matrix or as the equivalent delay-Doppler
matrix obtained by conjugating with the transmit/receive transforms, so both
descriptions agree to machine precision by construction.

Vectorization is column-major throughout: element ``i`` of a grid vector maps
to delay ``l = i % M`` and Doppler ``k = i // M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EqualizationError

# Condition-number threshold above which a zero-noise equalization is
# reported as failed instead of returning garbage.
COND_LIMIT = 1e12


def _check_grid_dims(m: int, n: int) -> None:
    for name, dim in (("M", m), ("N", n)):
        if dim < 2 or (dim & (dim - 1)) != 0:
            raise ConfigurationError(
                f"{name}={dim} must be a power of two >= 2 for radix-2 transforms"
            )


def _check_positive_dims(m: int, n: int) -> None:
    if m < 1 or n < 1:
        raise ConfigurationError("grid dimensions must be positive")


def grid_to_vec(grid: np.ndarray) -> np.ndarray:
    """Column-major vectorization of an M x N grid."""
    return np.asarray(grid).reshape(-1, order="F")


def vec_to_grid(vec: np.ndarray, m: int, n: int) -> np.ndarray:
    """Inverse of :func:`grid_to_vec`."""
    vec = np.asarray(vec)
    if vec.shape[-1] != m * n:
        raise ConfigurationError(f"vector length {vec.shape[-1]} != M*N = {m * n}")
    return vec.reshape(m, n, order="F")


@dataclass(frozen=True)
class PathSet:
    """Integer-grid description of a doubly-dispersive channel realization.

    Attributes:
        gains: complex gain per path, shape (P,).
        delays: integer delay tap per path, each in [0, l_max - 1].
        dopplers: integer Doppler bin per path, each in [-k_max, k_max].
        l_max: number of delay taps the channel may occupy.
        k_max: largest absolute Doppler bin the channel may occupy.
    """

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray
    l_max: int
    k_max: int

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=complex)
        delays = np.asarray(self.delays, dtype=int)
        dopplers = np.asarray(self.dopplers, dtype=int)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "dopplers", dopplers)
        p = gains.shape[0]
        if p < 1:
            raise ConfigurationError("a PathSet needs at least one path")
        if delays.shape != (p,) or dopplers.shape != (p,):
            raise ConfigurationError("gains, delays and dopplers must have equal length")
        if np.any(delays < 0) or np.any(delays >= self.l_max):
            raise ConfigurationError(f"delay indices must lie in [0, {self.l_max - 1}]")
        if np.any(np.abs(dopplers) > self.k_max):
            raise ConfigurationError(f"|Doppler index| must be <= {self.k_max}")

    @property
    def n_paths(self) -> int:
        return self.gains.shape[0]

    def validate_for_grid(self, m: int, n: int) -> None:
        """Check that this channel is representable on an M x N grid."""
        if np.any(self.delays >= m):
            raise ConfigurationError("path delay index exceeds the delay-grid size M")
        if np.any(np.abs(self.dopplers) > n // 2):
            raise ConfigurationError("path Doppler index exceeds N/2")


@dataclass(frozen=True)
class ChannelMatrices:
    """Time-domain and delay-Doppler matrices of one channel realization."""

    h_td: np.ndarray
    h_dd: np.ndarray


def dd_modulate(grid: np.ndarray) -> np.ndarray:
    """Map a delay-Doppler grid to the critically sampled time-domain frame.

    Applies the unitary length-N inverse DFT along the Doppler axis of each
    delay row, then reads the M x N result out column by column, so sample
    ``n*M + m`` of the frame belongs to block ``n`` and delay row ``m``.

    Args:
        grid: complex array of shape (M, N).

    Returns:
        Complex frame of length M*N. Total energy equals the grid energy.
    """
    grid = np.asarray(grid, dtype=complex)
    if grid.ndim != 2:
        raise ConfigurationError("grid must be a 2-D M x N array")
    m, n = grid.shape
    _check_grid_dims(m, n)
    s_mn = np.fft.ifft(grid, axis=1, norm="ortho")
    return s_mn.reshape(-1, order="F")


def dd_demodulate(frame: np.ndarray, m: int, n: int) -> np.ndarray:
    """Exact inverse of :func:`dd_modulate`.

    Args:
        frame: complex frame of length M*N.
        m: delay-grid size M.
        n: Doppler-grid size N.

    Returns:
        Complex grid of shape (M, N).
    """
    frame = np.asarray(frame, dtype=complex)
    _check_grid_dims(m, n)
    if frame.shape != (m * n,):
        raise ConfigurationError(f"frame length {frame.shape} != M*N = {m * n}")
    y_mn = frame.reshape(m, n, order="F")
    return np.fft.fft(y_mn, axis=1, norm="ortho")


def modulate_vec(vec: np.ndarray, m: int, n: int) -> np.ndarray:
    """:func:`dd_modulate` acting on (batches of) grid vectors.

    Accepts shape (M*N,) or (batch, M*N); the transform acts on the last axis.
    """
    vec = np.asarray(vec, dtype=complex)
    if vec.ndim == 1:
        return dd_modulate(vec.reshape(m, n, order="F"))
    _check_grid_dims(m, n)
    batch = vec.shape[0]
    grids = vec.reshape(batch, n, m).transpose(0, 2, 1)
    s_mn = np.fft.ifft(grids, axis=2, norm="ortho")
    return s_mn.transpose(0, 2, 1).reshape(batch, m * n)


def demodulate_vec(vec: np.ndarray, m: int, n: int) -> np.ndarray:
    """Inverse of :func:`modulate_vec` with the same batching rules."""
    vec = np.asarray(vec, dtype=complex)
    if vec.ndim == 1:
        return grid_to_vec(dd_demodulate(vec, m, n))
    _check_grid_dims(m, n)
    batch = vec.shape[0]
    y_mn = vec.reshape(batch, n, m).transpose(0, 2, 1)
    g = np.fft.fft(y_mn, axis=2, norm="ortho")
    return g.transpose(0, 2, 1).reshape(batch, m * n)


def modulation_matrix(m: int, n: int) -> np.ndarray:
    """Dense MN x MN matrix C with ``dd_modulate(vec) == C @ vec``."""
    _check_grid_dims(m, n)
    f_n = np.fft.fft(np.eye(n), axis=0, norm="ortho")
    return np.kron(f_n.conj(), np.eye(m))


def build_td_channel(ps: PathSet, m: int, n: int) -> np.ndarray:
    """Time-domain channel matrix acting on length-MN frames.

    Row ``n*M + m`` receives, for each path, the gain times the phase
    ramp ``exp(j*2*pi*k_p*(n*M + m - l_p) / (M*N))`` from the sample at
    column ``n*M + ((m - l_p) mod M)``; the delay is cyclic within each
    block of M samples.

    Args:
        ps: channel realization.
        m: delay-grid size M.
        n: Doppler-grid size N.

    Returns:
        Complex (MN, MN) matrix with at most P nonzeros per row.
    """
    _check_positive_dims(m, n)
    ps.validate_for_grid(m, n)
    mn = m * n
    h = np.zeros((mn, mn), dtype=complex)
    rows = np.arange(mn)
    blk = rows // m
    sample = rows % m
    for gain, lp, kp in zip(ps.gains, ps.delays, ps.dopplers):
        phase = np.exp(2j * np.pi * kp * (rows - lp) / mn)
        cols = blk * m + (sample - lp) % m
        h[rows, cols] += gain * phase
    return h


def build_dd_channel(ps: PathSet, m: int, n: int) -> np.ndarray:
    """Delay-Doppler channel matrix, consistent with the transform pipeline.

    Computed as ``C^H @ H_td @ C`` with C the modulation operator, so that
    demodulating ``H_td @ dd_modulate(x)`` equals applying the returned
    matrix to the grid vector ``x`` up to floating-point error.
    """
    h_td = build_td_channel(ps, m, n)
    c = modulation_matrix(m, n)
    return c.conj().T @ h_td @ c


def build_channel_matrices(ps: PathSet, m: int, n: int) -> ChannelMatrices:
    """Bundle the TD and DD matrices of one realization."""
    h_td = build_td_channel(ps, m, n)
    c = modulation_matrix(m, n)
    return ChannelMatrices(h_td=h_td, h_dd=c.conj().T @ h_td @ c)


def apply_channel(
    frame: np.ndarray,
    ps: PathSet,
    m: int,
    n: int,
    noise_var: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Pass a time-domain frame through the channel, sample by sample.

    Evaluates the per-sample path sum directly (no matrix build) and adds
    circularly-symmetric complex Gaussian noise of variance ``noise_var``.
    Deterministic for a fixed generator state; ``noise_var=0`` reproduces
    the matrix product exactly.
    """
    frame = np.asarray(frame, dtype=complex)
    _check_positive_dims(m, n)
    if frame.shape != (m * n,):
        raise ConfigurationError("frame must be critically sampled (length M*N)")
    if noise_var < 0:
        raise ConfigurationError("noise_var must be >= 0")
    ps.validate_for_grid(m, n)
    mn = m * n
    idx = np.arange(mn)
    blk = idx // m
    sample = idx % m
    out = np.zeros(mn, dtype=complex)
    for gain, lp, kp in zip(ps.gains, ps.delays, ps.dopplers):
        phase = np.exp(2j * np.pi * kp * (idx - lp) / mn)
        out += gain * phase * frame[blk * m + (sample - lp) % m]
    if noise_var > 0:
        out += np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(mn) + 1j * rng.standard_normal(mn)
        )
    return out


def mmse_equalize(y_dd: np.ndarray, h_dd: np.ndarray, n0: float) -> np.ndarray:
    """Regularized linear estimate of the transmitted grid vector.

    Solves ``(H^H H + n0 I) z = H^H y`` with a pivoted factorization rather
    than an explicit inverse. With ``n0 = 0`` the system must be well
    conditioned, otherwise an :class:`EqualizationError` is raised.
    """
    y_dd = np.asarray(y_dd, dtype=complex)
    h_dd = np.asarray(h_dd, dtype=complex)
    if h_dd.ndim != 2 or h_dd.shape[0] != h_dd.shape[1]:
        raise ConfigurationError("h_dd must be square")
    if h_dd.shape[0] != y_dd.shape[-1]:
        raise ConfigurationError("y_dd length must match h_dd")
    if n0 < 0:
        raise ConfigurationError("n0 must be >= 0")
    a = h_dd.conj().T @ h_dd + n0 * np.eye(h_dd.shape[0])
    if n0 == 0 and np.linalg.cond(a) > COND_LIMIT:
        raise EqualizationError(
            "zero-noise equalization on a (near-)singular channel"
        )
    rhs = y_dd @ h_dd.conj() if y_dd.ndim > 1 else h_dd.conj().T @ y_dd
    if y_dd.ndim > 1:
        return np.linalg.solve(a, rhs.T).T
    return np.linalg.solve(a, rhs)


def mmse_filter(h_dd: np.ndarray, n0: float) -> np.ndarray:
    """The MMSE matrix W with ``mmse_equalize(y, H, n0) == W @ y``.

    Useful when many frames share one channel realization.
    """
    h_dd = np.asarray(h_dd, dtype=complex)
    a = h_dd.conj().T @ h_dd + n0 * np.eye(h_dd.shape[0])
    if n0 == 0 and np.linalg.cond(a) > COND_LIMIT:
        raise EqualizationError(
            "zero-noise equalization on a (near-)singular channel"
        )
    return np.linalg.solve(a, h_dd.conj().T)
