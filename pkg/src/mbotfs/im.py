"""Bit mapping for grouped index modulation with optional DFT spreading.

A frame of M*N grid slots is split into G groups of D = M*N/G slots. Each
group conveys index bits (which of its slots are nulled) plus Gray-coded QAM
bits on the active slots. Two addressing schemes are supported:

* ``fim``  - exactly one null per group, addressed directly by log2(D) bits;
* ``gfim`` - ``null_count`` nulls per group, addressed by the first
  ``floor(log2 C(D, K_z))`` lexicographic patterns (combinadic ranking).
  ``null_count = 0`` degenerates to a standard fully-active grid.

Groups are placed on the grid by a stride interleaver so every group samples
the full delay/Doppler extent, and may be DFT-spread along their own axis
before placement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import ConfigurationError
from .otfs import grid_to_vec, vec_to_grid

FIM = "fim"
GFIM = "gfim"


# ---------------------------------------------------------------------------
# Gray-coded QAM
# ---------------------------------------------------------------------------

# Gray level order for one axis of 16-QAM: adjacent levels differ in one bit.
_GRAY4_LEVELS = {(0, 0): 3.0, (0, 1): 1.0, (1, 1): -1.0, (1, 0): -3.0}


@lru_cache(maxsize=None)
def qam_constellation(order: int) -> np.ndarray:
    """Unit-average-power Gray-labeled constellation.

    Index ``s`` carries the bit label given by the binary digits of ``s``,
    most significant bit first.
    """
    if order == 4:
        pts = np.empty(4, dtype=complex)
        for b0, b1 in product((0, 1), repeat=2):
            pts[(b0 << 1) | b1] = ((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2.0)
        return pts
    if order == 16:
        pts = np.empty(16, dtype=complex)
        for b0, b1, b2, b3 in product((0, 1), repeat=4):
            re = _GRAY4_LEVELS[(b0, b1)]
            im = _GRAY4_LEVELS[(b2, b3)]
            pts[(b0 << 3) | (b1 << 2) | (b2 << 1) | b3] = (re + 1j * im) / np.sqrt(10.0)
        return pts
    raise ConfigurationError(f"unsupported constellation order {order}")


def bits_per_symbol(order: int) -> int:
    k = int(math.log2(order))
    if 2**k != order:
        raise ConfigurationError("constellation order must be a power of two")
    return k


def bits_to_int(bits: np.ndarray) -> int:
    """Interpret a bit vector as an unsigned integer, MSB first."""
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.int8)


def map_qam(bits: np.ndarray, order: int) -> np.ndarray:
    """Gray-map a bit vector onto QAM symbols (length must divide evenly)."""
    k = bits_per_symbol(order)
    bits = np.asarray(bits, dtype=np.int8).reshape(-1, k)
    idx = np.zeros(bits.shape[0], dtype=int)
    for j in range(k):
        idx = (idx << 1) | bits[:, j]
    return qam_constellation(order)[idx]


def demap_qam_hard(symbols: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-symbol decisions; returns (bits, symbol indices)."""
    const = qam_constellation(order)
    idx = np.argmin(np.abs(np.asarray(symbols)[..., None] - const) ** 2, axis=-1)
    k = bits_per_symbol(order)
    flat = idx.reshape(-1)
    bits = np.zeros((flat.size, k), dtype=np.int8)
    for j in range(k):
        bits[:, j] = (flat >> (k - 1 - j)) & 1
    return bits.reshape(-1), idx


def symbol_bit_table(order: int) -> np.ndarray:
    """(Q, log2 Q) table of bit labels, row ``s`` = label of symbol ``s``."""
    k = bits_per_symbol(order)
    table = np.zeros((order, k), dtype=np.int8)
    for s in range(order):
        table[s] = int_to_bits(s, k)
    return table


# ---------------------------------------------------------------------------
# Combinadic pattern addressing
# ---------------------------------------------------------------------------


def pattern_rank(pattern, d: int) -> int:
    """Lexicographic rank of a sorted null-position tuple among K-subsets."""
    kz = len(pattern)
    rank = 0
    prev = -1
    for j, c in enumerate(pattern):
        for x in range(prev + 1, c):
            rank += math.comb(d - 1 - x, kz - j - 1)
        prev = c
    return rank


def pattern_unrank(rank: int, d: int, kz: int):
    """Inverse of :func:`pattern_rank`."""
    pattern = []
    x = 0
    remaining = rank
    for j in range(kz):
        while True:
            block = math.comb(d - 1 - x, kz - j - 1)
            if remaining < block:
                pattern.append(x)
                x += 1
                break
            remaining -= block
            x += 1
    return tuple(pattern)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IMConfig:
    """Grouping and index-modulation parameters for one frame layout."""

    groups: int
    group_size: int
    null_count: int
    constellation_order: int = 4
    dft_spread: bool = False
    scheme: str = GFIM

    def __post_init__(self):
        if self.groups < 1 or self.group_size < 1:
            raise ConfigurationError("groups and group_size must be positive")
        if not (0 <= self.null_count < self.group_size):
            raise ConfigurationError("null_count must lie in [0, D-1]")
        bits_per_symbol(self.constellation_order)
        if self.scheme not in (FIM, GFIM):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.scheme == FIM:
            if self.null_count != 1:
                raise ConfigurationError("fim addresses exactly one null per group")
            if 2 ** self.index_bits != self.group_size:
                raise ConfigurationError("fim needs log2(D) integral")
        elif self.null_count >= 1 and self.index_bits < 1:
            raise ConfigurationError("gfim needs at least one index bit when K_z >= 1")

    @classmethod
    def for_grid(cls, m: int, n: int, groups: int, **kwargs) -> "IMConfig":
        if (m * n) % groups:
            raise ConfigurationError(f"G={groups} does not divide M*N={m * n}")
        return cls(groups=groups, group_size=(m * n) // groups, **kwargs)

    @property
    def active_count(self) -> int:
        return self.group_size - self.null_count

    @property
    def index_bits(self) -> int:
        if self.null_count == 0:
            return 0
        if self.scheme == FIM:
            return int(math.log2(self.group_size))
        n_patterns = math.comb(self.group_size, self.null_count)
        return n_patterns.bit_length() - 1

    @property
    def symbol_bits(self) -> int:
        return self.active_count * bits_per_symbol(self.constellation_order)

    @property
    def bits_per_group(self) -> int:
        return self.index_bits + self.symbol_bits

    @property
    def bits_per_frame(self) -> int:
        return self.groups * self.bits_per_group

    def null_pattern(self, rank: int):
        """Null positions addressed by index value ``rank``."""
        if self.null_count == 0:
            return ()
        if self.scheme == FIM:
            return (rank,)
        return pattern_unrank(rank, self.group_size, self.null_count)

    def null_pattern_rank(self, pattern) -> int:
        if self.null_count == 0:
            return 0
        if self.scheme == FIM:
            return pattern[0]
        return pattern_rank(tuple(pattern), self.group_size)

    def addressed_patterns(self):
        """All null patterns reachable by the index bits, in rank order."""
        return [self.null_pattern(r) for r in range(2**self.index_bits)]


@dataclass(frozen=True)
class IMSubblock:
    """One mapped group: D symbols with nulls at ``null_pattern``."""

    symbols: np.ndarray
    null_pattern: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", np.asarray(self.symbols, dtype=complex))
        object.__setattr__(self, "null_pattern", tuple(self.null_pattern))

    @property
    def active_pattern(self) -> tuple:
        return tuple(
            i for i in range(self.symbols.shape[0]) if i not in set(self.null_pattern)
        )


# ---------------------------------------------------------------------------
# Bit plumbing and mapping
# ---------------------------------------------------------------------------


def split_bits(bits: np.ndarray, cfg: IMConfig) -> np.ndarray:
    """Split a frame's bit vector into (G, bits_per_group), in order."""
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape != (cfg.bits_per_frame,):
        raise ConfigurationError(
            f"expected {cfg.bits_per_frame} bits, got {bits.shape}"
        )
    return bits.reshape(cfg.groups, cfg.bits_per_group)


def merge_bits(groups: np.ndarray, cfg: IMConfig) -> np.ndarray:
    """Inverse of :func:`split_bits`."""
    groups = np.asarray(groups, dtype=np.int8)
    if groups.shape != (cfg.groups, cfg.bits_per_group):
        raise ConfigurationError("group matrix has the wrong shape")
    return groups.reshape(-1)


def im_map(group_bits: np.ndarray, cfg: IMConfig) -> IMSubblock:
    """Map one group's bits to its D-slot symbol vector.

    The first ``index_bits`` bits (MSB first) select the null pattern, the
    remaining bits Gray-map onto QAM symbols filling the active slots in
    ascending position order.
    """
    group_bits = np.asarray(group_bits, dtype=np.int8)
    if group_bits.shape != (cfg.bits_per_group,):
        raise ConfigurationError(
            f"expected {cfg.bits_per_group} bits per group, got {group_bits.shape}"
        )
    b1 = cfg.index_bits
    pattern = cfg.null_pattern(bits_to_int(group_bits[:b1]))
    symbols = np.zeros(cfg.group_size, dtype=complex)
    active = [i for i in range(cfg.group_size) if i not in set(pattern)]
    symbols[active] = map_qam(group_bits[b1:], cfg.constellation_order)
    return IMSubblock(symbols=symbols, null_pattern=pattern)


def im_demap(sub: IMSubblock, cfg: IMConfig) -> np.ndarray:
    """Recover the group bits from an exactly formed subblock."""
    rank = cfg.null_pattern_rank(sub.null_pattern)
    index_bits = int_to_bits(rank, cfg.index_bits)
    active = [i for i in range(cfg.group_size) if i not in set(sub.null_pattern)]
    sym_bits, _ = demap_qam_hard(sub.symbols[active], cfg.constellation_order)
    return np.concatenate([index_bits, sym_bits]).astype(np.int8)


def im_demap_ml(
    z_g: np.ndarray, noise_var: float, cfg: IMConfig
) -> tuple[np.ndarray, IMSubblock]:
    """Maximum-likelihood hard detection of one equalized group.

    Exhausts the addressed null patterns; within a pattern the per-slot
    decisions are independent nearest-symbol choices, so the search is
    O(#patterns * D). Ties go to the lowest pattern rank. ``noise_var`` is
    accepted for interface symmetry; with white noise it does not affect
    the arg-min.
    """
    z_g = np.asarray(z_g, dtype=complex)
    if z_g.shape != (cfg.group_size,):
        raise ConfigurationError("z_g must have length D")
    const = qam_constellation(cfg.constellation_order)
    dist = np.abs(z_g[:, None] - const[None, :]) ** 2  # (D, Q)
    best_sym = np.argmin(dist, axis=1)
    best_dist = dist[np.arange(cfg.group_size), best_sym]
    null_cost = np.abs(z_g) ** 2

    patterns = cfg.addressed_patterns()
    costs = np.empty(len(patterns))
    total_active = np.sum(best_dist)
    for r, pat in enumerate(patterns):
        pat_idx = list(pat)
        costs[r] = total_active - np.sum(best_dist[pat_idx]) + np.sum(null_cost[pat_idx])
    rank = int(np.argmin(costs))
    pattern = patterns[rank]

    symbols = np.zeros(cfg.group_size, dtype=complex)
    active = [i for i in range(cfg.group_size) if i not in set(pattern)]
    symbols[active] = const[best_sym[active]]
    sub = IMSubblock(symbols=symbols, null_pattern=pattern)

    k = bits_per_symbol(cfg.constellation_order)
    sym_bits = np.zeros((len(active), k), dtype=np.int8)
    for j in range(k):
        sym_bits[:, j] = (best_sym[active] >> (k - 1 - j)) & 1
    bits = np.concatenate([int_to_bits(rank, cfg.index_bits), sym_bits.reshape(-1)])
    return bits.astype(np.int8), sub


def _pattern_tables(cfg: IMConfig):
    """(null, active) position tables over all addressed ranks."""
    patterns = cfg.addressed_patterns()
    nulls = np.array([list(p) for p in patterns], dtype=int).reshape(len(patterns), -1)
    active = np.array(
        [[i for i in range(cfg.group_size) if i not in set(p)] for p in patterns],
        dtype=int,
    )
    return nulls, active


def map_frames(bits: np.ndarray, cfg: IMConfig) -> np.ndarray:
    """Vectorized :func:`im_map` over whole frames.

    Args:
        bits: (frames, bits_per_frame) 0/1 array.

    Returns:
        (frames, G, D) complex symbol array.
    """
    bits = np.asarray(bits, dtype=np.int8)
    frames = bits.shape[0]
    if bits.shape != (frames, cfg.bits_per_frame):
        raise ConfigurationError("bad frame bit shape")
    b1 = cfg.index_bits
    k = bits_per_symbol(cfg.constellation_order)
    grouped = bits.reshape(frames, cfg.groups, cfg.bits_per_group)
    out = np.zeros((frames, cfg.groups, cfg.group_size), dtype=complex)

    sym_bits = grouped[:, :, b1:].reshape(frames, cfg.groups, cfg.active_count, k)
    idx = np.zeros(sym_bits.shape[:3], dtype=int)
    for j in range(k):
        idx = (idx << 1) | sym_bits[:, :, :, j]
    symbols = qam_constellation(cfg.constellation_order)[idx]

    if b1 == 0:
        out[:] = symbols
        return out
    ranks = np.zeros((frames, cfg.groups), dtype=int)
    for j in range(b1):
        ranks = (ranks << 1) | grouped[:, :, j]
    _, active_table = _pattern_tables(cfg)
    np.put_along_axis(out, active_table[ranks], symbols, axis=2)
    return out


def demap_frames_ml(z: np.ndarray, cfg: IMConfig) -> np.ndarray:
    """Vectorized maximum-likelihood detection over whole frames.

    Args:
        z: (frames, G, D) equalized symbols.

    Returns:
        (frames, bits_per_frame) hard bit decisions.
    """
    z = np.asarray(z, dtype=complex)
    frames = z.shape[0]
    if z.shape != (frames, cfg.groups, cfg.group_size):
        raise ConfigurationError("bad frame symbol shape")
    const = qam_constellation(cfg.constellation_order)
    k = bits_per_symbol(cfg.constellation_order)
    dist = np.abs(z[..., None] - const) ** 2  # (F, G, D, Q)
    best_sym = np.argmin(dist, axis=-1)
    best_dist = np.take_along_axis(dist, best_sym[..., None], axis=-1)[..., 0]
    b1 = cfg.index_bits

    if b1 == 0:
        chosen = best_sym
        ranks = None
    else:
        nulls, active_table = _pattern_tables(cfg)
        null_cost = np.abs(z) ** 2
        # cost(r) = sum_active best_dist + sum_null |z|^2
        sum_best = np.sum(best_dist, axis=-1, keepdims=True)
        per_pattern = (
            sum_best
            - np.sum(best_dist[:, :, nulls], axis=-1)
            + np.sum(null_cost[:, :, nulls], axis=-1)
        )  # (F, G, n_patterns)
        ranks = np.argmin(per_pattern, axis=-1)  # first minimum = lowest rank
        chosen = np.take_along_axis(best_sym, active_table[ranks], axis=2)

    bits = np.zeros((frames, cfg.groups, cfg.bits_per_group), dtype=np.int8)
    if b1 > 0:
        for j in range(b1):
            bits[:, :, j] = (ranks >> (b1 - 1 - j)) & 1
    sym_bits = np.zeros(chosen.shape + (k,), dtype=np.int8)
    for j in range(k):
        sym_bits[..., j] = (chosen >> (k - 1 - j)) & 1
    bits[:, :, b1:] = sym_bits.reshape(frames, cfg.groups, -1)
    return bits.reshape(frames, -1)


# ---------------------------------------------------------------------------
# DFT spreading and interleaving
# ---------------------------------------------------------------------------


def dft_spread(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unitary spreading transform along ``axis`` (energy preserving)."""
    return np.fft.ifft(np.asarray(x, dtype=complex), axis=axis, norm="ortho")


def dft_despread(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Exact inverse of :func:`dft_spread`."""
    return np.fft.fft(np.asarray(x, dtype=complex), axis=axis, norm="ortho")


def interleave_perm(groups: int, group_size: int) -> np.ndarray:
    """Index map: grid-vector position i takes band (i % G), element (i // G)."""
    mn = groups * group_size
    i = np.arange(mn)
    return (i % groups) * group_size + (i // groups)


def interleave_vec(bands: np.ndarray, groups: int, group_size: int) -> np.ndarray:
    """Stride-interleave band-major data (..., G*D) into grid vectors."""
    bands = np.asarray(bands)
    if bands.shape[-1] != groups * group_size:
        raise ConfigurationError("band vector length must be G*D")
    return bands[..., interleave_perm(groups, group_size)]


def deinterleave_vec(vec: np.ndarray, groups: int, group_size: int) -> np.ndarray:
    """Inverse of :func:`interleave_vec`."""
    vec = np.asarray(vec)
    if vec.shape[-1] != groups * group_size:
        raise ConfigurationError("grid vector length must be G*D")
    out = np.empty_like(vec)
    out[..., interleave_perm(groups, group_size)] = vec
    return out


def interleave(subblocks: np.ndarray, m: int, n: int) -> np.ndarray:
    """Place a (G, D) subblock stack onto the M x N grid."""
    subblocks = np.asarray(subblocks, dtype=complex)
    g, d = subblocks.shape
    if g * d != m * n:
        raise ConfigurationError("G*D must equal M*N")
    return vec_to_grid(interleave_vec(subblocks.reshape(-1), g, d), m, n)


def deinterleave(grid: np.ndarray, groups: int) -> np.ndarray:
    """Inverse of :func:`interleave`; returns the (G, D) stack."""
    grid = np.asarray(grid, dtype=complex)
    mn = grid.size
    if mn % groups:
        raise ConfigurationError("groups must divide M*N")
    d = mn // groups
    return deinterleave_vec(grid_to_vec(grid), groups, d).reshape(groups, d)


# ---------------------------------------------------------------------------
# Throughput accounting
# ---------------------------------------------------------------------------


def spectral_efficiency(cfg: IMConfig, grid: tuple[int, int] | None = None) -> float:
    """Bits per grid slot (= bits/s/Hz for unit-rate signaling), exact.

    Computed with rational arithmetic before the final float conversion.
    """
    if grid is not None and grid[0] * grid[1] != cfg.groups * cfg.group_size:
        raise ConfigurationError("config does not tile the given grid")
    se = Fraction(cfg.bits_per_group, cfg.group_size)
    return float(se)
