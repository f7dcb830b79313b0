"""LDPC coding and soft-decision demapping.

The parity-check matrix comes either from a progressive-edge-growth style
construction (regular column weight 3, 4-cycle free, deterministic under a
seed) or from an alist-format text file. Decoding is flooding sum-product
with the tanh rule, vectorized over codewords.

LLR convention throughout: positive means bit 1 is more likely. Magnitudes
are clamped at 40, which never flips a hard decision.

The per-group soft demapper evaluates the exact log-sum over the joint
(null pattern, symbol vector) hypothesis space of one index-modulation
group, including a-priori terms from the channel decoder, and returns
extrinsic values (each bit's own prior is excluded). A max-log variant is
available by flag.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError
from .im import IMConfig, bits_per_symbol, map_frames, symbol_bit_table

LLR_CLAMP = 40.0


def clamp_llr(values: np.ndarray) -> np.ndarray:
    """Clip LLR magnitudes at the working limit (sign preserving)."""
    return np.clip(values, -LLR_CLAMP, LLR_CLAMP)


# ---------------------------------------------------------------------------
# Code construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LdpcCode:
    """Binary LDPC code with a systematic-after-permutation encoder.

    Attributes:
        h: (n-k, n) parity-check matrix over GF(2), uint8.
        info_positions: column indices carrying information bits.
        parity_positions: pivot columns solved by the encoder.
        parity_map: (n-k, k) GF(2) matrix with parity = parity_map @ info.
    """

    h: np.ndarray
    info_positions: np.ndarray
    parity_positions: np.ndarray
    parity_map: np.ndarray

    @property
    def n(self) -> int:
        return self.h.shape[1]

    @property
    def k(self) -> int:
        return self.info_positions.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n


def _gf2_rref(h: np.ndarray):
    """Reduced row echelon form over GF(2); returns (rref, pivot_cols)."""
    a = h.copy().astype(np.uint8)
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        hit = np.nonzero(a[r:, c])[0]
        if hit.size == 0:
            continue
        piv = r + hit[0]
        if piv != r:
            a[[r, piv]] = a[[piv, r]]
        others = np.nonzero(a[:, c])[0]
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(c)
        r += 1
    return a, np.array(pivots, dtype=int)


def _make_encoder(h: np.ndarray) -> LdpcCode:
    rref, pivots = _gf2_rref(h)
    rank = pivots.shape[0]
    if rank < h.shape[0]:
        raise ConfigurationError("parity-check matrix is row-rank deficient")
    info = np.setdiff1d(np.arange(h.shape[1]), pivots)
    # In RREF the pivot columns are identity, so parity = A @ info over GF(2).
    parity_map = rref[:, info].astype(np.uint8)
    return LdpcCode(
        h=h.astype(np.uint8),
        info_positions=info,
        parity_positions=pivots,
        parity_map=parity_map,
    )


def _peg_attempt(n: int, m: int, col_weight: int, rng: np.random.Generator):
    """One progressive-edge-growth pass; returns H or None on a 4-cycle."""
    var_adj = [[] for _ in range(n)]
    chk_adj = [[] for _ in range(m)]
    chk_deg = np.zeros(m, dtype=int)

    for v in range(n):
        for _ in range(col_weight):
            # BFS from v over the current graph to find the set of checks
            # within distance 3 (connecting to any of them closes a 4-cycle).
            near = set(var_adj[v])
            vars_seen = {v}
            for c in var_adj[v]:
                vars_seen.update(chk_adj[c])
            for v2 in vars_seen:
                near.update(var_adj[v2])
            candidates = [c for c in range(m) if c not in near]
            if not candidates:
                return None
            degs = chk_deg[candidates]
            best = [c for c, d in zip(candidates, degs) if d == degs.min()]
            c = int(rng.choice(best))
            var_adj[v].append(c)
            chk_adj[c].append(v)
            chk_deg[c] += 1

    h = np.zeros((m, n), dtype=np.uint8)
    for c in range(m):
        h[c, chk_adj[c]] = 1
    return h


def ldpc_build(n: int, rate: float, seed: int = 0, col_weight: int = 3) -> LdpcCode:
    """Construct a regular-column-weight code, 4-cycle free, full rank.

    Deterministic under ``seed``; internally retries with derived seeds when
    an attempt produces a rank-deficient matrix.
    """
    if not (0 < rate < 1):
        raise ConfigurationError("rate must lie in (0, 1)")
    k = n * rate
    if abs(k - round(k)) > 1e-9:
        raise ConfigurationError("n * rate must be an integer")
    m = n - int(round(k))
    if col_weight >= m:
        raise ConfigurationError("infeasible degree profile")
    for attempt in range(32):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt)))
        h = _peg_attempt(n, m, col_weight, rng)
        if h is None:
            continue
        try:
            code = _make_encoder(h)
        except ConfigurationError:
            continue
        return code
    raise ConfigurationError("could not build a full-rank 4-cycle-free code")


def ldpc_from_matrix(h: np.ndarray) -> LdpcCode:
    """Wrap an explicit full-row-rank parity-check matrix."""
    return _make_encoder(np.asarray(h, dtype=np.uint8))


def has_four_cycle(h: np.ndarray) -> bool:
    """True if any two rows of H share more than one column."""
    h = h.astype(np.int64)
    overlap = h @ h.T
    np.fill_diagonal(overlap, 0)
    return bool(np.any(overlap > 1))


def save_alist(path, h: np.ndarray) -> None:
    """Write a parity-check matrix in the standard alist text format."""
    h = np.asarray(h, dtype=np.uint8)
    m, n = h.shape
    col_idx = [list(np.nonzero(h[:, j])[0] + 1) for j in range(n)]
    row_idx = [list(np.nonzero(h[i, :])[0] + 1) for i in range(m)]
    dmax_c = max(len(c) for c in col_idx)
    dmax_r = max(len(r) for r in row_idx)
    with open(path, "w") as fh:
        fh.write(f"{n} {m}\n{dmax_c} {dmax_r}\n")
        fh.write(" ".join(str(len(c)) for c in col_idx) + "\n")
        fh.write(" ".join(str(len(r)) for r in row_idx) + "\n")
        for c in col_idx:
            fh.write(" ".join(str(x) for x in c + [0] * (dmax_c - len(c))) + "\n")
        for r in row_idx:
            fh.write(" ".join(str(x) for x in r + [0] * (dmax_r - len(r))) + "\n")


def load_alist(path) -> LdpcCode:
    """Read an alist file and wire up the encoder."""
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    n, m = int(next(it)), int(next(it))
    dmax_c, _ = int(next(it)), int(next(it))
    col_deg = [int(next(it)) for _ in range(n)]
    _ = [int(next(it)) for _ in range(m)]
    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        for _ in range(dmax_c):
            v = int(next(it))
            if v:
                h[v - 1, j] = 1
        if np.count_nonzero(h[:, j]) != col_deg[j]:
            raise ConfigurationError(f"alist column {j} degree mismatch")
    return _make_encoder(h)


# ---------------------------------------------------------------------------
# Encode / decode
# ---------------------------------------------------------------------------


def ldpc_encode(bits: np.ndarray, code: LdpcCode) -> np.ndarray:
    """Systematic encoding; output satisfies every parity check."""
    bits = np.asarray(bits, dtype=np.uint8)
    single = bits.ndim == 1
    bits = np.atleast_2d(bits)
    if bits.shape[1] != code.k:
        raise ConfigurationError(f"expected {code.k} info bits, got {bits.shape[1]}")
    cw = np.zeros((bits.shape[0], code.n), dtype=np.uint8)
    cw[:, code.info_positions] = bits
    cw[:, code.parity_positions] = (bits @ code.parity_map.T) % 2
    return cw[0] if single else cw


def syndrome_ok(codewords: np.ndarray, code: LdpcCode) -> np.ndarray:
    cw = np.atleast_2d(np.asarray(codewords, dtype=np.uint8))
    return ~np.any((cw @ code.h.T) % 2, axis=1)


class _DecoderGraph:
    """Edge bookkeeping for the flooding schedule, built once per code."""

    def __init__(self, code: LdpcCode):
        chk, var = np.nonzero(code.h)
        order = np.lexsort((var, chk))
        self.edge_chk = chk[order]
        self.edge_var = var[order]
        self.n_edges = self.edge_var.size
        self.chk_starts = np.searchsorted(self.edge_chk, np.arange(code.h.shape[0]))
        self.by_var = np.argsort(self.edge_var, kind="stable")
        var_sorted = self.edge_var[self.by_var]
        self.var_starts = np.searchsorted(var_sorted, np.arange(code.h.shape[1]))


_GRAPH_CACHE: "weakref.WeakKeyDictionary[LdpcCode, _DecoderGraph]" = (
    weakref.WeakKeyDictionary()
)


def _graph(code: LdpcCode) -> _DecoderGraph:
    graph = _GRAPH_CACHE.get(code)
    if graph is None:
        graph = _DecoderGraph(code)
        _GRAPH_CACHE[code] = graph
    return graph


def ldpc_decode(
    llrs: np.ndarray,
    code: LdpcCode,
    max_iters: int = 50,
    early_stop: bool = True,
):
    """Sum-product decoding (flooding schedule, tanh rule).

    Args:
        llrs: (n,) or (batch, n) channel LLRs, positive meaning bit 1.
        code: the code.
        max_iters: belief-propagation iteration cap.
        early_stop: stop a codeword once its syndrome is zero.

    Returns:
        (bits, converged, iters, posterior): hard decisions with the input's
        shape, a per-codeword convergence flag, iterations used, and the
        posterior LLRs (same convention as the input).
    """
    llrs = np.asarray(llrs, dtype=float)
    single = llrs.ndim == 1
    lam = -np.atleast_2d(llrs).T  # internal sign: positive favours bit 0
    if lam.shape[0] != code.n:
        raise ConfigurationError("LLR length must equal the block length")
    g = _graph(code)
    batch = lam.shape[1]
    v2c = lam[g.edge_var, :].copy()
    iters_used = 0
    post = lam.copy()
    frozen_post = lam.copy()
    done = np.zeros(batch, dtype=bool)

    for it in range(1, max_iters + 1):
        t = np.tanh(0.5 * v2c)
        sign = np.where(t < 0, -1.0, 1.0)
        mag = np.clip(np.abs(t), 1e-12, 1.0 - 1e-15)
        t = sign * mag
        prod = np.multiply.reduceat(t, g.chk_starts, axis=0)
        loo = np.clip(prod[g.edge_chk, :] / t, -1.0 + 1e-15, 1.0 - 1e-15)
        c2v = 2.0 * np.arctanh(loo)

        acc = np.add.reduceat(c2v[g.by_var, :], g.var_starts, axis=0)
        post = lam + acc
        v2c = post[g.edge_var, :] - c2v

        iters_used = it
        if early_stop:
            bits_now = (post < 0).astype(np.uint8)
            ok_now = syndrome_ok(bits_now.T, code)
            newly = ok_now & ~done
            frozen_post[:, newly] = post[:, newly]
            done |= ok_now
            if np.all(done):
                break
    post = np.where(done[None, :], frozen_post, post)
    bits = (post < 0).astype(np.uint8).T
    converged = syndrome_ok(bits, code)
    posterior = -post.T
    if single:
        return bits[0], bool(converged[0]), iters_used, posterior[0]
    return bits, converged, iters_used, posterior


# ---------------------------------------------------------------------------
# Soft demapping
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _group_candidates(cfg: IMConfig):
    """(bit matrix, symbol matrix) over the full 2^b group hypothesis space."""
    single = IMConfig(
        groups=1,
        group_size=cfg.group_size,
        null_count=cfg.null_count,
        constellation_order=cfg.constellation_order,
        dft_spread=False,
        scheme=cfg.scheme,
    )
    b = single.bits_per_group
    count = 2**b
    ints = np.arange(count, dtype=np.int64)
    bits = ((ints[:, None] >> (b - 1 - np.arange(b))) & 1).astype(np.int8)
    symbols = map_frames(bits, single)[:, 0, :]
    return bits, symbols


def soft_demap_group(
    y_g: np.ndarray,
    h_g: np.ndarray,
    n0: float,
    cfg: IMConfig,
    priors: np.ndarray | None = None,
    max_log: bool = False,
) -> np.ndarray:
    """Extrinsic LLRs of one group's bits from the exact hypothesis sum.

    Args:
        y_g: (D,) received slice of this group's grid positions.
        h_g: (D, D) channel restricted to those positions (any linear
            pre-coding such as DFT spreading folded in by the caller).
        n0: noise variance.
        cfg: group layout; the hypothesis space is every addressed null
            pattern crossed with every symbol combination.
        priors: (bits_per_group,) a-priori LLRs from the decoder, zeros if
            absent.
        max_log: replace log-sum-exp by max.

    Returns:
        (bits_per_group,) extrinsic LLRs, clamped at +-40.
    """
    y_g = np.asarray(y_g, dtype=complex)
    h_g = np.asarray(h_g, dtype=complex)
    if n0 <= 0:
        raise ConfigurationError("n0 must be positive for soft demapping")
    bits, symbols = _group_candidates(cfg)
    b = bits.shape[1]
    if priors is None:
        priors = np.zeros(b)
    priors = clamp_llr(np.asarray(priors, dtype=float))
    resid = y_g[None, :] - symbols @ h_g.T
    metric = -np.sum(np.abs(resid) ** 2, axis=1) / n0 + bits @ priors

    out = np.empty(b)
    for l in range(b):
        one = metric[bits[:, l] == 1]
        zero = metric[bits[:, l] == 0]
        if one.size == 0 or zero.size == 0:
            raise ConfigurationError("hypothesis set empty for a bit; bad config")
        if max_log:
            out[l] = np.max(one) - np.max(zero) - priors[l]
        else:
            out[l] = (_lse(one) - _lse(zero)) - priors[l]
    return clamp_llr(out)


def _lse(values: np.ndarray) -> float:
    peak = np.max(values)
    return float(peak + np.log(np.sum(np.exp(values - peak))))


def probs_to_llr(probs: np.ndarray, order: int) -> np.ndarray:
    """Per-bit LLRs from per-slot symbol probabilities under Gray labels.

    Args:
        probs: (..., Q) rows of symbol probabilities.
        order: constellation order Q.

    Returns:
        (..., log2 Q) LLRs, positive meaning bit 1, clamped at +-40.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != order:
        raise ConfigurationError("probability rows must have Q entries")
    table = symbol_bit_table(order)  # (Q, k)
    k = table.shape[1]
    out = np.empty(probs.shape[:-1] + (k,))
    for j in range(k):
        p1 = np.sum(probs[..., table[:, j] == 1], axis=-1)
        p0 = np.sum(probs[..., table[:, j] == 0], axis=-1)
        if np.any((p1 <= 0) & (p0 <= 0)):
            warnings.warn("degenerate all-zero bit marginal; emitting clamped zero-evidence LLR")
        with np.errstate(divide="ignore"):
            out[..., j] = np.log(p1) - np.log(p0)
    return clamp_llr(np.nan_to_num(out, nan=0.0, posinf=LLR_CLAMP, neginf=-LLR_CLAMP))


# ---------------------------------------------------------------------------
# Iterative detection
# ---------------------------------------------------------------------------


def group_positions(cfg: IMConfig, g: int) -> np.ndarray:
    """Grid-vector positions owned by group ``g`` under stride interleaving."""
    return np.arange(cfg.group_size) * cfg.groups + g


def spreading_matrix(d: int) -> np.ndarray:
    """Dense matrix of the unitary spreading transform on length-d vectors."""
    return np.fft.ifft(np.eye(d), axis=0, norm="ortho")


def iterate_detection(
    y,
    h,
    n0: float,
    cfg: IMConfig,
    code: LdpcCode,
    i0: int,
    interleaver: np.ndarray | None = None,
    inner_iters: int = 10,
    max_log: bool = False,
):
    """Joint demapper/decoder iteration over one codeword.

    Args:
        y: received grid vector(s), (MN,) or (frames, MN), unequalized.
        h: matching grid-domain channel matrix or (frames, MN, MN) stack.
        n0: noise variance.
        cfg: group layout used at the transmitter.
        code: LDPC code; ``code.n`` must equal frames * bits_per_frame.
        i0: demapper <-> decoder exchange rounds (>= 1).
        interleaver: permutation from code order to transmit order
            (transmit[i] = coded[interleaver[i]]); identity if None.
        inner_iters: belief-propagation iterations per round.
        max_log: passed through to the demapper.

    Returns:
        (info_bits, converged): hard info-bit decisions and whether the
        final codeword satisfied all parity checks.
    """
    if i0 < 1:
        raise ConfigurationError("need at least one detection round")
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    h = np.asarray(h, dtype=complex)
    if h.ndim == 2:
        h = h[None, :, :]
    frames = y.shape[0]
    if frames * cfg.bits_per_frame != code.n:
        raise ConfigurationError("codeword length must tile the frames exactly")
    if interleaver is None:
        interleaver = np.arange(code.n)
    interleaver = np.asarray(interleaver, dtype=int)

    spread = spreading_matrix(cfg.group_size) if cfg.dft_spread else None
    # Per (frame, group): received slice and restricted channel.
    slices = []
    for f in range(frames):
        for g in range(cfg.groups):
            pos = group_positions(cfg, g)
            h_g = h[f][np.ix_(pos, pos)]
            if spread is not None:
                h_g = h_g @ spread
            slices.append((y[f, pos], h_g))

    bpg = cfg.bits_per_group
    priors_tx = np.zeros(code.n)
    decoder_in = np.zeros(code.n)
    converged = False
    info_bits = np.zeros(code.k, dtype=np.uint8)

    for _ in range(i0):
        extrinsic_tx = np.empty(code.n)
        for idx, (y_g, h_g) in enumerate(slices):
            sl = slice(idx * bpg, (idx + 1) * bpg)
            extrinsic_tx[sl] = soft_demap_group(
                y_g, h_g, n0, cfg, priors_tx[sl], max_log=max_log
            )
        decoder_in = np.empty(code.n)
        decoder_in[interleaver] = extrinsic_tx
        bits, ok, _, posterior = ldpc_decode(decoder_in, code, inner_iters)
        info_bits = bits[code.info_positions]
        converged = bool(ok)
        if converged:
            break
        priors_tx = clamp_llr(posterior - decoder_in)[interleaver]

    return info_bits, converged
