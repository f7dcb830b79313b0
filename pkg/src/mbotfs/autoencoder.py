"""Multi-band autoencoder wrapped around the delay-Doppler pipeline.

Each band owns a small MLP encoder (FC -> BN -> ReLU -> FC -> FC, then a
pairing of reals into complex symbols and an exact power normalization) and
a decoder (three FC -> BN -> ReLU stages and a linear head). Encoded bands
are stride-interleaved onto the grid, modulated, passed through a fixed
per-batch channel plus noise, demodulated, MMSE-equalized and de-interleaved
before decoding. The decoder additionally sees the per-slot channel power of
its band.

The decoder head is either ``"hd"`` (regression back to the band symbols)
or ``"sd"`` (per-slot softmax over the constellation). Training follows a
two-step schedule: a pretraining phase on the data term alone, then a joint
phase on data term + eta * peak-power term, both under Adam.

All gradients are hand-derived; every loss evaluation is a pure function of
(parameters, batch, channel, noise), which the test-suite exploits for
finite-difference verification. Complex gradients use the real-pair
convention of :mod:`mbotfs.layers`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    TrainingDivergedError,
)
from .im import (
    IMConfig,
    deinterleave_vec,
    dft_spread,
    interleave_vec,
    map_frames,
    qam_constellation,
)
from .layers import (
    adam_init,
    adam_step,
    batch_norm_forward,
    batch_norm_backward,
    batch_norm_backward_eval,
    glorot_uniform,
    linear_backward,
    linear_forward,
    loss_cross_entropy,
    loss_papr,
    loss_papr_grad,
    loss_reconstruction,
    loss_reconstruction_grad,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
    softmax_rows,
    total_loss,
)
from .otfs import demodulate_vec, mmse_filter, modulate_vec
from .papr import oversample, oversample_adjoint

HD = "hd"
SD = "sd"

CHECKPOINT_VERSION = 1
POWER_EPS = 1e-30


@dataclass(frozen=True)
class AEConfig:
    """Architecture of the multi-band autoencoder."""

    m: int
    n: int
    bands: int
    head: str = HD
    constellation_order: int = 4
    hidden_enc: tuple | None = None
    hidden_dec: tuple | None = None
    eta: float = 0.0
    share_weights: bool = False
    power_norm_per_batch: bool = False
    papr_loss_mode: str = "batch_max"
    papr_oversampling: int = 4
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if (self.m * self.n) % self.bands:
            raise ConfigurationError("bands must divide M*N")
        if self.head not in (HD, SD):
            raise ConfigurationError(f"unknown head {self.head!r}")
        if self.eta < 0:
            raise ConfigurationError("eta must be >= 0")
        if self.papr_loss_mode not in ("batch_max", "frame_mean"):
            raise ConfigurationError(f"unknown PAPR loss mode {self.papr_loss_mode!r}")
        if self.papr_oversampling < 1:
            raise ConfigurationError("papr_oversampling must be >= 1")
        if self.hidden_enc is None:
            object.__setattr__(self, "hidden_enc", (4 * self.band_dim, 4 * self.band_dim))
        if self.hidden_dec is None:
            object.__setattr__(
                self, "hidden_dec",
                (6 * self.band_dim, 6 * self.band_dim, 4 * self.band_dim),
            )
        if len(self.hidden_enc) != 2 or len(self.hidden_dec) != 3:
            raise ConfigurationError("encoder needs 2 hidden widths, decoder 3")
        if min(self.hidden_enc) < 1 or min(self.hidden_dec) < 1:
            raise ConfigurationError("hidden widths must be positive")

    @property
    def band_slots(self) -> int:
        """Complex grid slots per band."""
        return (self.m * self.n) // self.bands

    @property
    def band_dim(self) -> int:
        """Real input width per band (interleaved real/imag parts)."""
        return 2 * self.band_slots

    @property
    def decoder_out_dim(self) -> int:
        if self.head == HD:
            return self.band_dim
        return self.band_slots * self.constellation_order


@dataclass(frozen=True)
class TrainConfig:
    """Two-step training schedule."""

    k1: int
    k2: int
    lr: float = 1e-3
    batch: int = 200
    samples: int = 80_000
    train_snr_db: float | tuple = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0:
            raise ConfigurationError("iteration counts must be >= 0")
        if self.lr <= 0 or self.batch < 2 or self.samples < self.batch:
            raise ConfigurationError("need lr > 0 and samples >= batch >= 2")

    def draw_noise_var(self, rng: np.random.Generator) -> float:
        """Noise variance for one batch; mixed-SNR draws uniformly in dB."""
        snr = self.train_snr_db
        if isinstance(snr, tuple):
            snr = rng.uniform(snr[0], snr[1])
        return float(10.0 ** (-snr / 10.0))


# ---------------------------------------------------------------------------
# Channel operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelOp:
    """Fixed linear channel + MMSE equalizer for one training batch.

    ``h_dd`` is the true grid-domain channel; ``h_rx`` is the receiver's
    (possibly perturbed) estimate used to build the equalizer and the
    decoder's channel-power features.
    """

    m: int
    n: int
    groups: int
    h_dd: np.ndarray
    h_rx: np.ndarray
    n0: float
    w: np.ndarray
    pow_features: np.ndarray  # (G, B) real

    @classmethod
    def create(cls, h_dd, m, n, groups, n0, h_rx=None) -> "ChannelOp":
        h_dd = np.asarray(h_dd, dtype=complex)
        h_rx = h_dd if h_rx is None else np.asarray(h_rx, dtype=complex)
        w = mmse_filter(h_rx, n0)
        feats = deinterleave_vec(np.abs(np.diag(h_rx)) ** 2, groups, (m * n) // groups)
        return cls(
            m=m, n=n, groups=groups, h_dd=h_dd, h_rx=h_rx, n0=n0, w=w,
            pow_features=feats.reshape(groups, -1),
        )

    @classmethod
    def identity(cls, m, n, groups, n0) -> "ChannelOp":
        return cls.create(np.eye(m * n, dtype=complex), m, n, groups, n0)

    def transmit(self, e_flat: np.ndarray, noise: np.ndarray):
        """Bands -> grid -> time frame -> channel -> equalized bands.

        Args:
            e_flat: (batch, M*N) band-major encoded symbols.
            noise: (batch, M*N) grid-domain noise realization.

        Returns:
            (z_flat, s_td): equalized band-major symbols and the transmit
            time-domain frames (for peak-power evaluation).
        """
        s_grid = interleave_vec(e_flat, self.groups, e_flat.shape[-1] // self.groups)
        s_td = modulate_vec(s_grid, self.m, self.n)
        y_grid = s_grid @ self.h_dd.T + noise
        z_grid = y_grid @ self.w.T
        z_flat = deinterleave_vec(z_grid, self.groups, e_flat.shape[-1] // self.groups)
        return z_flat, s_td

    def backward(self, g_z_flat: np.ndarray, g_s_td: np.ndarray | None) -> np.ndarray:
        """Adjoint of :meth:`transmit` back to the encoded bands."""
        d = g_z_flat.shape[-1] // self.groups
        g_z_grid = interleave_vec(g_z_flat, self.groups, d)
        g_s_grid = (g_z_grid @ self.w.conj()) @ self.h_dd.conj()
        if g_s_td is not None:
            g_s_grid = g_s_grid + demodulate_vec(g_s_td, self.m, self.n)
        return deinterleave_vec(g_s_grid, self.groups, d)

    def draw_noise(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        mn = self.m * self.n
        if self.n0 == 0:
            return np.zeros((batch, mn), dtype=complex)
        return np.sqrt(self.n0 / 2.0) * (
            rng.standard_normal((batch, mn)) + 1j * rng.standard_normal((batch, mn))
        )


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

_BN_KEYS = (
    ("e_bn1", "enc"),
    ("d_bn1", "dec"),
    ("d_bn2", "dec"),
    ("d_bn3", "dec"),
)


def init_band_params(cfg: AEConfig, rng: np.random.Generator) -> dict:
    q1e, q2e = cfg.hidden_enc
    q1d, q2d, q3d = cfg.hidden_dec
    din = cfg.band_dim
    fin = 3 * cfg.band_slots
    p = {
        "eW1": glorot_uniform(rng, din, q1e), "eb1": np.zeros(q1e),
        "eg1": np.ones(q1e), "ebe1": np.zeros(q1e),
        "eW2": glorot_uniform(rng, q1e, q2e), "eb2": np.zeros(q2e),
        "eW3": glorot_uniform(rng, q2e, din), "eb3": np.zeros(din),
        "dW1": glorot_uniform(rng, fin, q1d), "db1": np.zeros(q1d),
        "dg1": np.ones(q1d), "dbe1": np.zeros(q1d),
        "dW2": glorot_uniform(rng, q1d, q2d), "db2": np.zeros(q2d),
        "dg2": np.ones(q2d), "dbe2": np.zeros(q2d),
        "dW3": glorot_uniform(rng, q2d, q3d), "db3": np.zeros(q3d),
        "dg3": np.ones(q3d), "dbe3": np.zeros(q3d),
        "dW4": glorot_uniform(rng, q3d, cfg.decoder_out_dim),
        "db4": np.zeros(cfg.decoder_out_dim),
    }
    return p


def init_band_state(cfg: AEConfig) -> dict:
    q1e, _ = cfg.hidden_enc
    q1d, q2d, q3d = cfg.hidden_dec
    st = {}
    for name, width in (("e_bn1", q1e), ("d_bn1", q1d), ("d_bn2", q2d), ("d_bn3", q3d)):
        st[f"{name}_mean"] = np.zeros(width)
        st[f"{name}_var"] = np.ones(width)
    return st


def init_params(cfg: AEConfig, rng: np.random.Generator):
    """(params, state): per-band dicts, or single shared dicts."""
    n_sets = 1 if cfg.share_weights else cfg.bands
    params = [init_band_params(cfg, rng) for _ in range(n_sets)]
    state = [init_band_state(cfg) for _ in range(n_sets)]
    return params, state


def _band_param(params, cfg, g):
    return params[0] if cfg.share_weights else params[g]


def flatten_params(params) -> dict:
    return {f"band{i}.{k}": v for i, p in enumerate(params) for k, v in p.items()}


def unflatten_params(flat: dict, n_sets: int) -> list:
    params = [dict() for _ in range(n_sets)]
    for name, v in flat.items():
        band, key = name.split(".", 1)
        params[int(band[4:])][key] = v
    return params


# ---------------------------------------------------------------------------
# Band networks
# ---------------------------------------------------------------------------


def _split_complex(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x.real, x.imag], axis=-1)


def _join_complex(u: np.ndarray) -> np.ndarray:
    half = u.shape[-1] // 2
    return u[..., :half] + 1j * u[..., half:]


def power_normalize(c: np.ndarray, per_batch: bool):
    """Scale complex symbols to unit mean power; returns (out, cache)."""
    if per_batch:
        p = np.mean(np.abs(c) ** 2)
        if p < POWER_EPS:
            raise DegenerateInputError("all-zero encoder output cannot be normalized")
        return c / np.sqrt(p), (c, p)
    p = np.mean(np.abs(c) ** 2, axis=-1, keepdims=True)
    if np.any(p < POWER_EPS):
        raise DegenerateInputError("all-zero encoder output cannot be normalized")
    return c / np.sqrt(p), (c, p)


def power_normalize_backward(g: np.ndarray, cache, per_batch: bool) -> np.ndarray:
    c, p = cache
    if per_batch:
        size = c.size
        s = np.sum(np.real(np.conj(g) * c))
        return g / np.sqrt(p) - c * (s / (size * p**1.5))
    slots = c.shape[-1]
    s = np.sum(np.real(np.conj(g) * c), axis=-1, keepdims=True)
    return g / np.sqrt(p) - c * (s / (slots * p**1.5))


def encoder_forward(x_band, p, st, cfg: AEConfig, mode: str):
    """One band's encoder: complex (batch, B) -> complex (batch, B), unit power.

    Returns (e, cache, state_updates).
    """
    u = _split_complex(np.asarray(x_band, dtype=complex))
    a1, c_l1 = linear_forward(u, p["eW1"], p["eb1"])
    h1, c_bn, nm, nv = batch_norm_forward(
        a1, p["eg1"], p["ebe1"], cfg.bn_eps, mode,
        st["e_bn1_mean"], st["e_bn1_var"], cfg.bn_momentum,
    )
    r1, c_relu = relu_forward(h1)
    a2, c_l2 = linear_forward(r1, p["eW2"], p["eb2"])
    a3, c_l3 = linear_forward(a2, p["eW3"], p["eb3"])
    c = _join_complex(a3)
    e, c_pn = power_normalize(c, cfg.power_norm_per_batch)
    cache = (c_l1, c_bn, c_relu, c_l2, c_l3, c_pn, mode)
    return e, cache, {"e_bn1_mean": nm, "e_bn1_var": nv}


def encoder_backward(g_e, cache, cfg: AEConfig):
    c_l1, c_bn, c_relu, c_l2, c_l3, c_pn, mode = cache
    g_c = power_normalize_backward(g_e, c_pn, cfg.power_norm_per_batch)
    g_a3 = _split_complex(g_c)
    g_a2, gW3, gb3 = linear_backward(g_a3, c_l3)
    g_r1, gW2, gb2 = linear_backward(g_a2, c_l2)
    g_h1 = relu_backward(g_r1, c_relu)
    bn_back = batch_norm_backward if mode == "train" else batch_norm_backward_eval
    g_a1, gg1, gbe1 = bn_back(g_h1, c_bn)
    _, gW1, gb1 = linear_backward(g_a1, c_l1)
    return {
        "eW1": gW1, "eb1": gb1, "eg1": gg1, "ebe1": gbe1,
        "eW2": gW2, "eb2": gb2, "eW3": gW3, "eb3": gb3,
    }


def decoder_forward(z_band, pow_feat, p, st, cfg: AEConfig, mode: str):
    """One band's decoder.

    Args:
        z_band: complex (batch, B) equalized symbols.
        pow_feat: (B,) per-slot channel power of this band.

    Returns:
        (out, cache, state_updates) where ``out`` is complex (batch, B) for
        the hard-decision head or (batch, B, Q) softmax probabilities for
        the soft-decision head.
    """
    z_band = np.asarray(z_band, dtype=complex)
    batch = z_band.shape[0]
    f = np.concatenate(
        [z_band.real, z_band.imag, np.broadcast_to(pow_feat, (batch, pow_feat.shape[-1]))],
        axis=-1,
    )
    caches = []
    x = f
    upd = {}
    for i in (1, 2, 3):
        a, c_l = linear_forward(x, p[f"dW{i}"], p[f"db{i}"])
        h, c_bn, nm, nv = batch_norm_forward(
            a, p[f"dg{i}"], p[f"dbe{i}"], cfg.bn_eps, mode,
            st[f"d_bn{i}_mean"], st[f"d_bn{i}_var"], cfg.bn_momentum,
        )
        r, c_relu = relu_forward(h)
        caches.append((c_l, c_bn, c_relu))
        upd[f"d_bn{i}_mean"] = nm
        upd[f"d_bn{i}_var"] = nv
        x = r
    out_lin, c_l4 = linear_forward(x, p["dW4"], p["db4"])
    if cfg.head == HD:
        out = _join_complex(out_lin)
        head_cache = None
    else:
        logits = out_lin.reshape(batch, cfg.band_slots, cfg.constellation_order)
        out = softmax_rows(logits)
        head_cache = logits
    cache = (caches, c_l4, head_cache, mode)
    return out, cache, upd


def decoder_backward(g_out_lin, cache, cfg: AEConfig):
    """Backward from the gradient at the last linear layer's output."""
    caches, c_l4, _, mode = cache
    g, gW4, gb4 = linear_backward(g_out_lin, c_l4)
    grads = {"dW4": gW4, "db4": gb4}
    bn_back = batch_norm_backward if mode == "train" else batch_norm_backward_eval
    for i in (3, 2, 1):
        c_l, c_bn, c_relu = caches[i - 1]
        g = relu_backward(g, c_relu)
        g, gg, gbe = bn_back(g, c_bn)
        grads[f"dg{i}"] = gg
        grads[f"dbe{i}"] = gbe
        g, gw, gb = linear_backward(g, c_l)
        grads[f"dW{i}"] = gw
        grads[f"db{i}"] = gb
    b = cfg.band_slots
    g_z = g[:, :b] + 1j * g[:, b : 2 * b]
    grads["_g_z"] = g_z
    return grads


# ---------------------------------------------------------------------------
# End-to-end forward / gradients
# ---------------------------------------------------------------------------


def ae_forward(cfg, params, state, x_bands, chan: ChannelOp, noise, mode):
    """Full pipeline pass.

    Args:
        x_bands: complex (batch, G, B) band payload symbols.
        chan: fixed channel operator for this batch.
        noise: complex (batch, M*N) grid-domain noise.
        mode: "train" (batch statistics) or "eval" (running statistics).

    Returns:
        dict with out (per-band head outputs), s_td, caches, state updates.
    """
    x_bands = np.asarray(x_bands, dtype=complex)
    batch, g_cnt, b = x_bands.shape
    if g_cnt != cfg.bands or b != cfg.band_slots:
        raise ConfigurationError("payload shape does not match the band layout")
    e = np.empty_like(x_bands)
    enc_caches = []
    enc_upd = []
    for g in range(cfg.bands):
        p = _band_param(params, cfg, g)
        st = state[0] if cfg.share_weights else state[g]
        e_g, cache, upd = encoder_forward(x_bands[:, g, :], p, st, cfg, mode)
        e[:, g, :] = e_g
        enc_caches.append(cache)
        enc_upd.append(upd)

    z_flat, s_td = chan.transmit(e.reshape(batch, -1), noise)
    z = z_flat.reshape(batch, g_cnt, b)

    outs = []
    dec_caches = []
    dec_upd = []
    for g in range(cfg.bands):
        p = _band_param(params, cfg, g)
        st = state[0] if cfg.share_weights else state[g]
        out_g, cache, upd = decoder_forward(
            z[:, g, :], chan.pow_features[g], p, st, cfg, mode
        )
        outs.append(out_g)
        dec_caches.append(cache)
        dec_upd.append(upd)

    out = np.stack(outs, axis=1)  # (batch, G, B) or (batch, G, B, Q)
    return {
        "out": out,
        "s_td": s_td,
        "z": z,
        "enc_caches": enc_caches,
        "dec_caches": dec_caches,
        "enc_upd": enc_upd,
        "dec_upd": dec_upd,
    }


def _merge_state(cfg, state, enc_upd, dec_upd):
    new_state = []
    n_sets = 1 if cfg.share_weights else cfg.bands
    for i in range(n_sets):
        st = dict(state[i])
        # With shared weights the last band's statistics win the batch.
        src_e = enc_upd[-1] if cfg.share_weights else enc_upd[i]
        src_d = dec_upd[-1] if cfg.share_weights else dec_upd[i]
        st.update(src_e)
        st.update(src_d)
        new_state.append(st)
    return new_state


def ae_losses(cfg, out, s_td, x_bands, labels, eta):
    """Per-batch losses of one forward pass.

    Data term: mean over the batch of the summed reconstruction error (hard
    head) or the summed per-slot negative log-likelihood (soft head). The
    peak-power term is the batch-mean linear PAPR of the transmit frames.
    """
    batch = s_td.shape[0]
    if cfg.head == HD:
        data = loss_reconstruction(x_bands, out) / batch
    else:
        data = loss_cross_entropy(out, labels) / batch
    papr_term = loss_papr(oversample(s_td, cfg.papr_oversampling), cfg.papr_loss_mode)
    return {
        "data": data,
        "papr": papr_term,
        "total": total_loss(data, papr_term, eta),
    }


def ae_loss_and_grads(cfg, params, state, x_bands, labels, chan, noise, eta):
    """Losses and parameter gradients for one batch (train mode).

    Returns:
        (losses, grads, new_state) with ``grads`` mirroring the parameter
        list structure.
    """
    fw = ae_forward(cfg, params, state, x_bands, chan, noise, "train")
    batch, g_cnt, b = x_bands.shape
    losses = {}

    if cfg.head == HD:
        losses["data"] = loss_reconstruction(x_bands, fw["out"]) / batch
        g_out = loss_reconstruction_grad(x_bands, fw["out"]) / batch
        g_head_lin = None
    else:
        logits = np.stack(
            [fw["dec_caches"][g][2] for g in range(cfg.bands)], axis=1
        )
        loss_ce, g_logits, _ = softmax_cross_entropy(logits, labels)
        losses["data"] = loss_ce / batch
        g_head_lin = g_logits / batch
        g_out = None

    s_up = oversample(fw["s_td"], cfg.papr_oversampling)
    losses["papr"] = loss_papr(s_up, cfg.papr_loss_mode)
    losses["total"] = total_loss(losses["data"], losses["papr"], eta)

    if eta > 0:
        g_s_td = oversample_adjoint(
            eta * loss_papr_grad(s_up, cfg.papr_loss_mode), cfg.papr_oversampling
        )
    else:
        g_s_td = None

    n_sets = 1 if cfg.share_weights else cfg.bands
    grads = [
        {k: np.zeros_like(v) for k, v in _band_param(params, cfg, i).items()}
        for i in range(n_sets)
    ]

    g_z = np.empty((batch, g_cnt, b), dtype=complex)
    for g in range(cfg.bands):
        if cfg.head == HD:
            g_lin = _split_complex(g_out[:, g, :])
        else:
            g_lin = g_head_lin[:, g, :, :].reshape(batch, -1)
        dg = decoder_backward(g_lin, fw["dec_caches"][g], cfg)
        g_z[:, g, :] = dg.pop("_g_z")
        tgt = grads[0] if cfg.share_weights else grads[g]
        for k, v in dg.items():
            tgt[k] += v

    g_e_flat = chan.backward(g_z.reshape(batch, -1), g_s_td)
    g_e = g_e_flat.reshape(batch, g_cnt, b)

    for g in range(cfg.bands):
        eg = encoder_backward(g_e[:, g, :], fw["enc_caches"][g], cfg)
        tgt = grads[0] if cfg.share_weights else grads[g]
        for k, v in eg.items():
            tgt[k] += v

    new_state = _merge_state(cfg, state, fw["enc_upd"], fw["dec_upd"])
    return losses, grads, new_state


def ae_loss(cfg, params, state, x_bands, labels, chan, noise, eta, mode="train"):
    """Loss-only evaluation (pure; used by finite-difference checks)."""
    fw = ae_forward(cfg, params, state, x_bands, chan, noise, mode)
    return ae_losses(cfg, fw["out"], fw["s_td"], x_bands, labels, eta)


# ---------------------------------------------------------------------------
# Payload generation
# ---------------------------------------------------------------------------


def generate_payload(im_cfg: IMConfig, cfg: AEConfig, count: int,
                     rng: np.random.Generator):
    """Random frames for training or evaluation.

    Returns:
        dict with ``bits`` (count, bits_per_frame), ``x_bands`` (count, G, B)
        complex payload symbols (DFT-spread if the scheme says so) and
        ``labels`` (count, G, B) pre-spread symbol indices, -1 at nulled
        slots.
    """
    if im_cfg.groups != cfg.bands or im_cfg.group_size != cfg.band_slots:
        raise ConfigurationError("index-modulation grouping must match the band layout")
    bits = rng.integers(0, 2, (count, im_cfg.bits_per_frame)).astype(np.int8)
    symbols = map_frames(bits, im_cfg)
    const = qam_constellation(im_cfg.constellation_order)
    labels = np.argmin(np.abs(symbols[..., None] - const) ** 2, axis=-1)
    labels[symbols == 0] = -1
    x = dft_spread(symbols, axis=2) if im_cfg.dft_spread else symbols
    return {"bits": bits, "x_bands": x, "labels": labels}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(cfg: AEConfig, tcfg: TrainConfig, channel_sampler, payload,
          init: dict | None = None):
    """Two-step training (pretraining on the data term, then joint).

    Args:
        cfg: architecture. ``cfg.eta`` weights the peak-power term in the
            joint phase.
        tcfg: schedule. The dataset holds ``tcfg.samples`` frames and is
            reshuffled every epoch; one fresh channel realization and noise
            draw is made per batch at the (fixed or mixed) training SNR.
        channel_sampler: callable (rng, n0) -> ChannelOp.
        payload: dict from :func:`generate_payload` (or the same keys).
        init: optional warm start holding params/state/opt from an earlier
            run; fresh random initialization otherwise.

    Returns:
        dict with params, state, adam state, and the per-iteration trace
        (list of dicts with iter, phase, losses).
    """
    rng = np.random.default_rng(tcfg.seed)
    if init is None:
        params, state = init_params(cfg, rng)
        flat = flatten_params(params)
        opt = adam_init(flat)
    else:
        params = [dict(p) for p in init["params"]]
        state = [dict(s) for s in init["state"]]
        flat = flatten_params(params)
        opt = init.get("opt") or adam_init(flat)
    n_sets = len(params)

    x_all = np.asarray(payload["x_bands"], dtype=complex)[: tcfg.samples]
    labels_all = np.asarray(payload["labels"])[: tcfg.samples]
    if cfg.head == SD and np.any(labels_all < 0):
        raise ConfigurationError("soft-decision head needs fully active payloads")

    trace = []
    order = rng.permutation(x_all.shape[0])
    cursor = 0

    def next_batch():
        nonlocal order, cursor
        if cursor + tcfg.batch > x_all.shape[0]:
            order = rng.permutation(x_all.shape[0])
            cursor = 0
        sel = order[cursor : cursor + tcfg.batch]
        cursor += tcfg.batch
        return x_all[sel], labels_all[sel]

    def run_phase(phase, iters, eta):
        nonlocal params, state, flat
        for it in range(iters):
            xb, lb = next_batch()
            n0 = tcfg.draw_noise_var(rng)
            chan = channel_sampler(rng, n0)
            noise = chan.draw_noise(rng, xb.shape[0])
            try:
                losses, grads, state = ae_loss_and_grads(
                    cfg, params, state, xb, lb, chan, noise, eta
                )
            except TrainingDivergedError:
                raise
            if not np.isfinite(losses["total"]):
                raise TrainingDivergedError(
                    f"loss became non-finite at {phase} iteration {it}"
                )
            flat_grads = flatten_params(grads)
            flat = adam_step(flat, flat_grads, opt, tcfg.lr)
            params = unflatten_params(flat, n_sets)
            trace.append(
                {
                    "iter": len(trace),
                    "phase": phase,
                    "loss_total": losses["total"],
                    "loss_data": losses["data"],
                    "loss_papr": losses["papr"],
                }
            )

    run_phase("pretrain", tcfg.k1, 0.0)
    run_phase("joint", tcfg.k2, cfg.eta)
    return {"params": params, "state": state, "opt": opt, "trace": trace}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, cfg: AEConfig, tcfg: TrainConfig | None, params, state,
                    opt=None):
    """Serialize a trained model to an ``.npz`` container.

    The container holds a JSON manifest (format version, architecture and
    training configuration echoes, seed) plus every parameter tensor,
    batch-norm running statistic and, when given, the optimizer moments.
    """
    manifest = {
        "version": CHECKPOINT_VERSION,
        "ae_config": asdict(cfg),
        "train_config": asdict(tcfg) if tcfg is not None else None,
    }
    arrays = {"__manifest__": np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)}
    for i, p in enumerate(params):
        for k, v in p.items():
            arrays[f"param/band{i}/{k}"] = v
    for i, st in enumerate(state):
        for k, v in st.items():
            arrays[f"state/band{i}/{k}"] = v
    if opt is not None:
        arrays["opt/t"] = np.array(opt["t"])
        for k, v in opt["m"].items():
            arrays[f"opt/m/{k}"] = v
        for k, v in opt["v"].items():
            arrays[f"opt/v/{k}"] = v
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns:
        dict with cfg, tcfg (or None), params, state, opt (or None).
    """
    data = np.load(path, allow_pickle=False)
    manifest = json.loads(bytes(data["__manifest__"]).decode())
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {manifest['version']} not supported"
        )
    cfg_d = manifest["ae_config"]
    for key in ("hidden_enc", "hidden_dec"):
        if cfg_d.get(key) is not None:
            cfg_d[key] = tuple(cfg_d[key])
    cfg = AEConfig(**cfg_d)
    tcfg = None
    if manifest["train_config"] is not None:
        tc = manifest["train_config"]
        if isinstance(tc.get("train_snr_db"), list):
            tc["train_snr_db"] = tuple(tc["train_snr_db"])
        tcfg = TrainConfig(**tc)
    n_sets = 1 if cfg.share_weights else cfg.bands
    params = [dict() for _ in range(n_sets)]
    state = [dict() for _ in range(n_sets)]
    opt = None
    for name in data.files:
        if name.startswith("param/"):
            _, band, key = name.split("/")
            params[int(band[4:])][key] = data[name]
        elif name.startswith("state/"):
            _, band, key = name.split("/")
            state[int(band[4:])][key] = data[name]
        elif name.startswith("opt/"):
            if opt is None:
                opt = {"t": 0, "m": {}, "v": {}}
            if name == "opt/t":
                opt["t"] = int(data[name])
            else:
                _, kind, key = name.split("/", 2)
                opt[kind][key] = data[name]
    return {"cfg": cfg, "tcfg": tcfg, "params": params, "state": state, "opt": opt}
