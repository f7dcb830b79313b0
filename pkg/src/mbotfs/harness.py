"""Experiment orchestration.

Configs are nested dataclasses, round-trippable through YAML, with named
presets (including the benchmark parameter set at 25.675 GHz / 90 kHz
subcarrier spacing). Runners draw one fresh channel realization per frame
from per-frame seeded RNG streams, so every emitted number is a pure
function of (config, seed) regardless of the worker count; results merge
in frame order.

Outputs: CSV files with a config-echo comment header and fixed, versioned
column schemas, a JSON run manifest (timings live here so the CSVs stay
byte-reproducible), model checkpoints and training traces.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .autoencoder import (
    HD,
    SD,
    AEConfig,
    ChannelOp,
    TrainConfig,
    ae_forward,
    generate_payload,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .coding import (
    LdpcCode,
    iterate_detection,
    ldpc_build,
    ldpc_decode,
    ldpc_encode,
    load_alist,
    probs_to_llr,
)
from .errors import ConfigurationError
from .im import (
    IMConfig,
    bits_per_symbol,
    deinterleave_vec,
    demap_frames_ml,
    dft_despread,
    dft_spread,
    interleave_vec,
    map_frames,
)
from .ntn import (
    SPEED_OF_LIGHT,
    ShadowedRicianParams,
    gen_paths,
)
from .otfs import (
    PathSet,
    apply_channel,
    build_dd_channel,
    demodulate_vec,
    mmse_filter,
    modulate_vec,
)
from .papr import ccdf, oversample, papr_batch

BER_COLUMNS = ("experiment", "snr_db", "frames", "total_bits", "bit_errors",
               "ber", "papr_ccdf_ref", "seed")
PAPR_COLUMNS = ("threshold_db", "ccdf")
TRACE_COLUMNS = ("iter", "phase", "loss_total", "loss_data", "loss_papr")
CHUNK_FRAMES = 64

BASELINES = ("otfs", "otfs_clipped", "otfs_im", "mb_dfts_otfs_im", "ae")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    m: int = 16
    n: int = 16
    subcarrier_hz: float = 90e3
    carrier_hz: float = 25.675e9


@dataclass(frozen=True)
class ChannelConfig:
    """Channel recipe: fading split, path count, satellite kinematics."""

    kind: str = "shadowed"  # "shadowed" | "rician" | "awgn"
    nakagami_m: int = 2
    half_nlos_power: float = 0.25
    los_power: float = 0.5
    rician_k: float = 3.0
    paths: int = 10
    tau_max_s: float = 2e-6
    altitude_m: float = 300e3
    speed_m_s: float = 7433.0
    # Per-path Doppler spread is set by the terminal's own motion; the bulk
    # satellite Doppler (f_c * speed / c, far beyond any grid's unambiguous
    # range) is assumed compensated before demodulation.
    user_speed_m_s: float = 250.0
    los_angle_rad: float = 0.0
    doppler_mode: str = "uniform"
    doppler_override_hz: float | None = None

    def fading_params(self) -> ShadowedRicianParams:
        if self.kind == "awgn":
            return ShadowedRicianParams(nakagami_m=1, half_nlos_power=0.0, los_power=1.0)
        if self.kind == "rician":
            omega = self.rician_k / (self.rician_k + 1.0)
            return ShadowedRicianParams(
                nakagami_m=1, half_nlos_power=(1.0 - omega) / 2.0, los_power=omega
            )
        return ShadowedRicianParams(
            nakagami_m=self.nakagami_m,
            half_nlos_power=self.half_nlos_power,
            los_power=self.los_power,
        )

    def max_doppler_hz(self, carrier_hz: float) -> float:
        """Per-path Doppler spread seen on the grid (residual, not bulk)."""
        if self.kind == "awgn":
            return 0.0
        if self.doppler_override_hz is not None:
            return self.doppler_override_hz
        return carrier_hz * self.user_speed_m_s / SPEED_OF_LIGHT


@dataclass(frozen=True)
class IMSettings:
    groups: int = 2
    null_count: int = 2
    constellation_order: int = 4
    dft_spread: bool = True
    scheme: str = "gfim"


@dataclass(frozen=True)
class CodingSettings:
    n: int = 8192
    rate: float = 1 / 3
    seed: int = 0
    max_iters: int = 50
    inner_iters: int = 10
    exchange_rounds: int = 3  # demapper <-> decoder rounds I_0
    alist_path: str | None = None


@dataclass(frozen=True)
class AESettings:
    head: str = HD
    eta: float = 0.01
    k1: int = 500
    k2: int = 1000
    lr: float = 1e-3
    batch: int = 200
    samples: int = 80_000
    train_snr_db: float | tuple = 10.0
    seed: int = 0
    share_weights: bool = False
    hidden_enc: tuple | None = None
    hidden_dec: tuple | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    grid: GridConfig = field(default_factory=GridConfig)
    im: IMSettings = field(default_factory=IMSettings)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    snr_grid_db: tuple = (0.0, 5.0, 10.0, 15.0)
    frames_per_point: int = 1000
    max_bit_errors: int = 200
    seed: int = 0
    baseline: str = "mb_dfts_otfs_im"
    clip_db: float = 6.0
    ce_error_var: float = 0.0
    oversampling: int = 4
    workers: int = 1
    coding: CodingSettings | None = None
    ae: AESettings | None = None

    def im_config(self) -> IMConfig:
        use_im = self.baseline not in ("otfs", "otfs_clipped")
        return IMConfig.for_grid(
            self.grid.m,
            self.grid.n,
            groups=self.im.groups,
            null_count=self.im.null_count if use_im else 0,
            constellation_order=self.im.constellation_order,
            dft_spread=self.im.dft_spread and use_im,
            scheme=self.im.scheme,
        )

    def ae_config(self) -> AEConfig:
        if self.ae is None:
            raise ConfigurationError("experiment has no autoencoder settings")
        return AEConfig(
            m=self.grid.m,
            n=self.grid.n,
            bands=self.im.groups,
            head=self.ae.head,
            constellation_order=self.im.constellation_order,
            hidden_enc=self.ae.hidden_enc,
            hidden_dec=self.ae.hidden_dec,
            eta=self.ae.eta,
            share_weights=self.ae.share_weights,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            k1=self.ae.k1,
            k2=self.ae.k2,
            lr=self.ae.lr,
            batch=self.ae.batch,
            samples=self.ae.samples,
            train_snr_db=self.ae.train_snr_db,
            seed=self.ae.seed,
        )

    def validate(self) -> None:
        if self.baseline not in BASELINES:
            raise ConfigurationError(f"unknown baseline {self.baseline!r}")
        cfg = self.im_config()  # checks divisibility and bit budgets
        f_d = self.channel.max_doppler_hz(self.grid.carrier_hz)
        t_sym = 1.0 / self.grid.subcarrier_hz
        ell = int(np.ceil(self.channel.tau_max_s * self.grid.m * self.grid.subcarrier_hz))
        if max(ell, 1) > self.grid.m:
            raise ConfigurationError("delay spread exceeds the delay grid")
        if int(np.ceil(abs(f_d) * self.grid.n * t_sym)) > self.grid.n // 2:
            raise ConfigurationError("Doppler spread exceeds the Doppler grid")
        if self.frames_per_point < 1 or self.max_bit_errors < 1:
            raise ConfigurationError("need at least one frame and one error")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.oversampling < 1:
            raise ConfigurationError("oversampling must be >= 1")
        if self.coding is not None:
            if self.coding.n % cfg.bits_per_frame:
                raise ConfigurationError(
                    "code length must be a whole number of frames"
                )


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _to_plain(asdict(cfg))


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    sub = {
        "grid": GridConfig,
        "im": IMSettings,
        "channel": ChannelConfig,
        "coding": CodingSettings,
        "ae": AESettings,
    }
    for key, cls in sub.items():
        if data.get(key) is not None:
            payload = dict(data[key])
            for tup_key in ("hidden_enc", "hidden_dec", "train_snr_db"):
                if isinstance(payload.get(tup_key), list):
                    payload[tup_key] = tuple(payload[tup_key])
            data[key] = cls(**payload)
    if isinstance(data.get("snr_grid_db"), list):
        data["snr_grid_db"] = tuple(data["snr_grid_db"])
    return ExperimentConfig(**data)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a mapping")
    preset = data.pop("preset", None)
    if preset is not None:
        base = config_to_dict(get_preset(preset))
        _deep_update(base, data)
        data = base
    cfg = config_from_dict(data)
    cfg.validate()
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


def _deep_update(base: dict, patch: dict) -> None:
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def get_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r} (have {sorted(PRESETS)})")
    return PRESETS[name]()


def _preset_paper_table3() -> ExperimentConfig:
    """Benchmark parameter set: 25.675 GHz carrier, 90 kHz SCS, 16x16 grid,
    grouped IM with 8-slot groups / 2 nulls, 4-QAM, P=10 paths from a 300 km
    orbit at 7433 m/s, rate-1/3 length-8192 code."""
    return ExperimentConfig(
        name="paper_table3",
        grid=GridConfig(m=16, n=16, subcarrier_hz=90e3, carrier_hz=25.675e9),
        im=IMSettings(groups=32, null_count=2, constellation_order=4,
                      dft_spread=True, scheme="gfim"),
        channel=ChannelConfig(kind="shadowed", nakagami_m=2, paths=10,
                              altitude_m=300e3, speed_m_s=7433.0,
                              doppler_mode="cos_angle"),
        snr_grid_db=(0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0),
        frames_per_point=2000,
        coding=CodingSettings(n=8192, rate=1 / 3),
    )


def _preset_paper_table3_16qam() -> ExperimentConfig:
    # 16-QAM frames carry 896 coded bits; the code length is the closest
    # rate-1/3-compatible multiple of that (9 frames per codeword).
    base = _preset_paper_table3()
    return replace(
        base,
        name="paper_table3_16qam",
        im=replace(base.im, constellation_order=16),
        coding=replace(base.coding, n=8064),
    )


def _preset_desk() -> ExperimentConfig:
    """Small grid for fast local runs and CI."""
    return ExperimentConfig(
        name="desk",
        grid=GridConfig(m=8, n=8, subcarrier_hz=90e3, carrier_hz=25.675e9),
        im=IMSettings(groups=2, null_count=2, constellation_order=4,
                      dft_spread=True, scheme="gfim"),
        channel=ChannelConfig(kind="shadowed", nakagami_m=2, paths=4,
                              tau_max_s=1.5e-6),
        snr_grid_db=(0.0, 5.0, 10.0, 15.0),
        frames_per_point=400,
        ae=AESettings(),
    )


PRESETS = {
    "paper_table3": _preset_paper_table3,
    "paper_table3_16qam": _preset_paper_table3_16qam,
    "desk": _preset_desk,
}


# ---------------------------------------------------------------------------
# Channel plumbing
# ---------------------------------------------------------------------------


def frame_rng(seed: int, point: int, frame: int) -> np.random.Generator:
    """Per-frame stream: SeedSequence((seed, point, frame)). The split rule
    makes results independent of worker scheduling."""
    return np.random.default_rng(np.random.SeedSequence((seed, point, frame)))


def draw_path_set(cfg: ExperimentConfig, rng: np.random.Generator) -> PathSet:
    ch = cfg.channel
    if ch.kind == "awgn":
        return PathSet(gains=[1.0], delays=[0], dopplers=[0], l_max=1, k_max=0)
    return gen_paths(
        ch.paths,
        ch.tau_max_s,
        ch.max_doppler_hz(cfg.grid.carrier_hz),
        ch.fading_params(),
        (cfg.grid.m, cfg.grid.n, cfg.grid.subcarrier_hz),
        rng,
        los_angle_rad=ch.los_angle_rad,
        doppler_mode=ch.doppler_mode,
    )


def csi_perturb(h_dd: np.ndarray, error_var: float, rng: np.random.Generator) -> np.ndarray:
    """Receiver-side channel-knowledge corruption.

    Adds circularly-symmetric Gaussian error of variance ``error_var`` to
    every structurally nonzero entry; the true channel is untouched.
    """
    if error_var < 0:
        raise ConfigurationError("estimation-error variance must be >= 0")
    h_dd = np.asarray(h_dd, dtype=complex)
    if error_var == 0:
        return h_dd.copy()
    mask = np.abs(h_dd) > 1e-12
    noise = np.sqrt(error_var / 2.0) * (
        rng.standard_normal(h_dd.shape) + 1j * rng.standard_normal(h_dd.shape)
    )
    return h_dd + mask * noise


def clip_baseline(frame: np.ndarray, clip_db: float) -> np.ndarray:
    """Magnitude clipping at ``clip_db`` above the frame's mean power.

    Phases are preserved; samples below the threshold pass unchanged. The
    clip is iterated against the shrinking mean power so the resulting
    peak-to-average ratio lands at the requested level rather than above it.
    """
    if clip_db < 0:
        raise ConfigurationError("clip level must be >= 0 dB")
    out = np.asarray(frame, dtype=complex).copy()
    for _ in range(8):
        mean_power = np.mean(np.abs(out) ** 2)
        limit = np.sqrt(mean_power * 10.0 ** (clip_db / 10.0))
        mag = np.abs(out)
        if np.max(mag) <= limit:
            break
        out *= np.where(mag > limit, limit / np.maximum(mag, 1e-300), 1.0)
    return out


# ---------------------------------------------------------------------------
# Single-frame transceiver chains
# ---------------------------------------------------------------------------


@dataclass
class FrameResult:
    bits: int
    errors: int
    papr_db: float | None = None


def _tx_grid(bits: np.ndarray, im_cfg: IMConfig) -> np.ndarray:
    """Frame bits -> grid vector (band mapping, spreading, interleaving)."""
    sub = map_frames(bits[None, :], im_cfg)[0]
    if im_cfg.dft_spread:
        sub = dft_spread(sub, axis=1)
    return interleave_vec(sub.reshape(-1), im_cfg.groups, im_cfg.group_size)


def _rx_bits(z_grid: np.ndarray, im_cfg: IMConfig) -> np.ndarray:
    sub = deinterleave_vec(z_grid, im_cfg.groups, im_cfg.group_size)
    sub = sub.reshape(im_cfg.groups, im_cfg.group_size)
    if im_cfg.dft_spread:
        sub = dft_despread(sub, axis=1)
    return demap_frames_ml(sub[None, :, :], im_cfg)[0]


def run_uncoded_frame(cfg: ExperimentConfig, im_cfg: IMConfig, n0: float,
                      rng: np.random.Generator, model=None) -> FrameResult:
    """One frame through the configured baseline; returns bit counts."""
    m, n = cfg.grid.m, cfg.grid.n
    ps = draw_path_set(cfg, rng)
    h_dd = build_dd_channel(ps, m, n)
    h_rx = csi_perturb(h_dd, cfg.ce_error_var, rng) if cfg.ce_error_var else h_dd

    bits = rng.integers(0, 2, im_cfg.bits_per_frame).astype(np.int8)

    if cfg.baseline == "ae":
        return _ae_uncoded_frame(cfg, im_cfg, n0, rng, model, bits, ps, h_dd, h_rx)

    s_grid = _tx_grid(bits, im_cfg)
    s_td = modulate_vec(s_grid, m, n)
    if cfg.baseline == "otfs_clipped":
        # Critical-rate approximation of the amplitude limiter.
        s_td = clip_baseline(s_td, cfg.clip_db)
    y_td = apply_channel(s_td, ps, m, n, n0, rng)
    y_grid = demodulate_vec(y_td, m, n)
    w = mmse_filter(h_rx, n0)
    z_grid = w @ y_grid
    got = _rx_bits(z_grid, im_cfg)
    return FrameResult(bits=bits.size, errors=int(np.sum(got != bits)))


def _ae_uncoded_frame(cfg, im_cfg, n0, rng, model, bits, ps, h_dd, h_rx):
    if model is None:
        raise ConfigurationError("autoencoder baseline needs a trained model")
    ae_cfg: AEConfig = model["cfg"]
    sub = map_frames(bits[None, :], im_cfg)[0]
    x = dft_spread(sub, axis=1) if im_cfg.dft_spread else sub
    chan = ChannelOp.create(h_dd, cfg.grid.m, cfg.grid.n, ae_cfg.bands, n0, h_rx=h_rx)
    noise = chan.draw_noise(rng, 1)
    fw = ae_forward(ae_cfg, model["params"], model["state"], x[None, :, :],
                    chan, noise, "eval")
    if ae_cfg.head == HD:
        z = fw["out"][0]
        if im_cfg.dft_spread:
            z = dft_despread(z, axis=1)
        got = demap_frames_ml(z[None, :, :], im_cfg)[0]
    else:
        # Hard decisions straight from the per-slot posterior.
        sym = np.argmax(fw["out"][0], axis=-1)
        k = bits_per_symbol(im_cfg.constellation_order)
        got = np.zeros_like(bits)
        grouped = got.reshape(im_cfg.groups, -1)
        for j in range(k):
            grouped[:, j::k] = (sym >> (k - 1 - j)) & 1
    return FrameResult(bits=bits.size, errors=int(np.sum(got != bits)))


def ae_transmit_frames(cfg: ExperimentConfig, im_cfg: IMConfig, model,
                       count: int, rng: np.random.Generator) -> np.ndarray:
    """Time-domain frames produced by the trained encoder (for PAPR runs)."""
    ae_cfg: AEConfig = model["cfg"]
    payload = generate_payload(im_cfg, ae_cfg, count, rng)
    chan = ChannelOp.identity(cfg.grid.m, cfg.grid.n, ae_cfg.bands, 1.0)
    fw = ae_forward(ae_cfg, model["params"], model["state"], payload["x_bands"],
                    chan, np.zeros((count, cfg.grid.m * cfg.grid.n)), "eval")
    return fw["s_td"]


def baseline_transmit_frames(cfg: ExperimentConfig, im_cfg: IMConfig,
                             count: int, rng: np.random.Generator) -> np.ndarray:
    """Critically sampled transmit frames of the configured waveform
    (clipping not applied here; the BER chain clips at the critical rate,
    the PAPR chain clips after oversampling)."""
    bits = rng.integers(0, 2, (count, im_cfg.bits_per_frame)).astype(np.int8)
    sub = map_frames(bits, im_cfg)
    if im_cfg.dft_spread:
        sub = dft_spread(sub, axis=2)
    grid = interleave_vec(sub.reshape(count, -1), im_cfg.groups, im_cfg.group_size)
    return modulate_vec(grid, cfg.grid.m, cfg.grid.n)


def run_coded_block(cfg: ExperimentConfig, im_cfg: IMConfig, code: LdpcCode,
                    n0: float, rng: np.random.Generator, model=None) -> FrameResult:
    """One codeword (spanning several frames) through the coded receiver."""
    m, n = cfg.grid.m, cfg.grid.n
    frames = code.n // im_cfg.bits_per_frame
    perm = rng.permutation(code.n)
    info = rng.integers(0, 2, code.k).astype(np.uint8)
    coded = ldpc_encode(info, code)
    tx_bits = coded[perm].reshape(frames, im_cfg.bits_per_frame)

    if cfg.baseline == "ae":
        got = _ae_coded_block(cfg, im_cfg, code, n0, rng, model, tx_bits, perm)
        return FrameResult(bits=code.k, errors=int(np.sum(got != info)))

    ys, hs = [], []
    for f in range(frames):
        ps = draw_path_set(cfg, rng)
        h_dd = build_dd_channel(ps, m, n)
        h_rx = csi_perturb(h_dd, cfg.ce_error_var, rng) if cfg.ce_error_var else h_dd
        s_grid = _tx_grid(tx_bits[f].astype(np.int8), im_cfg)
        s_td = modulate_vec(s_grid, m, n)
        y_td = apply_channel(s_td, ps, m, n, n0, rng)
        ys.append(demodulate_vec(y_td, m, n))
        hs.append(h_rx)
    got, _ = iterate_detection(
        np.stack(ys), np.stack(hs), n0, im_cfg, code,
        cfg.coding.exchange_rounds, interleaver=perm,
        inner_iters=cfg.coding.inner_iters,
    )
    return FrameResult(bits=code.k, errors=int(np.sum(got != info)))


def _ae_coded_block(cfg, im_cfg, code, n0, rng, model, tx_bits, perm):
    """Soft-decision autoencoder receiver: per-slot posteriors -> LLRs -> BP."""
    ae_cfg: AEConfig = model["cfg"]
    if ae_cfg.head != SD:
        raise ConfigurationError("coded autoencoder runs need the soft-decision head")
    if im_cfg.null_count != 0:
        raise ConfigurationError("soft-decision head assumes a fully active grid")
    m, n = cfg.grid.m, cfg.grid.n
    frames = tx_bits.shape[0]
    llr_tx = np.empty(code.n)
    bpf = im_cfg.bits_per_frame
    for f in range(frames):
        ps = draw_path_set(cfg, rng)
        h_dd = build_dd_channel(ps, m, n)
        h_rx = csi_perturb(h_dd, cfg.ce_error_var, rng) if cfg.ce_error_var else h_dd
        sub = map_frames(tx_bits[f][None, :].astype(np.int8), im_cfg)[0]
        x = dft_spread(sub, axis=1) if im_cfg.dft_spread else sub
        chan = ChannelOp.create(h_dd, m, n, ae_cfg.bands, n0, h_rx=h_rx)
        noise = chan.draw_noise(rng, 1)
        fw = ae_forward(ae_cfg, model["params"], model["state"], x[None, :, :],
                        chan, noise, "eval")
        llrs = probs_to_llr(fw["out"][0], im_cfg.constellation_order)
        llr_tx[f * bpf:(f + 1) * bpf] = llrs.reshape(-1)
    dec_in = np.empty(code.n)
    dec_in[perm] = llr_tx
    bits, _, _, _ = ldpc_decode(dec_in, code, cfg.coding.max_iters)
    return bits[code.info_positions]


def build_code(settings: CodingSettings) -> LdpcCode:
    if settings.alist_path:
        return load_alist(settings.alist_path)
    return ldpc_build(settings.n, settings.rate, seed=settings.seed)


# ---------------------------------------------------------------------------
# Monte-Carlo drivers
# ---------------------------------------------------------------------------


def _run_point(cfg, im_cfg, point_idx, n0, work_fn) -> tuple[int, int, int]:
    """Monte-Carlo loop with deterministic chunked early stopping.

    Units are processed in fixed chunks; the error-count stop rule is
    evaluated at chunk boundaries only, so the emitted numbers do not
    depend on the worker count.
    """
    total_bits = 0
    total_errors = 0
    units = 0
    frame = 0
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        while frame < cfg.frames_per_point:
            chunk = min(CHUNK_FRAMES, cfg.frames_per_point - frame)
            idxs = range(frame, frame + chunk)
            if pool is not None:
                results = list(pool.map(
                    lambda i: work_fn(n0, frame_rng(cfg.seed, point_idx, i)), idxs
                ))
            else:
                results = [work_fn(n0, frame_rng(cfg.seed, point_idx, i)) for i in idxs]
            for r in results:
                total_bits += r.bits
                total_errors += r.errors
                units += 1
            frame += chunk
            if total_errors >= cfg.max_bit_errors:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return total_bits, total_errors, units


def run_ber(cfg: ExperimentConfig, out_dir, model=None) -> Path:
    """Monte-Carlo BER sweep; writes one CSV plus a manifest, returns the
    CSV path.

    Every frame (or codeword, for coded runs) draws a fresh channel
    realization from its own seeded stream; a point stops early once
    ``max_bit_errors`` accumulate.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    im_cfg = cfg.im_config()
    model = _resolve_model(cfg, model)
    code = build_code(cfg.coding) if cfg.coding is not None else None

    t0 = time.perf_counter()
    rows = []
    for point_idx, snr_db in enumerate(cfg.snr_grid_db):
        n0 = 10.0 ** (-snr_db / 10.0)
        if code is None:
            work = lambda nv, rng: run_uncoded_frame(cfg, im_cfg, nv, rng, model)
        else:
            work = lambda nv, rng: run_coded_block(cfg, im_cfg, code, nv, rng, model)
        bits, errors, units = _run_point(cfg, im_cfg, point_idx, n0, work)
        frames_done = units if code is None else units * (code.n // im_cfg.bits_per_frame)
        rows.append({
            "experiment": cfg.name,
            "snr_db": snr_db,
            "frames": frames_done,
            "total_bits": bits,
            "bit_errors": errors,
            "ber": errors / bits,
            "papr_ccdf_ref": "",
            "seed": cfg.seed,
        })

    csv_path = out_dir / f"{cfg.name}_ber.csv"
    _write_csv(csv_path, BER_COLUMNS, rows, cfg)
    _write_manifest(out_dir, cfg, [csv_path], time.perf_counter() - t0)
    return csv_path


def run_papr(cfg: ExperimentConfig, out_dir, model=None) -> Path:
    """PAPR CCDF over ``frames_per_point`` transmit frames; returns CSV path."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    im_cfg = cfg.im_config()
    model = _resolve_model(cfg, model)
    rng = frame_rng(cfg.seed, 0, 0)
    t0 = time.perf_counter()
    if cfg.baseline == "ae":
        frames = ae_transmit_frames(cfg, im_cfg, model, cfg.frames_per_point, rng)
    else:
        frames = baseline_transmit_frames(cfg, im_cfg, cfg.frames_per_point, rng)
    up = oversample(frames, cfg.oversampling)
    if cfg.baseline == "otfs_clipped":
        # Amplitude limiting acts on the (near-)continuous waveform, so the
        # clip is applied after interpolation when measuring peaks.
        up = np.stack([clip_baseline(f, cfg.clip_db) for f in up])
    values = papr_batch(up, oversampling=1)
    curve = ccdf(values)
    rows = [
        {"threshold_db": t, "ccdf": p}
        for t, p in zip(curve.thresholds_db, curve.exceed_prob)
    ]
    csv_path = out_dir / f"{cfg.name}_papr.csv"
    _write_csv(csv_path, PAPR_COLUMNS, rows, cfg)
    _write_manifest(out_dir, cfg, [csv_path], time.perf_counter() - t0)
    return csv_path


def make_channel_sampler(cfg: ExperimentConfig, bands: int):
    """Per-batch channel sampler for training (fresh realization, CSI error
    applied receiver-side when configured)."""

    def sampler(rng: np.random.Generator, n0: float) -> ChannelOp:
        ps = draw_path_set(cfg, rng)
        h_dd = build_dd_channel(ps, cfg.grid.m, cfg.grid.n)
        h_rx = csi_perturb(h_dd, cfg.ce_error_var, rng) if cfg.ce_error_var else None
        return ChannelOp.create(h_dd, cfg.grid.m, cfg.grid.n, bands, n0, h_rx=h_rx)

    return sampler


def run_training(cfg: ExperimentConfig, out_dir) -> dict:
    """Train the configured autoencoder; persist checkpoint and trace CSV.

    Returns the training result dict augmented with the artifact paths.
    """
    cfg.validate()
    if cfg.ae is None:
        raise ConfigurationError("config has no autoencoder settings")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ae_cfg = cfg.ae_config()
    tcfg = cfg.train_config()
    im_cfg = cfg.im_config()
    rng = np.random.default_rng(np.random.SeedSequence((tcfg.seed, 0xDA7A)))
    payload = generate_payload(im_cfg, ae_cfg, tcfg.samples, rng)
    sampler = make_channel_sampler(cfg, ae_cfg.bands)

    t0 = time.perf_counter()
    result = train(ae_cfg, tcfg, sampler, payload)
    ckpt_path = out_dir / f"{cfg.name}_model.npz"
    save_checkpoint(ckpt_path, ae_cfg, tcfg, result["params"], result["state"],
                    result["opt"])
    trace_rows = [
        {k: t[k] for k in TRACE_COLUMNS}
        for t in (
            {"iter": tr["iter"], "phase": tr["phase"],
             "loss_total": tr["loss_total"], "loss_data": tr["loss_data"],
             "loss_papr": tr["loss_papr"]}
            for tr in result["trace"]
        )
    ]
    trace_path = out_dir / f"{cfg.name}_trace.csv"
    _write_csv(trace_path, TRACE_COLUMNS, trace_rows, cfg)
    _write_manifest(out_dir, cfg, [ckpt_path, trace_path], time.perf_counter() - t0)
    result["checkpoint"] = ckpt_path
    result["trace_csv"] = trace_path
    result["cfg"] = ae_cfg
    return result


def _resolve_model(cfg: ExperimentConfig, model):
    if cfg.baseline != "ae":
        return model
    if model is not None:
        return model
    if cfg.ae is not None and cfg.ae.checkpoint:
        return load_checkpoint(cfg.ae.checkpoint)
    raise ConfigurationError("autoencoder baseline needs a model or checkpoint path")


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, columns, rows, cfg: ExperimentConfig) -> None:
    echo = json.dumps(config_to_dict(cfg), sort_keys=True)
    lines = [
        f"# mbotfs {__version__} schema=1",
        f"# config {echo}",
        ",".join(columns),
    ]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, outputs, wall_s: float) -> None:
    manifest = {
        "artifact_version": __version__,
        "config": config_to_dict(cfg),
        "outputs": [str(Path(p).name) for p in outputs],
        "wall_time_s": wall_s,
        "seed": cfg.seed,
    }
    (out_dir / f"{cfg.name}_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def read_result_csv(path):
    """Parse a CSV written by this module; returns (config dict, rows)."""
    lines = Path(path).read_text().splitlines()
    cfg = json.loads(lines[1].split(" ", 2)[2])
    cols = lines[2].split(",")
    rows = []
    for line in lines[3:]:
        vals = line.split(",")
        row = {}
        for c, v in zip(cols, vals):
            try:
                row[c] = int(v)
            except ValueError:
                try:
                    row[c] = float(v)
                except ValueError:
                    row[c] = v
        rows.append(row)
    return cfg, rows
