"""LEO-to-ground link model.

Covers the large-scale budget (refraction-corrected slant path, power-law
path loss, molecular absorption as a transmittance), the satellite motion
geometry that sets the maximum Doppler shift, and the shadowed-Rician
small-scale fading whose power distribution is a finite mixture for integer
shape values. Channel realizations are emitted as :class:`~mbotfs.otfs.PathSet`
instances on the delay-Doppler grid.

All functions are pure and take an explicit ``numpy.random.Generator`` where
randomness is involved; parallel Monte-Carlo workers should derive their
generators with :func:`worker_rng`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError
from .otfs import PathSet

SPEED_OF_LIGHT = 299792458.0  # m/s
EARTH_RADIUS = 6371e3         # m


@dataclass(frozen=True)
class GeometryParams:
    """Circular-orbit LEO geometry seen from a fixed ground terminal."""

    orbit_altitude_m: float
    elevation_rad: float
    earth_radius_m: float = EARTH_RADIUS
    max_elevation_rad: float = np.pi / 2
    quadrature_points: int = 100
    angular_rate_rad_s: float = 0.0
    elapsed_s: float = 0.0

    def __post_init__(self):
        if self.earth_radius_m <= 0 or self.orbit_altitude_m <= 0:
            raise ConfigurationError("radius and altitude must be positive")
        if not (0 < self.elevation_rad <= np.pi / 2):
            raise ConfigurationError("elevation must lie in (0, pi/2]")
        if self.quadrature_points < 2:
            raise ConfigurationError("need at least 2 quadrature points")

    @property
    def orbit_radius_m(self) -> float:
        """Distance from the Earth's center to the satellite."""
        return self.earth_radius_m + self.orbit_altitude_m

    @property
    def central_angle_rad(self) -> float:
        """Earth-centered angle swept since the maximum-elevation pass."""
        return self.angular_rate_rad_s * self.elapsed_s


@dataclass(frozen=True)
class AtmosphereParams:
    """Exponential refractivity profile plus per-gas optical thicknesses."""

    surface_refractivity: float = 315e-6
    scale_height_m: float = 7500.0
    optical_thicknesses: tuple = ()

    def __post_init__(self):
        if self.surface_refractivity < 0:
            raise ConfigurationError("surface refractivity must be >= 0")
        if self.scale_height_m <= 0:
            raise ConfigurationError("scale height must be positive")
        taus = tuple(float(t) for t in self.optical_thicknesses)
        if any(t < 0 for t in taus):
            raise ConfigurationError("optical thicknesses must be >= 0")
        object.__setattr__(self, "optical_thicknesses", taus)


@dataclass(frozen=True)
class ShadowedRicianParams:
    """Power-normalized shadowed-Rician fading parameters.

    ``nakagami_m`` is the integer shape of the line-of-sight amplitude,
    ``half_nlos_power`` is half the scattered power (so the scattered power
    is ``2 * b0``) and ``los_power`` is the line-of-sight power. The model is
    normalized: ``2 * b0 + omega == 1``.
    """

    nakagami_m: int
    half_nlos_power: float
    los_power: float

    def __post_init__(self):
        if int(self.nakagami_m) != self.nakagami_m or self.nakagami_m < 1:
            raise ConfigurationError("nakagami_m must be an integer >= 1")
        # b0 = 0 is admitted so a pure line-of-sight (AWGN-like) link is
        # representable; the density formulas degenerate gracefully there.
        if self.half_nlos_power < 0 or self.los_power < 0:
            raise ConfigurationError("powers must satisfy b0 >= 0, omega >= 0")
        if abs(2 * self.half_nlos_power + self.los_power - 1.0) > 1e-9:
            raise ConfigurationError("normalization 2*b0 + omega = 1 violated")

    @property
    def scatter_power(self) -> float:
        """Total scattered (non-LoS) power, 2*b0."""
        return 2.0 * self.half_nlos_power

    @property
    def los_power_per_branch(self) -> float:
        """LoS power divided by the shape, omega / m'."""
        return self.los_power / self.nakagami_m


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power, carrier, path-loss exponent and noise variance."""

    tx_power_w: float
    carrier_hz: float
    pathloss_exponent: float = 2.0
    noise_var: float = 1.0

    def __post_init__(self):
        if min(self.tx_power_w, self.carrier_hz, self.noise_var) <= 0:
            raise ConfigurationError("power, carrier and noise variance must be positive")


# ---------------------------------------------------------------------------
# Large-scale budget
# ---------------------------------------------------------------------------


def refractive_index(h_m: float, atm: AtmosphereParams) -> float:
    """Atmospheric refractive index at altitude ``h_m``.

    Exponential profile ``1 + N0 * exp(-h / h0)``.
    """
    if np.any(np.asarray(h_m) < 0):
        raise ConfigurationError("altitude must be >= 0")
    return 1.0 + atm.surface_refractivity * np.exp(-np.asarray(h_m) / atm.scale_height_m)


def refracted_path_length(geom: GeometryParams, atm: AtmosphereParams) -> float:
    """Slant path length from ground to orbit altitude, refraction included.

    Chebyshev-Gauss quadrature over altitude with nodes
    ``kappa_i = H' * (cos((2i-1) pi / 2Q) + 1) / 2`` and weights ``pi / Q``.

    Raises:
        GeometryError: if a node's ray direction falls below the horizon
            (non-positive square-root argument).
    """
    q = geom.quadrature_points
    h_orb = geom.orbit_altitude_m
    r = geom.earth_radius_m
    i = np.arange(1, q + 1)
    angles = (2 * i - 1) * np.pi / (2 * q)
    kappa = h_orb * (np.cos(angles) + 1.0) / 2.0
    weight = np.pi / q
    n_kappa = refractive_index(kappa, atm)
    n_surface = 1.0 + atm.surface_refractivity
    ratio = n_surface * np.cos(geom.elevation_rad) / (n_kappa * (1.0 + kappa / r))
    root_arg = 1.0 - ratio**2
    if np.any(root_arg <= 0):
        raise GeometryError("quadrature node below the local horizon; geometry infeasible")
    terms = (h_orb * weight * n_kappa / 2.0) * np.sin(angles) / np.sqrt(root_arg)
    return float(np.sum(terms))


def straight_slant_range(geom: GeometryParams) -> float:
    """Refraction-free slant range from spherical geometry (closed form)."""
    r = geom.earth_radius_m
    h = geom.orbit_altitude_m
    sin_e = np.sin(geom.elevation_rad)
    return float(np.sqrt((r * sin_e) ** 2 + 2 * r * h + h * h) - r * sin_e)


def path_loss(d_m: float, link: LinkBudget) -> float:
    """Large-scale path gain ``(c / (4 pi f_c))^2 * d^(-alpha)`` (linear)."""
    if d_m <= 0:
        raise ConfigurationError("distance must be positive")
    return (SPEED_OF_LIGHT / (4.0 * np.pi * link.carrier_hz)) ** 2 * d_m ** (
        -link.pathloss_exponent
    )


def absorption(atm: AtmosphereParams) -> float:
    """Beer-Lambert transmittance ``exp(-sum tau_i)`` in (0, 1]."""
    return float(np.exp(-sum(atm.optical_thicknesses)))


def received_snr(link: LinkBudget, pl: float, abs_t: float, h_pow: float) -> float:
    """Instantaneous received SNR ``P_s * PL * T_abs * |h|^2 / sigma^2``."""
    if min(pl, abs_t, h_pow) < 0:
        raise ConfigurationError("gain factors must be >= 0")
    return link.tx_power_w * pl * abs_t * h_pow / link.noise_var


# ---------------------------------------------------------------------------
# Shadowed-Rician fading
# ---------------------------------------------------------------------------


def shadowed_rician_pdf(x, p: ShadowedRicianParams):
    """Density of the fading power |h|^2. Accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ConfigurationError("power values must be >= 0")
    m = p.nakagami_m
    a = p.scatter_power
    b = p.los_power_per_branch
    s = a + b
    out = np.zeros_like(x)
    for k in range(m):
        coef = (
            math.comb(m - 1, k)
            * a ** (m - k - 1)
            * b**k
            / (math.factorial(k) * s**m)
        )
        out += coef * (x / s) ** k
    return out * np.exp(-x / s)


def shadowed_rician_cdf(x, p: ShadowedRicianParams):
    """Distribution function of the fading power |h|^2."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ConfigurationError("power values must be >= 0")
    m = p.nakagami_m
    a = p.scatter_power
    b = p.los_power_per_branch
    s = a + b
    tail = np.zeros_like(x)
    for k in range(m):
        outer = math.comb(m - 1, k) * a ** (m - k - 1) * b**k / s ** (m - 1)
        inner = np.zeros_like(x)
        for q in range(k + 1):
            inner += (x / s) ** q / math.factorial(q)
        tail += outer * inner
    return 1.0 - tail * np.exp(-x / s)


def sample_fading(p: ShadowedRicianParams, rng: np.random.Generator, size=None):
    """Draw complex fading gains h with shadowed-Rician power.

    Composition: a Nakagami-m line-of-sight amplitude (power ``omega``,
    exact Gamma sampling for the integer shape) with uniform phase, plus a
    circularly-symmetric Gaussian scatter term of power ``2*b0``. The power
    |h|^2 then follows the finite-mixture law of
    :func:`shadowed_rician_cdf`; E[|h|^2] = 1 for normalized parameters.
    """
    m = p.nakagami_m
    omega = p.los_power
    if omega > 0:
        amp = np.sqrt(rng.gamma(shape=m, scale=omega / m, size=size))
    else:
        amp = np.zeros(size if size is not None else ())
    phase = rng.uniform(0.0, 2.0 * np.pi, size=size)
    scatter = np.sqrt(p.half_nlos_power) * (
        rng.standard_normal(size) + 1j * rng.standard_normal(size)
    )
    return amp * np.exp(1j * phase) + scatter


# ---------------------------------------------------------------------------
# Doppler geometry
# ---------------------------------------------------------------------------


def max_doppler(geom: GeometryParams, link: LinkBudget) -> float:
    """Maximum Doppler shift (Hz) from the circular-orbit geometry.

    Zero at the maximum-elevation instant and odd in the swept central
    angle; magnitude never exceeds ``f_c * H_os * omega / c``.
    """
    r = geom.earth_radius_m
    h_os = geom.orbit_radius_m
    psi = geom.central_angle_rad
    chi = np.arccos(np.clip(r * np.cos(geom.max_elevation_rad) / h_os, -1.0, 1.0)) - (
        geom.max_elevation_rad
    )
    num = r * h_os * np.sin(psi) * np.cos(chi) * geom.angular_rate_rad_s
    den = np.sqrt(r * r + h_os * h_os - 2.0 * r * h_os * np.cos(psi) * np.cos(chi))
    return float(-(link.carrier_hz / SPEED_OF_LIGHT) * num / den)


def _round_half_away(x) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(int)


# ---------------------------------------------------------------------------
# DD-grid channel realizations
# ---------------------------------------------------------------------------


def gen_paths(
    p_count: int,
    tau_max_s: float,
    f_d_hz: float,
    sr: ShadowedRicianParams,
    grid: tuple,
    rng: np.random.Generator,
    los_angle_rad: float = 0.0,
    doppler_mode: str = "uniform",
) -> PathSet:
    """Draw one delay-Doppler channel realization.

    The line-of-sight path sits at delay 0 with deterministic gain
    ``sqrt(omega)`` and Doppler bin ``round(f_d * cos(los_angle) * N * T)``.
    The remaining ``p_count - 1`` scattered paths carry i.i.d. complex
    Gaussian gains of variance ``2*b0 / (p_count - 1)``, delays uniform on
    ``[0, L-1]`` with ``L = ceil(tau_max * M * df)``, and Doppler bins either
    uniform integers on ``[-k_max, k_max]`` (``doppler_mode="uniform"``) or
    quantized ``f_d * cos(alpha)`` with alpha uniform on ``[-pi, pi]``
    (``doppler_mode="cos_angle"``), where ``k_max = ceil(f_d * N * T)``.

    Args:
        p_count: total number of paths P (>= 2 unless the link is pure LoS).
        tau_max_s: maximum channel delay spread in seconds.
        f_d_hz: maximum Doppler shift in Hz.
        sr: fading parameters (sets the LoS/scatter power split).
        grid: tuple (M, N, subcarrier_spacing_hz); symbol time is 1/df.
        rng: random generator (fixing it fixes the realization).
        los_angle_rad: angle of the LoS ray to the velocity vector.
        doppler_mode: "uniform" or "cos_angle".

    Returns:
        PathSet with total average power omega + 2*b0 = 1.
    """
    m, n, df = grid
    t_sym = 1.0 / df
    ell = math.ceil(tau_max_s * m * df) if tau_max_s > 0 else 1
    ell = max(ell, 1)
    k_max = math.ceil(abs(f_d_hz) * n * t_sym)
    if ell > m:
        raise ConfigurationError(f"delay spread needs L={ell} taps but the grid has M={m}")
    if k_max > n // 2:
        raise ConfigurationError(f"Doppler spread needs k_max={k_max} but the grid allows N/2={n // 2}")
    if p_count < 2 and sr.los_power < 1.0:
        raise ConfigurationError("scattered power present but only one path requested")
    if doppler_mode not in ("uniform", "cos_angle"):
        raise ConfigurationError(f"unknown doppler_mode {doppler_mode!r}")

    k0 = int(_round_half_away(f_d_hz * np.cos(los_angle_rad) * n * t_sym))
    gains = [np.sqrt(sr.los_power)]
    delays = [0]
    dopplers = [k0]

    n_scatter = p_count - 1
    if n_scatter > 0:
        var = sr.scatter_power / n_scatter
        g = np.sqrt(var / 2.0) * (
            rng.standard_normal(n_scatter) + 1j * rng.standard_normal(n_scatter)
        )
        d = rng.integers(0, ell, n_scatter)
        if doppler_mode == "uniform":
            k = rng.integers(-k_max, k_max + 1, n_scatter)
        else:
            alpha = rng.uniform(-np.pi, np.pi, n_scatter)
            k = _round_half_away(f_d_hz * np.cos(alpha) * n * t_sym)
        gains.extend(g)
        delays.extend(d)
        dopplers.extend(k)

    return PathSet(
        gains=np.asarray(gains, dtype=complex),
        delays=np.asarray(delays, dtype=int),
        dopplers=np.asarray(dopplers, dtype=int),
        l_max=ell,
        k_max=max(k_max, abs(k0), 1),
    )


def worker_rng(root_seed: int, worker_index: int) -> np.random.Generator:
    """Generator for one Monte-Carlo worker.

    The stream is derived from ``SeedSequence((root_seed, worker_index))``,
    so workers are independent and the assignment is reproducible.
    """
    return np.random.default_rng(np.random.SeedSequence((root_seed, worker_index)))
