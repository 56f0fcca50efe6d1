"""Quantum Kalman filter for homodyne measurement of the first m output quadratures.

The conditioned mean follows dπ = 𝔸π dt + 𝔼u dt + G dν with gain
G = s·Vℂ₁ᵀ + M, where ℂ₁ = [I_m 0]ℂ, M = 𝔹[I_m; 0]/√2 and s is the
homodyne scale. s = 1 is the literal textbook gain, whose worked example
uses vacuum covariance I; s = √2 is the gain consistent with the I/2
convention used everywhere else in this package.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.linalg import solve_continuous_are
from tqdm import tqdm

from doubled_algebra import JJ
from system_model import QuadratureSystem
from utils import LOGGER as logger
from utils import (
    DimensionError,
    ParameterError,
    check_finite,
    symmetrize,
    to_real_lists,
)

LITERAL_SCALE = 1.0
CONSISTENT_SCALE = float(np.sqrt(2.0))
VALIDITY_CHECK_EVERY = 10
VALIDITY_TOL = 1e-6
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class FilterConfig:
    """Simulation settings of a homodyne quantum Kalman filter.

    Attributes:
        qs: The filtered system.
        dt: Step size.
        horizon: Total simulated time.
        seed: Seed of the per-trajectory counter-based generator.
        initial_mean: π₀, defaults to zero.
        initial_cov: V₀, defaults to the vacuum covariance I/2.
        homodyne_scale: s in the gain s·Vℂ₁ᵀ + M.
        m_measured: Number of measured output channels, defaults to all.
    """

    qs: QuadratureSystem
    dt: float = 1e-3
    horizon: float = 1.0
    seed: int = 0
    initial_mean: Optional[np.ndarray] = None
    initial_cov: Optional[np.ndarray] = None
    homodyne_scale: float = CONSISTENT_SCALE
    m_measured: Optional[int] = None

    def __post_init__(self):
        n2 = 2 * self.qs.n
        if self.dt <= 0:
            raise ParameterError(f"dt must be positive, got {self.dt}", field="dt")
        if self.horizon <= 0:
            raise ParameterError(
                f"horizon must be positive, got {self.horizon}", field="horizon"
            )
        mean = (
            np.zeros(n2)
            if self.initial_mean is None
            else np.asarray(self.initial_mean, dtype=float).reshape(-1)
        )
        cov = (
            0.5 * np.eye(n2)
            if self.initial_cov is None
            else np.asarray(self.initial_cov, dtype=float)
        )
        if mean.shape != (n2,) or cov.shape != (n2, n2):
            raise DimensionError(
                f"Initial moments must have shapes {(n2,)} and {(n2, n2)}"
            )
        lowest = _min_validity_eigenvalue(cov)
        if lowest < -VALIDITY_TOL:
            raise ParameterError(
                f"initial_cov is not a valid quantum covariance (min eigenvalue {lowest:.3e})",
                field="initial_cov",
                residual=-lowest,
            )
        m = self.qs.m if self.m_measured is None else self.m_measured
        if not 0 < m <= self.qs.m:
            raise DimensionError(f"m_measured must be in 1..{self.qs.m}, got {m}")
        object.__setattr__(self, "initial_mean", mean)
        object.__setattr__(self, "initial_cov", symmetrize(cov))
        object.__setattr__(self, "m_measured", m)

    @property
    def C1(self):
        """[I_m 0]ℂ: output q-quadratures that are measured."""
        return self.qs.C[: self.m_measured]

    @property
    def M(self):
        """𝔹[I_m; 0]/√2."""
        return self.qs.B[:, : self.m_measured] / np.sqrt(2)

    @property
    def steps(self):
        return int(np.ceil(self.horizon / self.dt - 1e-9))

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    def to_dict(self):
        qs = self.qs
        return {
            "system": {
                name: to_real_lists(getattr(qs, name)) for name in ("A", "B", "C", "D", "E")
            },
            "dt": self.dt,
            "horizon": self.horizon,
            "seed": self.seed,
            "initial_mean": to_real_lists(self.initial_mean),
            "initial_cov": to_real_lists(self.initial_cov),
            "homodyne_scale": self.homodyne_scale,
            "m_measured": self.m_measured,
        }

    @classmethod
    def from_dict(cls, data):
        system = data["system"]
        n2 = len(system["A"])
        qs = QuadratureSystem(
            A=system["A"],
            B=system["B"],
            C=system["C"],
            D=system["D"],
            E=np.asarray(system.get("E", []), dtype=float).reshape(n2, -1),
        )
        return cls(
            qs=qs,
            dt=data["dt"],
            horizon=data["horizon"],
            seed=data.get("seed", 0),
            initial_mean=data.get("initial_mean"),
            initial_cov=data.get("initial_cov"),
            homodyne_scale=data.get("homodyne_scale", CONSISTENT_SCALE),
            m_measured=data.get("m_measured"),
        )


@dataclass(frozen=True)
class FilterTrajectory:
    """One filtered path: π_t, V_t, innovation increments and measurement increments."""

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    innovation: np.ndarray
    measurement_increments: np.ndarray
    seed: Optional[int] = None

    @property
    def measurement(self):
        """Cumulative Q_out record starting at zero."""
        m = self.measurement_increments.shape[1]
        return np.vstack([np.zeros((1, m)), np.cumsum(self.measurement_increments, axis=0)])


def _min_validity_eigenvalue(V):
    n = V.shape[0] // 2
    return float(np.linalg.eigvalsh(V + 0.5j * JJ(n))[0])


def filter_gain(config: FilterConfig, V):
    return config.homodyne_scale * V @ config.C1.T + config.M


def riccati_rhs(qs: QuadratureSystem, C1, M, V, homodyne_scale=LITERAL_SCALE):
    """𝔸V + V𝔸ᵀ + ½𝔹𝔹ᵀ - (sVℂ₁ᵀ + M)(sVℂ₁ᵀ + M)ᵀ, symmetrized."""
    A, B = qs.A, qs.B
    gain = homodyne_scale * V @ np.asarray(C1).T + np.asarray(M)
    return symmetrize(A @ V + V @ A.T + 0.5 * B @ B.T - gain @ gain.T)


def integrate_riccati(config: FilterConfig):
    """RK4 integration of the Riccati equation on the config time grid.

    Raises:
        DivergenceError: if V blows up or turns non-finite.
    """
    qs, C1, M, s, dt = config.qs, config.C1, config.M, config.homodyne_scale, config.dt

    def rhs(V):
        return riccati_rhs(qs, C1, M, V, s)

    covs = np.empty((config.steps + 1,) + config.initial_cov.shape)
    V = config.initial_cov.copy()
    covs[0] = V
    warned = False
    for k in range(config.steps):
        k1 = rhs(V)
        k2 = rhs(V + 0.5 * dt * k1)
        k3 = rhs(V + 0.5 * dt * k2)
        k4 = rhs(V + dt * k3)
        V = symmetrize(V + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        check_finite(V, f"Riccati solution at t={(k + 1) * dt:.4g}")
        covs[k + 1] = V
        if not warned and (k + 1) % VALIDITY_CHECK_EVERY == 0:
            lowest = _min_validity_eigenvalue(V)
            if lowest < -VALIDITY_TOL:
                logger.warning(
                    f"Conditional covariance violates the uncertainty bound at t={(k + 1) * dt:.4g} "
                    f"(min eigenvalue {lowest:.3e}); homodyne_scale={s:g}"
                )
                warned = True
    assert np.max(np.abs(covs - np.swapaxes(covs, 1, 2))) <= SYMMETRY_TOL, "V_t lost symmetry"
    return covs


def steady_state_riccati(config: FilterConfig):
    """Stabilizing solution of the algebraic Riccati equation."""
    s = config.homodyne_scale
    m = config.m_measured
    return symmetrize(
        solve_continuous_are(
            config.qs.A.T,
            config.C1.T,
            0.5 * config.qs.B @ config.qs.B.T,
            np.eye(m) / s**2,
            s=config.M / s,
        )
    )


def _wiener_increments(seed, steps, m, dt):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.normal(scale=np.sqrt(dt), size=(steps, m))


def _run(config, covs, drive, dQ=None, noise=None):
    """Euler–Maruyama loop over the conditioned mean.

    With ``noise`` the measurement increments are synthesized on the fly as
    dQ = dν/s + ℂ₁π dt; otherwise the given ``dQ`` record drives the filter.
    Both paths evaluate the update from dQ so that replays are bit-exact.
    """
    qs, C1, s, dt = config.qs, config.C1, config.homodyne_scale, config.dt
    times = config.times
    if dQ is None:
        dQ = np.empty_like(noise)
    means = np.empty((config.steps + 1, 2 * qs.n))
    innovation = np.empty_like(dQ)
    pi = config.initial_mean.copy()
    means[0] = pi
    for k in range(config.steps):
        if noise is not None:
            dQ[k] = noise[k] / s + C1 @ pi * dt
        dnu = s * (dQ[k] - C1 @ pi * dt)
        drift = qs.A @ pi
        if drive is not None and qs.l:
            drift = drift + qs.E @ np.atleast_1d(drive(times[k]))
        pi = pi + drift * dt + filter_gain(config, covs[k]) @ dnu
        check_finite(pi, f"conditioned mean at t={times[k + 1]:.4g}")
        means[k + 1] = pi
        innovation[k] = dnu
    return FilterTrajectory(times, means, covs, innovation, dQ, config.seed)


def simulate_filter(
    config: FilterConfig,
    drive: Optional[Callable[[float], np.ndarray]] = None,
    covs: Optional[np.ndarray] = None,
):
    """Simulates the conditioned mean driven by a Wiener innovation.

    The innovation increments come from a Philox generator keyed by
    ``config.seed``; the synthesized dQ_out record is stored on the trajectory
    and replay_filter reproduces the path exactly from it.

    Args:
        config: Filter settings.
        drive: Optional classical input u(t).
        covs: Precomputed Riccati solution, shared across seeds.
    """
    if drive is not None and config.qs.l == 0:
        logger.warning("System has no classical input channels; ignoring drive")
    if config.homodyne_scale == LITERAL_SCALE:
        logger.warning("Running the literal-convention filter (homodyne_scale=1)")
    covs = integrate_riccati(config) if covs is None else covs
    noise = _wiener_increments(config.seed, config.steps, config.m_measured, config.dt)
    return _run(config, covs, drive, noise=noise)


def replay_filter(config: FilterConfig, measurement_increments, drive=None):
    """Re-runs the filter on a stored record of dQ_out increments."""
    dQ = np.asarray(measurement_increments, dtype=float)
    if dQ.shape != (config.steps, config.m_measured):
        raise DimensionError(
            f"Measurement record has shape {dQ.shape}, expected {(config.steps, config.m_measured)}"
        )
    return _run(config, integrate_riccati(config), drive, dQ=dQ)


@dataclass(frozen=True)
class EnsembleResult:
    times: np.ndarray
    means: np.ndarray
    seeds: list = field(default_factory=list)

    def average(self):
        return self.means.mean(axis=0)

    def standard_error(self):
        return self.means.std(axis=0, ddof=1) / np.sqrt(self.means.shape[0])


def run_ensemble(config: FilterConfig, seeds, drive=None):
    """Simulates one path per seed, sharing the deterministic Riccati solution."""
    seeds = list(seeds)
    covs = integrate_riccati(config)
    means = np.empty((len(seeds), config.steps + 1, 2 * config.qs.n))
    for i, seed in enumerate(tqdm(seeds, desc="Filter ensemble")):
        trajectory = simulate_filter(replace(config, seed=seed), drive, covs)
        means[i] = trajectory.mean
    logger.info(f"Simulated {len(seeds)} filter paths")
    return EnsembleResult(config.times, means, seeds)


def trajectory_to_frame(trajectory: FilterTrajectory):
    """Flat table: t, pi_k, V_ij (upper triangle), dnu_k, dQ_k; increments are NaN on the first row."""
    n2 = trajectory.mean.shape[1]
    m = trajectory.innovation.shape[1]
    columns = {"t": trajectory.times}
    for k in range(n2):
        columns[f"pi_{k + 1}"] = trajectory.mean[:, k]
    for i in range(n2):
        for j in range(i, n2):
            columns[f"V_{i + 1}{j + 1}"] = trajectory.cov[:, i, j]
    pad = np.full((1, m), np.nan)
    innovation = np.vstack([pad, trajectory.innovation])
    increments = np.vstack([pad, trajectory.measurement_increments])
    for k in range(m):
        columns[f"dnu_{k + 1}"] = innovation[:, k]
    for k in range(m):
        columns[f"dQ_{k + 1}"] = increments[:, k]
    return pd.DataFrame(columns)


##############################
# SINGLE-MODE HOMODYNE MODEL #
##############################


def cavity_filter_config(kappa, omega, homodyne_scale=LITERAL_SCALE, **kwargs):
    """Damped single-mode cavity, H = ωa*a and L = √κ a, with Q_out measured.

    Raises:
        ParameterError: if kappa is not positive.
    """
    if kappa <= 0:
        raise ParameterError(f"kappa must be positive, got {kappa}", field="kappa")
    qs = QuadratureSystem(
        A=[[-kappa / 2, omega], [-omega, -kappa / 2]],
        B=-np.sqrt(kappa) * np.eye(2),
        C=np.sqrt(kappa) * np.eye(2),
        D=np.eye(2),
    )
    kwargs.setdefault("dt", 1e-3 / kappa)
    return FilterConfig(qs=qs, homodyne_scale=homodyne_scale, m_measured=1, **kwargs)


def cavity_riccati_odes(V, kappa, omega):
    """Closed-form (V̇₁, V̇₂, V̇₃) of the literal filter for the single-mode cavity."""
    V1, V2, V3 = V[0, 0], V[0, 1], V[1, 1]
    dV1 = (np.sqrt(2) - 1) * kappa * V1 + 2 * omega * V2 - kappa * V1**2
    dV2 = (
        -kappa * (1 - np.sqrt(2) / 2) * V2 - omega * (V1 - V3) - kappa * V1 * V2
    )
    dV3 = kappa / 2 - 2 * omega * V2 - kappa * V3 - kappa * V2**2
    return np.array([dV1, dV2, dV3])
