"""Steady-state response of linear quantum systems to photon and photon-Gaussian inputs.

Pulses are sampled on a uniform time grid. Transfer functions act per
frequency bin of the zero-padded FFT of the samples, so the identity part
of the impulse response is exact and never discretized.
"""
from dataclasses import dataclass
from itertools import permutations
from math import factorial
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import fft
from scipy.special import erfc, erfcx

from doubled_algebra import doubled_residual, to_complex_basis
from structural_analysis import is_hurwitz, kalman_decompose
from system_model import (
    PhysicalParams,
    StateSpace,
    build_state_space,
    frequency_response,
    is_passive,
    to_quadrature,
)
from utils import LOGGER as logger
from utils import (
    PAD_FACTOR,
    STRUCTURE_TOL,
    TENSOR_MAX_ENTRIES,
    DimensionError,
    ParameterError,
    PreconditionError,
    ResourceError,
    SchemaError,
    StateError,
    check_finite,
    from_pairs,
    norm,
    to_pairs,
)

NYQUIST_TOL = 0.1
NORM_TOL = 1e-6
MAX_CHANNELS = 2
MAX_PHOTONS = 2


##########
# PULSES #
##########


@dataclass(frozen=True)
class PulseShape:
    """Temporal pulse ξ(t) sampled at t0 + k·dt."""

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex).reshape(-1)
        if samples.size < 2:
            raise DimensionError(f"A pulse needs at least 2 samples, got {samples.size}")
        if self.dt <= 0:
            raise ParameterError(f"dt must be positive, got {self.dt}", field="dt")
        check_finite(samples, "pulse samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self))

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.samples) ** 2) * self.dt))

    def normalized(self):
        value = self.norm()
        if value == 0:
            raise StateError("Cannot normalize a zero pulse")
        return PulseShape(self.t0, self.dt, self.samples / value)

    def inner(self, other: "PulseShape"):
        """⟨self, other⟩ on the shared grid."""
        _check_same_grid([self, other])
        return complex(np.vdot(self.samples, other.samples) * self.dt)

    def to_frame(self):
        return pd.DataFrame(
            {"t": self.times, "re": self.samples.real, "im": self.samples.imag}
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame):
        missing = {"t", "re", "im"} - set(frame.columns)
        if missing:
            raise SchemaError(f"Pulse table is missing columns {sorted(missing)}")
        t = frame["t"].to_numpy(dtype=float)
        if t.size < 2:
            raise DimensionError("A pulse needs at least 2 samples")
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(abs(steps[0]), 1.0):
            raise SchemaError("Pulse samples must lie on a uniform time grid")
        samples = frame["re"].to_numpy(dtype=float) + 1j * frame["im"].to_numpy(dtype=float)
        return cls(float(t[0]), float(steps[0]), samples)


def gaussian_pulse(t0, dt, length, center=0.0, width=1.0):
    """Unit-norm pulse (πw²)^(-1/4) exp(-(t - c)²/2w²) on the grid t0 + k·dt."""
    if width <= 0:
        raise ParameterError(f"width must be positive, got {width}", field="width")
    t = t0 + dt * np.arange(length)
    samples = (np.pi * width**2) ** -0.25 * np.exp(-((t - center) ** 2) / (2 * width**2))
    return PulseShape(t0, dt, samples)


def cavity_output_oracle(t, kappa, center=0.0, width=1.0):
    """Closed-form output pulse of a resonant cavity driven by gaussian_pulse(center, width).

    Evaluates ξ(t) - κ∫₀^∞ exp(-κτ/2) ξ(t - τ) dτ with erfcx on the side where
    exp(x²)erfc(x) would overflow.
    """
    t = np.asarray(t, dtype=float)
    u = (t - center) / width
    b = kappa * width / 2
    x = (b - u) / np.sqrt(2)
    tail = np.empty_like(u)
    ahead = x >= 0
    tail[ahead] = np.exp(-u[ahead] ** 2 / 2) * erfcx(x[ahead])
    tail[~ahead] = np.exp(-b * u[~ahead] + b**2 / 2) * erfc(x[~ahead])
    amplitude = (np.pi * width**2) ** -0.25
    return amplitude * (np.exp(-(u**2) / 2) - kappa * width * np.sqrt(np.pi / 2) * tail)


def _check_same_grid(pulses):
    first = pulses[0]
    for pulse in pulses[1:]:
        same = (
            len(pulse) == len(first)
            and np.isclose(pulse.dt, first.dt)
            and np.isclose(pulse.t0, first.t0)
        )
        if not same:
            raise DimensionError("Pulses must share the same time grid")


#######################
# FREQUENCY-BIN LOGIC #
#######################


def fft_frequencies(length, dt):
    """Angular frequencies of the zero-padded FFT bins."""
    return 2 * np.pi * fft.fftfreq(PAD_FACTOR * length, d=dt)


def _transfer_bins(ss: StateSpace, omegas, tol=STRUCTURE_TOL):
    """Ξ(iω) per bin, requiring a steady state to exist.

    A system that is not Hurwitz is still accepted when its controllable and
    observable part is; the transfer function then comes from that block alone.
    """
    qs = to_quadrature(ss)
    if is_hurwitz(qs, tol):
        bins = frequency_response(ss, omegas)
    else:
        kd = kalman_decompose(qs)
        co = kd.blocks["co"]
        A_co = kd.A_bar[np.ix_(co, co)]
        if A_co.size and np.max(np.linalg.eigvals(A_co).real) >= -tol:
            raise PreconditionError(
                "System is not Hurwitz stable; the steady-state response is undefined"
            )
        logger.warning(
            f"System is not Hurwitz; using its {len(co) // 2}-mode controllable and observable block"
        )
        reduced = np.zeros((len(omegas),) + qs.D.shape)
        if co:
            B_co, C_co = kd.B_bar[co], kd.C_bar[:, co]
            resolvent = 1j * omegas[:, None, None] * np.eye(len(co)) - A_co
            stacked_B = np.broadcast_to(B_co, (len(omegas),) + B_co.shape)
            reduced = C_co @ np.linalg.solve(resolvent, stacked_B)
        quad_bins = qs.D @ (reduced + np.eye(qs.D.shape[0]))
        bins = np.stack([to_complex_basis(X) for X in quad_bins])
    edge = int(np.argmax(np.abs(omegas)))
    mismatch = norm(bins[edge] - ss.D)
    if mismatch > NYQUIST_TOL:
        logger.warning(
            f"Transfer function is not settled at the Nyquist frequency "
            f"(|Ξ(iω_max) - D| = {mismatch:.3f}); refine the time grid"
        )
    return bins


def _apply_bins(values, bins, channel_axis, time_axis):
    """Multiplies the FFT of values along time_axis by bins over channel_axis."""
    length = values.shape[time_axis]
    moved = np.moveaxis(values, (channel_axis, time_axis), (0, 1))
    spectrum = fft.fft(moved, n=bins.shape[0], axis=1)
    rest = spectrum.shape[2:]
    flat = spectrum.reshape(spectrum.shape[0], spectrum.shape[1], -1)
    out = np.einsum("krc,ckx->rkx", bins, flat)
    out = fft.ifft(out, axis=1)[:, :length].reshape((bins.shape[1], length) + rest)
    return np.moveaxis(out, (0, 1), (channel_axis, time_axis))


def _require_passive(params: PhysicalParams):
    if not is_passive(params):
        raise PreconditionError("Photon-number inputs need a passive system (C₊ = 0, Ω₊ = 0)")
    return build_state_space(params)


#########################
# SINGLE-PHOTON PULSES  #
#########################


def output_pulse_passive(params: PhysicalParams, mu: Sequence[PulseShape]) -> List[PulseShape]:
    """Steady-state output pulses ν[iω] = Ξ_G⁻[iω]μ[iω] of a passive system.

    Args:
        params: Passive physical parameters with a steady state.
        mu: One input pulse per channel, all on the same grid.

    Returns:
        One output pulse per channel on the input grid.

    Raises:
        PreconditionError: for non-passive or unstable systems.
        DimensionError: if the pulse count or grids do not match.
    """
    ss = _require_passive(params)
    mu = list(mu)
    if len(mu) != params.m:
        raise DimensionError(f"Expected {params.m} input pulses, got {len(mu)}")
    _check_same_grid(mu)
    first = mu[0]
    omegas = fft_frequencies(len(first), first.dt)
    bins = _transfer_bins(ss, omegas)[:, : params.m, : params.m]
    samples = np.stack([pulse.samples for pulse in mu])
    out = _apply_bins(samples, bins, 0, 1)
    return [PulseShape(first.t0, first.dt, row) for row in out]


##########################
# PHOTON-GAUSSIAN STATES #
##########################


def vacuum_R(m, bins):
    """Per-bin vacuum correlation block diag(I_m, 0)."""
    R = np.zeros((2 * m, 2 * m), dtype=complex)
    R[:m, :m] = np.eye(m)
    return np.broadcast_to(R, (bins, 2 * m, 2 * m)).copy()


@dataclass(frozen=True)
class PhotonGaussianSpec:
    """Photon-Gaussian state data: pulse matrix Δ(ξ⁻, ξ⁺) and Gaussian part R.

    Attributes:
        t0, dt: Shared time grid of the pulse entries.
        xi_minus, xi_plus: (m, m, L) arrays; entry [j, k] is the pulse ξ_jk(t).
        R: (PAD_FACTOR·L, 2m, 2m) Hermitian matrices on the padded FFT bins.
    """

    t0: float
    dt: float
    xi_minus: np.ndarray
    xi_plus: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        xi_minus = np.asarray(self.xi_minus, dtype=complex)
        xi_plus = np.asarray(self.xi_plus, dtype=complex)
        R = np.asarray(self.R, dtype=complex)
        if xi_minus.ndim != 3 or xi_minus.shape[0] != xi_minus.shape[1]:
            raise DimensionError(f"xi_minus must be (m, m, L), got {xi_minus.shape}")
        if xi_plus.shape != xi_minus.shape:
            raise DimensionError(f"xi_plus {xi_plus.shape} does not match xi_minus {xi_minus.shape}")
        m, _, length = xi_minus.shape
        if length < 2:
            raise DimensionError("Pulse entries need at least 2 samples")
        if R.shape != (PAD_FACTOR * length, 2 * m, 2 * m):
            raise DimensionError(
                f"R must have shape {(PAD_FACTOR * length, 2 * m, 2 * m)}, got {R.shape}"
            )
        hermitian = np.max(np.abs(R - np.conj(np.swapaxes(R, 1, 2))))
        if hermitian > STRUCTURE_TOL:
            raise ParameterError(f"R is not Hermitian (residual {hermitian:.2e})", field="R")
        for name, value in (("xi_minus", xi_minus), ("xi_plus", xi_plus), ("R", R)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def m(self):
        return self.xi_minus.shape[0]

    @property
    def length(self):
        return self.xi_minus.shape[2]

    @property
    def omegas(self):
        return fft_frequencies(self.length, self.dt)

    @property
    def xi(self):
        """Doubled pulse matrix [[ξ⁻, ξ⁺], [ξ⁺*, ξ⁻*]] as a (2m, 2m, L) array."""
        top = np.concatenate([self.xi_minus, self.xi_plus], axis=1)
        bottom = np.concatenate([self.xi_plus.conj(), self.xi_minus.conj()], axis=1)
        return np.concatenate([top, bottom], axis=0)

    def pulse(self, j, k, sign="-"):
        values = self.xi_minus if sign == "-" else self.xi_plus
        return PulseShape(self.t0, self.dt, values[j, k])

    def normalization(self) -> Optional[float]:
        """Tr ρ_ξ,R when it has a closed form, otherwise None.

        With ξ⁺ = 0 and a vacuum R the state is a product of single-photon
        creations, and its norm is the permanent of the Gram matrix of the
        columns of ξ⁻.
        """
        vacuum = vacuum_R(self.m, self.R.shape[0])
        if np.max(np.abs(self.xi_plus)) > 0 or np.max(np.abs(self.R - vacuum)) > STRUCTURE_TOL:
            return None
        columns = self.xi_minus
        gram = np.einsum("jkt,jlt->kl", columns.conj(), columns) * self.dt
        return float(
            np.real(
                sum(
                    np.prod([gram[k, perm[k]] for k in range(self.m)])
                    for perm in permutations(range(self.m))
                )
            )
        )

    def normalization_residual(self) -> Optional[float]:
        value = self.normalization()
        return None if value is None else abs(value - 1.0)


def photon_gaussian_transform(ss: StateSpace, spec: PhotonGaussianSpec) -> PhotonGaussianSpec:
    """Steady-state photon-Gaussian output: ξ_out = Ξξ_in and R_out = ΞR_inΞ† per bin.

    Raises:
        DimensionError: if the spec has a different channel count than the system.
        PreconditionError: if the system has no steady state.
    """
    if spec.m != ss.m:
        raise DimensionError(f"Spec has {spec.m} channels, system has {ss.m}")
    bins = _transfer_bins(ss, spec.omegas)
    xi_out = _apply_bins(spec.xi, bins, 0, 2)
    sampled_bins = range(0, spec.length, max(1, spec.length // 16))
    residual = max(doubled_residual(xi_out[:, :, k]) for k in sampled_bins)
    if residual > 1e-8:
        logger.warning(f"Output pulse matrix is not doubled-up (residual {residual:.2e})")
    m = spec.m
    R_out = bins @ spec.R @ np.conj(np.swapaxes(bins, 1, 2))
    R_out = 0.5 * (R_out + np.conj(np.swapaxes(R_out, 1, 2)))
    out = PhotonGaussianSpec(spec.t0, spec.dt, xi_out[:m, :m], xi_out[:m, m:], R_out)
    residual = out.normalization_residual()
    if residual is not None:
        logger.info(f"Photon-Gaussian output normalization residual {residual:.2e}")
    return out


#########################
# MULTI-PHOTON TENSORS  #
#########################


@dataclass(frozen=True)
class PhotonTensor:
    """ℓ-photon amplitude ψ[k₁, …, k_ℓ, t₁, …, t_ℓ] over m channels on a shared grid."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.ndim < 2 or values.ndim % 2:
            raise DimensionError(f"Tensor needs 2ℓ axes, got {values.ndim}")
        photons = values.ndim // 2
        channels, times = values.shape[:photons], values.shape[photons:]
        if len(set(channels)) != 1 or len(set(times)) != 1:
            raise DimensionError(f"Inconsistent tensor shape {values.shape}")
        if self.dt <= 0:
            raise ParameterError(f"dt must be positive, got {self.dt}", field="dt")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def photons(self):
        return self.values.ndim // 2

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[-1]

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.dt**self.photons))

    def symmetrized(self):
        """Average over joint permutations of the (channel, time) photon slots."""
        ell = self.photons
        total = np.zeros_like(self.values)
        for perm in permutations(range(ell)):
            total = total + np.transpose(self.values, list(perm) + [ell + p for p in perm])
        return PhotonTensor(self.t0, self.dt, total / factorial(ell))

    def normalization_constant(self):
        """⟨Ψ|Ψ⟩ of the unnormalized ℓ-photon state built from this amplitude."""
        sym = self.symmetrized().values
        overlap = np.vdot(self.values, sym) * self.dt**self.photons
        return float(factorial(self.photons) * overlap.real)

    def to_dict(self):
        return {
            "shape": list(self.values.shape),
            "t0": self.t0,
            "dt": self.dt,
            "values": to_pairs(self.values.reshape(-1)),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            shape = tuple(int(s) for s in data["shape"])
            flat = from_pairs(data["values"], "values")
            return cls(float(data["t0"]), float(data["dt"]), flat.reshape(shape))
        except KeyError as e:
            raise SchemaError(f"Tensor file is missing {e}") from e
        except ValueError as e:
            raise SchemaError(f"Tensor values do not match the declared shape: {e}") from e


def product_tensor(pulses: Sequence[PulseShape], channels: Sequence[int], m: int) -> PhotonTensor:
    """ψ = ξ₁(t₁)⋯ξ_ℓ(t_ℓ) with photon i in channel channels[i]."""
    _check_same_grid(list(pulses))
    ell, length = len(pulses), len(pulses[0])
    values = np.zeros((m,) * ell + (length,) * ell, dtype=complex)
    amplitude = pulses[0].samples
    for pulse in pulses[1:]:
        amplitude = np.multiply.outer(amplitude, pulse.samples)
    values[tuple(channels)] = amplitude
    return PhotonTensor(pulses[0].t0, pulses[0].dt, values)


def _tensor_bins(params: PhysicalParams, psi: PhotonTensor):
    ss = _require_passive(params)
    if psi.m != params.m:
        raise DimensionError(f"Tensor has {psi.m} channels, system has {params.m}")
    if psi.m > MAX_CHANNELS or psi.photons > MAX_PHOTONS:
        raise PreconditionError(
            f"Multi-photon transforms support up to {MAX_CHANNELS} channels and {MAX_PHOTONS} photons"
        )
    working = psi.values.size * PAD_FACTOR
    if working > TENSOR_MAX_ENTRIES:
        raise ResourceError(
            f"Multi-photon transform needs {working} entries, above the limit {TENSOR_MAX_ENTRIES}"
        )
    omegas = fft_frequencies(psi.length, psi.dt)
    return _transfer_bins(ss, omegas)[:, : params.m, : params.m]


def mode_product(params: PhysicalParams, psi: PhotonTensor, mode: int, bins=None) -> PhotonTensor:
    """Applies the impulse response g_G⁻ along photon slot `mode` of the tensor."""
    if not 0 <= mode < psi.photons:
        raise DimensionError(f"mode must be in 0..{psi.photons - 1}, got {mode}")
    bins = _tensor_bins(params, psi) if bins is None else bins
    values = _apply_bins(psi.values, bins, mode, psi.photons + mode)
    return PhotonTensor(psi.t0, psi.dt, values)


def multiphoton_transform(
    params: PhysicalParams, psi: Union[PhotonTensor, Sequence[PhotonTensor]]
) -> Union[PhotonTensor, List[PhotonTensor]]:
    """Steady-state output amplitude ψ ×₁ g_G⁻ ×₂ ⋯ ×_ℓ g_G⁻.

    A sequence of tensors, one per input channel, is transformed entry by entry.

    Raises:
        ResourceError: if the working arrays exceed the tensor size limit.
    """
    if not isinstance(psi, PhotonTensor):
        return [multiphoton_transform(params, tensor) for tensor in psi]
    bins = _tensor_bins(params, psi)
    out = psi
    for mode in range(psi.photons):
        out = mode_product(params, out, mode, bins)
    logger.debug(f"Transformed a {psi.photons}-photon tensor of shape {psi.values.shape}")
    return out
