"""Gaussian states in the quadrature convention [x, xᵀ] = iJJ, vacuum covariance I/2.

Besides validity, Wigner and characteristic functions, this module bridges
single-mode states to truncated Fock space (qutip) to evaluate skew
information and the information-theoretic uncertainty relation.
"""
from dataclasses import dataclass
from typing import List

import numpy as np
import qutip as qt
from scipy.linalg import solve_continuous_lyapunov
from tqdm import tqdm

from doubled_algebra import JJ, J, quad_basis
from structural_analysis import is_hurwitz
from system_model import QuadratureSystem, quadrature_from_hamiltonian
from utils import LOGGER as logger
from utils import (
    FOCK_DEFAULT_N,
    FOCK_MAX_N,
    FOCK_MOMENT_TOL,
    FOCK_WARN_TOL,
    SINGULAR_TOL,
    STATE_TOL,
    DimensionError,
    PreconditionError,
    SingularityError,
    StateError,
    StructureError,
    check_finite,
    norm,
    symmetrize,
    to_real_lists,
)

CONVENTIONS = ("half", "unit")
GAUSS_HERMITE_NODES = 64
GAUSS_HERMITE_MAX_POINTS = 10**6


@dataclass(frozen=True)
class GaussianState:
    """First and second moments (μ, 𝕍) of a Gaussian state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or mean.size % 2:
            raise DimensionError(f"mean must be a vector of even length, got {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(
                f"cov has shape {cov.shape}, expected {(mean.size, mean.size)}"
            )
        asymmetry = float(np.max(np.abs(cov - cov.T), initial=0.0))
        if asymmetry > 1e-12:
            raise StructureError(f"cov is not symmetric (residual {asymmetry:.2e})")
        cov = symmetrize(cov)
        for array in (mean, cov):
            array.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self):
        return self.mean.size // 2

    def to_dict(self):
        return {"mean": to_real_lists(self.mean), "cov": to_real_lists(self.cov)}

    @classmethod
    def from_dict(cls, data):
        return cls(data["mean"], data["cov"])


def vacuum(n=1):
    return GaussianState(np.zeros(2 * n), 0.5 * np.eye(2 * n))


def thermal(nbar, n=1):
    return GaussianState(np.zeros(2 * n), (nbar + 0.5) * np.eye(2 * n))


def squeezed(r, theta=0.0):
    """Single-mode squeezed vacuum, anti-squeezed along angle theta/2 + π/2."""
    phi = theta / 2
    R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    return GaussianState(
        np.zeros(2), 0.5 * R @ np.diag([np.exp(-2 * r), np.exp(2 * r)]) @ R.T
    )


def coherent(alpha):
    alpha = complex(alpha)
    return GaussianState(
        np.sqrt(2) * np.array([alpha.real, alpha.imag]), 0.5 * np.eye(2)
    )


def convert_convention(cov, to="unit"):
    """Converts a covariance between the I/2 ("half") and I ("unit") vacuum conventions."""
    if to not in CONVENTIONS:
        raise ValueError(f"to must be one of {CONVENTIONS}, got {to!r}")
    cov = np.asarray(cov, dtype=float)
    return 2.0 * cov if to == "unit" else 0.5 * cov


##############
# VALIDITY   #
##############


@dataclass(frozen=True)
class ValidityResult:
    valid: bool
    min_eigenvalue: float
    min_eigenvalue_conjugate: float

    def __bool__(self):
        return bool(self.valid)


def is_valid(state: GaussianState, tol=STATE_TOL):
    """Tests 𝕍 ± (i/2)JJ ⪰ 0 by the smallest eigenvalue of both signs."""
    form = 0.5j * JJ(state.n)
    plus = float(np.linalg.eigvalsh(state.cov + form)[0])
    minus = float(np.linalg.eigvalsh(state.cov - form)[0])
    lowest = min(plus, minus)
    return ValidityResult(lowest >= -tol, plus, minus)


def is_pure(state: GaussianState, tol=STATE_TOL):
    """True iff det 𝕍 = 2^{-2n} within tol."""
    validity = is_valid(state)
    if not validity:
        raise PreconditionError(
            f"State is not physical (min eigenvalue {validity.min_eigenvalue:.3e})"
        )
    return abs(np.linalg.det(state.cov) - 2.0 ** (-2 * state.n)) <= tol


#######################
# PHASE-SPACE DENSITY #
#######################


def _inverse_and_det(cov):
    det = float(np.linalg.det(cov))
    if det <= SINGULAR_TOL:
        raise SingularityError(f"Covariance is singular (det {det:.3e})")
    return np.linalg.inv(cov), det


def wigner(state: GaussianState, w):
    """Gaussian Wigner density at w; w may carry leading batch axes.

    The density integrates to one, so the vacuum gives exp(-wᵀw)/π.
    """
    inv, det = _inverse_and_det(state.cov)
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 2 * state.n:
        raise DimensionError(f"w must end with axis of length {2 * state.n}")
    d = w - state.mean
    exponent = -0.5 * np.einsum("...i,ij,...j->...", d, inv, d)
    value = np.exp(exponent) / np.sqrt((2 * np.pi) ** (2 * state.n) * det)
    return float(value) if value.ndim == 0 else value


def wigner_grid(state: GaussianState, q, p):
    """Single-mode Wigner density on a (len(p), len(q)) grid."""
    if state.n != 1:
        raise DimensionError("wigner_grid is defined for single-mode states")
    Q, P = np.meshgrid(np.asarray(q, dtype=float), np.asarray(p, dtype=float))
    return wigner(state, np.stack([Q, P], axis=-1))


def wigner_normalization(state: GaussianState, nodes=GAUSS_HERMITE_NODES):
    """Integrates the Wigner density with tensor-product Gauss–Hermite quadrature."""
    n2 = 2 * state.n
    nodes = min(nodes, int(GAUSS_HERMITE_MAX_POINTS ** (1 / n2)))
    z, weights = np.polynomial.hermite.hermgauss(nodes)
    L = np.linalg.cholesky(state.cov)
    grid = np.stack(np.meshgrid(*([z] * n2), indexing="ij"), axis=-1).reshape(-1, n2)
    weight = np.prod(
        np.stack(np.meshgrid(*([weights] * n2), indexing="ij"), axis=-1).reshape(-1, n2),
        axis=1,
    )
    points = state.mean + np.sqrt(2) * grid @ L.T
    jacobian = np.sqrt(2) ** n2 * np.prod(np.diag(L))
    values = wigner(state, points) * np.exp(np.sum(grid**2, axis=1))
    return float(jacobian * np.sum(weight * values))


def characteristic(state: GaussianState, beta):
    """exp(-iμᵀJJβ - ½βᵀ𝕍β)."""
    beta = np.asarray(beta, dtype=float)
    return complex(
        np.exp(
            -1j * state.mean @ JJ(state.n) @ beta - 0.5 * beta @ state.cov @ beta
        )
    )


def characteristic_complex(state: GaussianState, alpha):
    """Annihilation-basis form exp(-γ̆†Jᾰ - ½ᾰ†Πᾰ) with γ̆ = V†μ and Π = V†𝕍V."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=complex))
    if alpha.size != state.n:
        raise DimensionError(f"alpha must have length {state.n}")
    V = quad_basis(state.n)
    doubled = np.concatenate([alpha, alpha.conj()])
    gamma = V.H @ state.mean
    Pi = V.H @ state.cov @ V.matrix
    return complex(
        np.exp(
            -gamma.conj() @ J(state.n) @ doubled
            - 0.5 * doubled.conj() @ Pi @ doubled
        )
    )


def sigma_from_pi(state: GaussianState):
    """Converts to the non-symmetrized Σ = E[(ă - γ̆)(ă - γ̆)†] = Π + J/2."""
    V = quad_basis(state.n)
    return V.H @ state.cov @ V.matrix + 0.5 * J(state.n)


############
# DYNAMICS #
############


@dataclass(frozen=True)
class MomentTrajectory:
    t: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def states(self) -> List[GaussianState]:
        return [GaussianState(m, symmetrize(c)) for m, c in zip(self.means, self.covs)]

    @property
    def final(self):
        return GaussianState(self.means[-1], symmetrize(self.covs[-1]))


def evolve_moments(qs: QuadratureSystem, state0: GaussianState, horizon, dt):
    """RK4 integration of dμ/dt = 𝔸μ and d𝕍/dt = 𝔸𝕍 + 𝕍𝔸ᵀ + ½𝔹𝔹ᵀ.

    Raises:
        DivergenceError: on non-finite or blown-up moments.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state0.n != qs.n:
        raise DimensionError(f"State has {state0.n} modes, system has {qs.n}")
    A, noise = qs.A, 0.5 * qs.B @ qs.B.T
    steps = int(np.ceil(horizon / dt - 1e-12))
    t = np.arange(steps + 1) * dt

    def rhs(mu, V):
        return A @ mu, A @ V + V @ A.T + noise

    means = np.empty((steps + 1, 2 * qs.n))
    covs = np.empty((steps + 1, 2 * qs.n, 2 * qs.n))
    mu, V = state0.mean.copy(), state0.cov.copy()
    means[0], covs[0] = mu, V
    for k in range(steps):
        k1 = rhs(mu, V)
        k2 = rhs(mu + 0.5 * dt * k1[0], V + 0.5 * dt * k1[1])
        k3 = rhs(mu + 0.5 * dt * k2[0], V + 0.5 * dt * k2[1])
        k4 = rhs(mu + dt * k3[0], V + dt * k3[1])
        mu = mu + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        V = V + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        check_finite(V, f"covariance at t={t[k + 1]:.4g}")
        means[k + 1], covs[k + 1] = mu, V
    return MomentTrajectory(t, means, covs)


def steady_state(qs: QuadratureSystem):
    """Stationary covariance solving 𝔸𝕍 + 𝕍𝔸ᵀ + ½𝔹𝔹ᵀ = 0 for Hurwitz 𝔸."""
    stability = is_hurwitz(qs)
    if not stability:
        raise PreconditionError(
            f"A is not Hurwitz (spectral abscissa {stability.abscissa:.3e})"
        )
    cov = solve_continuous_lyapunov(qs.A, -0.5 * qs.B @ qs.B.T)
    return GaussianState(np.zeros(2 * qs.n), symmetrize(cov))


######################
# STATE GENERATION   #
######################


@dataclass(frozen=True)
class PureStateGenerator:
    """Coherent system whose unique steady state is a target pure Gaussian state."""

    H: np.ndarray
    Lambda: np.ndarray
    system: QuadratureSystem
    target: GaussianState
    steady: GaussianState
    residual: float


def graph_covariance(X, Y):
    """𝕍 = ½𝕊𝕊ᵀ with 𝕊 = [[Y^{-1/2}, 0], [XY^{-1/2}, Y^{1/2}]]."""
    X, Y = np.atleast_2d(X).astype(float), np.atleast_2d(Y).astype(float)
    w, U = np.linalg.eigh(Y)
    Y_half = U @ np.diag(np.sqrt(w)) @ U.T
    Y_inv_half = U @ np.diag(1 / np.sqrt(w)) @ U.T
    S = np.block([[Y_inv_half, np.zeros_like(X)], [X @ Y_inv_half, Y_half]])
    return 0.5 * S @ S.T


def pure_state_generator(X, Y, R, Gamma, P, tol=1e-8):
    """Builds (ℍ, Λ) whose dissipative dynamics prepares the pure state of (X, Y).

    Args:
        X, Y: Real symmetric n x n; Y positive definite.
        R: Real symmetric n x n.
        Gamma: Real antisymmetric n x n.
        P: n x m matrix; (P, Q) must be controllable with Q = -iRY + Y⁻¹Γ.
        tol: Tolerance on the steady-state match.

    Raises:
        PreconditionError: if (P, Q) is not controllable or Y is not positive definite.
    """
    X, Y, R, Gamma = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (X, Y, R, Gamma))
    P = np.asarray(P)
    P = P.reshape(X.shape[0], -1)
    n = X.shape[0]
    if np.min(np.linalg.eigvalsh(Y)) <= 0:
        raise PreconditionError("Y must be positive definite")
    if norm(Gamma + Gamma.T) > 1e-12 or norm(R - R.T) > 1e-12:
        raise PreconditionError("R must be symmetric and Gamma antisymmetric")
    Y_inv = np.linalg.inv(Y)
    Q = -1j * R @ Y + Y_inv @ Gamma
    krylov = np.hstack([np.linalg.matrix_power(Q, k) @ P for k in range(n)])
    rank = np.linalg.matrix_rank(krylov)
    if rank < n:
        raise PreconditionError(f"(P, Q) is not controllable: rank {rank} < {n}")

    H = np.block(
        [
            [X @ R @ X + Y @ R @ Y - Gamma @ Y_inv @ X - X @ Y_inv @ Gamma.T, -X @ R + Gamma @ Y_inv],
            [-R @ X + Y_inv @ Gamma.T, R],
        ]
    )
    H = symmetrize(H)
    Lambda = P.T @ np.hstack([-(X + 1j * Y), np.eye(n)])
    C = np.sqrt(2) * np.vstack([Lambda.real, Lambda.imag])
    qs = quadrature_from_hamiltonian(H, C)
    target = GaussianState(np.zeros(2 * n), graph_covariance(X, Y))
    steady = steady_state(qs)
    residual = float(np.max(np.abs(steady.cov - target.cov)))
    if residual > tol:
        logger.warning(f"Generated steady state deviates from the target by {residual:.2e}")
    return PureStateGenerator(H, Lambda, qs, target, steady, residual)


###############
# FOCK BRIDGE #
###############


@dataclass(frozen=True)
class FockDensity:
    rho: np.ndarray
    moment_residual: float = 0.0

    @property
    def dim(self):
        return self.rho.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.rho).real)

    def qobj(self):
        return qt.Qobj(self.rho)


def quadrature_operators(N):
    """Truncated q = (a + a†)/√2 and p = -i(a - a†)/√2."""
    a = qt.destroy(N).full()
    return (a + a.conj().T) / np.sqrt(2), -1j * (a - a.conj().T) / np.sqrt(2)


def moments_from_fock(rho):
    """Mean and symmetrized covariance of (q, p) for a density matrix."""
    rho = rho.rho if isinstance(rho, FockDensity) else np.asarray(rho)
    q, p = quadrature_operators(rho.shape[0])
    ops = (q, p)
    mean = np.array([np.trace(rho @ x).real for x in ops])
    cov = np.empty((2, 2))
    for i, x in enumerate(ops):
        for j, y in enumerate(ops):
            second = 0.5 * np.trace(rho @ (x @ y + y @ x)).real
            cov[i, j] = second - mean[i] * mean[j]
    return GaussianState(mean, symmetrize(cov))


def single_mode_williamson(cov):
    """Splits a single-mode covariance into (ν, r, φ): 𝕍 = ν/2 R(φ) diag(e^{-2r}, e^{2r}) R(φ)ᵀ."""
    eigenvalues, vectors = np.linalg.eigh(cov)
    nu = 2 * np.sqrt(max(np.linalg.det(cov), 0.0))
    r = 0.25 * np.log(eigenvalues[1] / eigenvalues[0])
    phi = np.arctan2(vectors[1, 0], vectors[0, 0])
    return nu, r, phi


def _build_fock(state, N):
    nu, r, phi = single_mode_williamson(state.cov)
    nbar = max((nu - 1) / 2, 0.0)
    k = np.arange(N)
    weights = nbar**k / (nbar + 1) ** (k + 1)
    rho = qt.Qobj(np.diag(weights))
    S = qt.squeeze(N, r * np.exp(2j * phi))
    alpha = (state.mean[0] + 1j * state.mean[1]) / np.sqrt(2)
    D = qt.displace(N, alpha)
    rho = D * S * rho * S.dag() * D.dag()
    rho = rho.full()
    rho = 0.5 * (rho + rho.conj().T)
    moments = moments_from_fock(rho)
    residual = max(
        float(np.max(np.abs(moments.mean - state.mean))),
        float(np.max(np.abs(moments.cov - state.cov))),
    )
    return FockDensity(rho, residual)


def gaussian_to_fock(state: GaussianState, N=FOCK_DEFAULT_N, adaptive=True):
    """Represents a single-mode Gaussian state as a displaced squeezed thermal density matrix.

    With adaptive=True the truncation is doubled until the reconstructed
    moments match within FOCK_MOMENT_TOL or FOCK_MAX_N is reached.
    """
    if state.n != 1:
        raise DimensionError("The Fock bridge is defined for single-mode states")
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    validity = is_valid(state)
    if not validity:
        raise PreconditionError(
            f"State is not physical (min eigenvalue {validity.min_eigenvalue:.3e})"
        )
    fock = _build_fock(state, N)
    if adaptive and fock.moment_residual > FOCK_MOMENT_TOL:
        sizes = []
        size = N
        while size < FOCK_MAX_N:
            size = min(2 * size, FOCK_MAX_N)
            sizes.append(size)
        for size in tqdm(sizes, desc="Fock truncation", leave=False):
            fock = _build_fock(state, size)
            if fock.moment_residual <= FOCK_MOMENT_TOL:
                break
        logger.info(f"Fock truncation raised to N={fock.dim}")
    if fock.moment_residual > FOCK_WARN_TOL:
        logger.warning(
            f"Fock moment residual {fock.moment_residual:.2e} at N={fock.dim}; increase N"
        )
    logger.debug(f"Fock bridge N={fock.dim}, trace {fock.trace:.12f}")
    return fock


def _sqrt_density(rho):
    eigenvalues, vectors = np.linalg.eigh(rho)
    if eigenvalues[0] < -1e-8:
        raise StateError(f"Density matrix has negative eigenvalue {eigenvalues[0]:.3e}")
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (vectors * np.sqrt(eigenvalues)) @ vectors.conj().T


def variance(rho, X):
    rho = rho.rho if isinstance(rho, FockDensity) else np.asarray(rho)
    return float(np.trace(rho @ X @ X).real - np.trace(rho @ X).real ** 2)


def skew_information(rho, X):
    """Wigner–Yanase skew information -½Tr([√ρ, X]²)."""
    rho = rho.rho if isinstance(rho, FockDensity) else np.asarray(rho)
    root = _sqrt_density(rho)
    commutator = root @ X - X @ root
    return float(-0.5 * np.trace(commutator @ commutator).real)


def quantum_uncertainty(rho, X):
    """U = √(V² - (V - I)²) from variance V and skew information I."""
    V, I = variance(rho, X), skew_information(rho, X)
    return float(np.sqrt(max(V**2 - (V - I) ** 2, 0.0)))


@dataclass(frozen=True)
class UncertaintyReport:
    heisenberg_lhs: float
    heisenberg_rhs: float
    U_q: float
    U_p: float
    luo_lhs: float
    luo_rhs: float
    truncation: int
    moment_residual: float

    @property
    def heisenberg_holds(self):
        return self.heisenberg_lhs >= self.heisenberg_rhs - STATE_TOL

    def to_dict(self):
        return {
            "heisenberg_lhs": self.heisenberg_lhs,
            "heisenberg_rhs": self.heisenberg_rhs,
            "U_q": self.U_q,
            "U_p": self.U_p,
            "luo_lhs": self.luo_lhs,
            "luo_rhs": self.luo_rhs,
            "truncation": self.truncation,
            "moment_residual": self.moment_residual,
        }


def uncertainty_report(state: GaussianState, N=FOCK_DEFAULT_N):
    """Heisenberg product from the covariance, and the skew-information product via Fock space."""
    if state.n != 1:
        raise DimensionError("uncertainty_report is defined for single-mode states")
    fock = gaussian_to_fock(state, N)
    q, p = quadrature_operators(fock.dim)
    U_q, U_p = quantum_uncertainty(fock, q), quantum_uncertainty(fock, p)
    return UncertaintyReport(
        heisenberg_lhs=float(np.sqrt(state.cov[0, 0] * state.cov[1, 1])),
        heisenberg_rhs=0.5,
        U_q=U_q,
        U_p=U_p,
        luo_lhs=U_q * U_p,
        luo_rhs=0.25,
        truncation=fock.dim,
        moment_residual=fock.moment_residual,
    )
