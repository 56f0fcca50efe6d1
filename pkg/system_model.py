"""State-space models of open linear quantum systems.

The annihilation-operator picture (𝒜, ℬ, 𝒞, 𝒟, ℰ) is the canonical storage;
the real quadrature picture (𝔸, 𝔹, ℂ, 𝔻, 𝔼) is derived from it on demand.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.stats import unitary_group

from doubled_algebra import (
    JJ,
    J,
    delta,
    doubled_residual,
    flat_adjoint,
    sharp_adjoint,
    to_complex_basis,
    to_quadrature_basis,
)
from utils import IMAG_ERROR_TOL, IMAG_TOL, SINGULAR_TOL, STRUCTURE_TOL
from utils import LOGGER as logger
from utils import (
    DimensionError,
    ParameterError,
    SingularityError,
    StructureError,
    as_matrix,
    norm,
)

###################
# PARAMETRIZATION #
###################


@dataclass(frozen=True)
class PhysicalParams:
    """(S, C₋, C₊, Ω₋, Ω₊, K) parametrization of a linear quantum system.

    The coupling operator is L = [C₋ C₊] ă and the Hamiltonian is
    H = ½ ă†Δ(Ω₋, Ω₊)ă + ă†K v̆ + v̆†K†ă.
    """

    n: int
    m: int
    l: int
    S: np.ndarray
    C_minus: np.ndarray
    C_plus: np.ndarray
    Omega_minus: np.ndarray
    Omega_plus: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        n, m, l = self.n, self.m, self.l
        shapes = {
            "S": (m, m),
            "C_minus": (m, n),
            "C_plus": (m, n),
            "Omega_minus": (n, n),
            "Omega_plus": (n, n),
            "K": (2 * n, 2 * l),
        }
        for name, shape in shapes.items():
            value = as_matrix(getattr(self, name), shape=shape, name=name)
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_blocks(
        cls,
        S,
        C_minus,
        Omega_minus,
        C_plus=None,
        Omega_plus=None,
        K=None,
        l=0,
    ):
        """Infers n, m and l from the block shapes; missing blocks are zero."""
        C_minus = np.atleast_2d(np.asarray(C_minus, dtype=complex))
        m, n = C_minus.shape
        if K is not None:
            l = np.asarray(K).shape[1] // 2
        return cls(
            n=n,
            m=m,
            l=l,
            S=S,
            C_minus=C_minus,
            C_plus=np.zeros((m, n)) if C_plus is None else C_plus,
            Omega_minus=Omega_minus,
            Omega_plus=np.zeros((n, n)) if Omega_plus is None else Omega_plus,
            K=np.zeros((2 * n, 2 * l)) if K is None else K,
        )

    @property
    def Omega(self):
        return delta(self.Omega_minus, self.Omega_plus)

    def residuals(self):
        return {
            "S": norm(self.S @ self.S.conj().T - np.eye(self.m)),
            "Omega_minus": norm(self.Omega_minus - self.Omega_minus.conj().T),
            "Omega_plus": norm(self.Omega_plus - self.Omega_plus.T),
        }

    def validate(self, tol=STRUCTURE_TOL):
        """Raises ParameterError naming the first violated invariant."""
        for name, residual in self.residuals().items():
            if residual > tol:
                raise ParameterError(
                    f"Invariant violated for '{name}': residual {residual:.3e} > tol {tol:.1e}",
                    field=name,
                    residual=residual,
                )
        return self


def is_passive(p: PhysicalParams, tol=STRUCTURE_TOL):
    """True when C₊, Ω₊ and the K₂, K₃ drive blocks vanish."""
    n, l = p.n, p.l
    K2, K3 = p.K[:n, l:], p.K[n:, :l]
    return all(
        norm(block) <= tol for block in (p.C_plus, p.Omega_plus, K2, K3)
    )


###############
# STATE SPACE #
###############


@dataclass(frozen=True)
class StateSpace:
    """Doubled-up complex system matrices.

    K keeps the drive coupling the matrices were built from, so that the
    quadrature drive matrix can be formed as JJ(𝕂 + 𝕂#) even for a K that
    is not doubled-up.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    K: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.A.shape[0] // 2

    @property
    def m(self):
        return self.D.shape[0] // 2

    @property
    def l(self):
        return self.E.shape[1] // 2

    @cached_property
    def quadrature(self):
        return to_quadrature(self)

    def structure_residuals(self):
        residuals = {
            name: doubled_residual(getattr(self, name))
            for name in ("A", "B", "C", "D")
        }
        residuals["D_annihilation_only"] = norm(
            self.D[: self.m, self.m :]
        )
        return residuals


@dataclass(frozen=True)
class QuadratureSystem:
    """Real quadrature system matrices of ẋ = 𝔸x + 𝔼u + 𝔹𝐮, 𝐲 = ℂx + 𝔻𝐮."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: Optional[np.ndarray] = None

    def __post_init__(self):
        n2 = np.shape(self.A)[0]
        m2 = np.shape(self.D)[0]
        E = np.zeros((n2, 0)) if self.E is None else self.E
        for name, value in zip("ABCDE", (self.A, self.B, self.C, self.D, E)):
            value = np.array(value, dtype=float)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if self.A.shape != (n2, n2) or n2 % 2:
            raise DimensionError(f"A must be 2n x 2n, got {self.A.shape}")
        if self.B.shape != (n2, m2) or self.C.shape != (m2, n2):
            raise DimensionError(
                f"Inconsistent B {self.B.shape} / C {self.C.shape} for n2={n2}, m2={m2}"
            )
        if self.E.shape[0] != n2:
            raise DimensionError(f"E must have {n2} rows, got {self.E.shape}")

    @property
    def n(self):
        return self.A.shape[0] // 2

    @property
    def m(self):
        return self.D.shape[0] // 2

    @property
    def l(self):
        return self.E.shape[1]

    def scattering_residual(self):
        return norm(self.D @ sharp_adjoint(self.D) - np.eye(2 * self.m))


@dataclass(frozen=True)
class RealizabilityReport:
    residual_A: float
    residual_B: float
    passes: bool
    passive_variant_used: bool
    passive_residual_A: Optional[float] = None
    passive_residual_B: Optional[float] = None

    def __bool__(self):
        return bool(self.passes)


@dataclass(frozen=True)
class ImpulseResponse:
    """g(t) = delta · δ(t) + smooth."""

    t: float
    smooth: np.ndarray
    delta: np.ndarray

    def structure_residual(self):
        """Doubled-up residual of the smooth kernel, relative to its norm."""
        return doubled_residual(self.smooth) / max(norm(self.smooth), 1.0)


def build_state_space(p: PhysicalParams, tol=STRUCTURE_TOL) -> StateSpace:
    """Builds the doubled-up system matrices of a parametrized system.

    Args:
        p: Physical parameters; their invariants are validated first.
        tol: Tolerance for the invariant checks.

    Returns:
        StateSpace with 𝒟 = Δ(S, 0), 𝒞 = Δ(C₋, C₊), ℬ = -𝒞^♭𝒟,
        𝒜 = -iJΩ - ½𝒞^♭𝒞 and ℰ = -i(JK + JJ K# [[0, I], [I, 0]]).
    """
    p.validate(tol)
    n, l = p.n, p.l
    D = delta(p.S, np.zeros_like(p.S))
    C = delta(p.C_minus, p.C_plus)
    Cflat = flat_adjoint(C)
    B = -Cflat @ D
    A = -1j * J(n) @ p.Omega - 0.5 * Cflat @ C
    swap = np.block(
        [[np.zeros((l, l)), np.eye(l)], [np.eye(l), np.zeros((l, l))]]
    )
    E = -1j * (J(n) @ p.K + JJ(n) @ p.K.conj() @ swap)
    return StateSpace(A, B, C, D, E, K=np.array(p.K))


def check_realizability(ss: StateSpace, tol=STRUCTURE_TOL):
    """Evaluates 𝒜 + 𝒜^♭ + ℬℬ^♭ = 0 and ℬ + 𝒞^♭𝒟 = 0.

    For annihilation-only systems the passive form A + A† + BB† = 0,
    B = -C†S is evaluated as well.
    """
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    residual_A = norm(A + flat_adjoint(A) + B @ flat_adjoint(B))
    residual_B = norm(B + flat_adjoint(C) @ D)
    passes = residual_A <= tol and residual_B <= tol

    n, m = ss.n, ss.m
    passive = all(
        norm(X[:k, r:]) <= tol
        for X, k, r in ((A, n, n), (B, n, m), (C, m, n), (D, m, m))
    )
    passive_A = passive_B = None
    if passive:
        A_, B_, C_, S_ = A[:n, :n], B[:n, :m], C[:m, :n], D[:m, :m]
        passive_A = norm(A_ + A_.conj().T + B_ @ B_.conj().T)
        passive_B = norm(B_ + C_.conj().T @ S_)
        passes = passes and passive_A <= tol and passive_B <= tol
    logger.debug(
        f"Realizability residuals: A={residual_A:.3e}, B={residual_B:.3e}"
    )
    return RealizabilityReport(
        residual_A=residual_A,
        residual_B=residual_B,
        passes=bool(passes),
        passive_variant_used=passive,
        passive_residual_A=passive_A,
        passive_residual_B=passive_B,
    )


def _real_part(X, name, tol_drop=IMAG_TOL, tol_error=IMAG_ERROR_TOL):
    residue = float(np.max(np.abs(X.imag), initial=0.0))
    if residue > tol_error:
        raise StructureError(
            f"{name} has imaginary residue {residue:.3e} after the basis change; input is not doubled-up"
        )
    if residue > tol_drop:
        logger.warning(
            f"{name}: dropping imaginary residue {residue:.3e} above {tol_drop:.0e}"
        )
    return X.real.copy()


def to_quadrature(ss: StateSpace) -> QuadratureSystem:
    """Conjugates the system into the real quadrature basis by V_k."""
    A = _real_part(to_quadrature_basis(ss.A), "A")
    B = _real_part(to_quadrature_basis(ss.B), "B")
    C = _real_part(to_quadrature_basis(ss.C), "C")
    D = _real_part(to_quadrature_basis(ss.D), "D")
    if ss.K is not None and ss.K.size:
        KK = to_quadrature_basis(ss.K)
        E = JJ(ss.n) @ (KK + KK.conj()).real
    else:
        E = _real_part(to_quadrature_basis(ss.E), "E")
    return QuadratureSystem(A, B, C, D, E)


def from_quadrature(qs: QuadratureSystem, tol=IMAG_ERROR_TOL) -> StateSpace:
    """Inverse basis change of to_quadrature."""
    matrices = [to_complex_basis(X) for X in (qs.A, qs.B, qs.C, qs.D, qs.E)]
    for name, X in zip("ABCDE", matrices):
        residual = doubled_residual(X)
        if residual > tol:
            raise StructureError(
                f"{name} is not doubled-up after the inverse basis change (residual {residual:.3e})"
            )
    return StateSpace(*matrices)


def quadrature_from_hamiltonian(H, C, D=None, E=None) -> QuadratureSystem:
    """Builds 𝔸 = JJℍ - ½ℂ^♯ℂ and 𝔹 = -ℂ^♯𝔻 from a quadrature Hamiltonian.

    Args:
        H: Real symmetric 2n x 2n matrix of H = ½ xᵀℍx.
        C: Real 2m x 2n output matrix.
        D: Real 2m x 2m scattering matrix, identity when omitted.
        E: Drive matrix, empty when omitted.
    """
    H = np.asarray(H, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = H.shape[0] // 2
    D = np.eye(C.shape[0]) if D is None else np.asarray(D, dtype=float)
    Csharp = sharp_adjoint(C).real
    A = JJ(n) @ H - 0.5 * Csharp @ C
    B = -Csharp @ D
    return QuadratureSystem(A, B, C, D, E)


def hamiltonian_from_quadrature(qs: QuadratureSystem):
    """Recovers ℍ from 𝔸 = JJℍ - ½ℂ^♯ℂ."""
    Csharp = sharp_adjoint(qs.C).real
    H = -JJ(qs.n) @ (qs.A + 0.5 * Csharp @ qs.C)
    return 0.5 * (H + H.T)


def normalize_scattering(qs: QuadratureSystem):
    """Absorbs 𝔻 into the output basis: ℂ' = 𝔻ᵀℂ, 𝔻' = I, 𝔹 unchanged."""
    if qs.scattering_residual() > STRUCTURE_TOL or norm(
        qs.D.T @ qs.D - np.eye(2 * qs.m)
    ) > STRUCTURE_TOL:
        raise StructureError("D must be orthogonal symplectic to normalize")
    return QuadratureSystem(qs.A, qs.B, qs.D.T @ qs.C, np.eye(2 * qs.m), qs.E)


############
# RESPONSE #
############


def transfer_function(ss: StateSpace, s: complex, tol=SINGULAR_TOL):
    """Returns Ξ(s) = 𝒞(sI - 𝒜)⁻¹ℬ + 𝒟.

    Raises:
        SingularityError: if s lies on the spectrum of 𝒜.
    """
    if ss.n == 0:
        return np.array(ss.D, dtype=complex)
    eigenvalues = np.linalg.eigvals(ss.A)
    distance = float(np.min(np.abs(eigenvalues - s), initial=np.inf))
    if distance <= tol:
        raise SingularityError(
            f"s={s} is within {distance:.1e} of an eigenvalue of A"
        )
    resolvent = s * np.eye(2 * ss.n) - ss.A
    logger.debug(f"cond(sI - A) at s={s}: {np.linalg.cond(resolvent):.3e}")
    return ss.C @ np.linalg.solve(resolvent, ss.B) + ss.D


def frequency_response(ss: StateSpace, omegas):
    """Evaluates Ξ(iω) on a grid, returning an array of shape (K, 2m, 2m)."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    stacked_D = np.broadcast_to(ss.D, (len(omegas),) + ss.D.shape)
    if ss.n == 0:
        return stacked_D.astype(complex)
    resolvent = 1j * omegas[:, None, None] * np.eye(2 * ss.n) - ss.A
    stacked_B = np.broadcast_to(ss.B, (len(omegas),) + ss.B.shape)
    return ss.C @ np.linalg.solve(resolvent, stacked_B) + ss.D


def impulse_response(ss: StateSpace, t: float) -> ImpulseResponse:
    """Impulse response 𝒟δ(t) - 𝒞 exp(𝒜t) 𝒞^♭𝒟 for t ≥ 0, zero before."""
    m2 = 2 * ss.m
    if t < 0:
        zero = np.zeros((m2, m2), dtype=complex)
        return ImpulseResponse(t, zero, zero)
    smooth = -ss.C @ expm(ss.A * t) @ flat_adjoint(ss.C) @ ss.D
    return ImpulseResponse(t, smooth, np.array(ss.D))


def flat_unitarity_residual(Xi):
    """‖Ξ^♭Ξ - I‖ for a transfer matrix."""
    return norm(flat_adjoint(Xi) @ Xi - np.eye(Xi.shape[0]))


############
# EXAMPLES #
############


def cavity(kappa, omega=0.0):
    """Single-mode cavity with decay rate κ and detuning ω."""
    return PhysicalParams.from_blocks(
        S=[[1.0]], C_minus=[[np.sqrt(kappa)]], Omega_minus=[[omega]]
    )


def optomechanical(omega, G, kappa):
    """Two mechanical oscillators coupled to a cavity with equal strengths G."""
    Omega_minus = np.array([[omega, 0, G], [0, -omega, G], [G, G, 0]])
    Omega_plus = np.array([[0, 0, G], [0, 0, G], [G, G, 0]])
    return PhysicalParams.from_blocks(
        S=[[1.0]],
        C_minus=[[0, 0, np.sqrt(kappa)]],
        Omega_minus=Omega_minus,
        Omega_plus=Omega_plus,
    )


def random_unitary(m, rng):
    if m == 1:
        return np.exp(1j * rng.uniform(0, 2 * np.pi)).reshape(1, 1)
    return unitary_group.rvs(m, random_state=rng)


def random_params(rng, n, m, l=0, passive=False):
    """Draws valid random physical parameters."""

    def cnormal(*shape):
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    X, Y = cnormal(n, n), cnormal(n, n)
    K1, K2 = cnormal(n, l), cnormal(n, l)
    return PhysicalParams.from_blocks(
        S=random_unitary(m, rng),
        C_minus=cnormal(m, n),
        C_plus=np.zeros((m, n)) if passive else cnormal(m, n),
        Omega_minus=0.5 * (X + X.conj().T),
        Omega_plus=np.zeros((n, n)) if passive else 0.5 * (Y + Y.T),
        K=delta(K1, np.zeros((n, l)) if passive else K2),
    )
