"""Doubled-up matrix algebra shared by every other module.

Conventions:
    J_k = diag(I_k, -I_k) is the commutation matrix of the doubled
    annihilation vector (a, a#), and JJ_k = [[0, I_k], [-I_k, 0]] the one
    of the quadratures x = (q, p). V_k maps the first basis to the second.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from utils import STRUCTURE_TOL, DimensionError, norm


@dataclass(frozen=True)
class CheckResult:
    """Outcome of a structural predicate, truthy when it passes."""

    passes: bool
    residuals: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.passes)


def _even_dims(X, name="X"):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] % 2 or X.shape[1] % 2:
        raise DimensionError(
            f"{name} must have even row and column counts, got shape {X.shape}"
        )
    return X.shape[0] // 2, X.shape[1] // 2


def _read_only(array):
    array = np.array(array)
    array.setflags(write=False)
    return array


@lru_cache(maxsize=None)
def J(k):
    """Returns diag(I_k, -I_k)."""
    return _read_only(np.diag(np.r_[np.ones(k), -np.ones(k)]))


@lru_cache(maxsize=None)
def JJ(k):
    """Returns the symplectic form [[0, I_k], [-I_k, 0]]."""
    eye, zero = np.eye(k), np.zeros((k, k))
    return _read_only(np.block([[zero, eye], [-eye, zero]]))


def delta(U, V=None):
    """Builds the doubled-up matrix [[U, V], [V*, U*]]."""
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    V = np.zeros_like(U) if V is None else np.atleast_2d(np.asarray(V))
    if U.shape != V.shape:
        raise DimensionError(
            f"Blocks must share a shape, got {U.shape} and {V.shape}"
        )
    return np.block([[U, V], [V.conj(), U.conj()]])


def blocks(X):
    """Splits a 2k x 2r matrix into its four k x r blocks."""
    k, r = _even_dims(X)
    return X[:k, :r], X[:k, r:], X[k:, :r], X[k:, r:]


def doubled_residual(X):
    """Distance of X from the doubled-up form."""
    X11, X12, X21, X22 = blocks(np.asarray(X))
    return max(norm(X11 - X22.conj()), norm(X12 - X21.conj()))


def is_doubled_up(X, tol=STRUCTURE_TOL):
    residual = doubled_residual(X)
    return CheckResult(residual <= tol, {"doubled_up": residual})


@dataclass(frozen=True)
class DoubledMatrix:
    """A 2k x 2r matrix Δ(U, V) stored through its upper blocks.

    Attributes:
        upper_left: The U block, k x r.
        upper_right: The V block, k x r.
        asymmetry: Residual removed when built from a raw matrix.
    """

    upper_left: np.ndarray
    upper_right: np.ndarray
    asymmetry: float = 0.0

    def __post_init__(self):
        U = _read_only(np.atleast_2d(np.asarray(self.upper_left, complex)))
        V = _read_only(np.atleast_2d(np.asarray(self.upper_right, complex)))
        if U.shape != V.shape:
            raise DimensionError(
                f"Blocks must share a shape, got {U.shape} and {V.shape}"
            )
        object.__setattr__(self, "upper_left", U)
        object.__setattr__(self, "upper_right", V)

    @classmethod
    def from_full(cls, X):
        """Symmetrizes a raw matrix by averaging its redundant blocks."""
        X11, X12, X21, X22 = blocks(np.asarray(X, dtype=complex))
        return cls(
            0.5 * (X11 + X22.conj()),
            0.5 * (X12 + X21.conj()),
            asymmetry=doubled_residual(X),
        )

    @property
    def full(self):
        return delta(self.upper_left, self.upper_right)

    @property
    def shape(self):
        k, r = self.upper_left.shape
        return 2 * k, 2 * r

    def flat(self):
        return DoubledMatrix(
            self.upper_left.conj().T, -self.upper_right.T
        )

    def __add__(self, other):
        return DoubledMatrix(
            self.upper_left + other.upper_left,
            self.upper_right + other.upper_right,
        )

    def __matmul__(self, other):
        U1, V1 = self.upper_left, self.upper_right
        U2, V2 = other.upper_left, other.upper_right
        return DoubledMatrix(
            U1 @ U2 + V1 @ V2.conj(), U1 @ V2 + V1 @ U2.conj()
        )

    def __array__(self, dtype=None, copy=None):
        return self.full if dtype is None else self.full.astype(dtype)


def flat_adjoint(X):
    """Returns X^♭ = J_r X† J_k for a 2k x 2r matrix."""
    X = np.asarray(X)
    k, r = _even_dims(X)
    return J(r) @ X.conj().T @ J(k)


def sharp_adjoint(X):
    """Returns X^♯ = -JJ_r X† JJ_k for a 2k x 2r matrix."""
    X = np.asarray(X)
    k, r = _even_dims(X)
    return -JJ(r) @ X.conj().T @ JJ(k)


def is_bogoliubov(T, tol=STRUCTURE_TOL):
    """Tests T T^♭ = T^♭ T = I on a doubled-up square matrix.

    Returns:
        CheckResult: residuals "doubled_up", "left" and "right".
    """
    T = np.asarray(T, dtype=complex)
    if T.shape[0] != T.shape[1]:
        raise DimensionError(f"T must be square, got shape {T.shape}")
    eye = np.eye(T.shape[0])
    Tflat = flat_adjoint(T)
    residuals = {
        "doubled_up": doubled_residual(T),
        "left": norm(T @ Tflat - eye),
        "right": norm(Tflat @ T - eye),
    }
    return CheckResult(max(residuals.values()) <= tol, residuals)


def is_symplectic(S, tol=STRUCTURE_TOL):
    """Tests S S^♯ = S^♯ S = I."""
    S = np.asarray(S)
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"S must be square, got shape {S.shape}")
    eye = np.eye(S.shape[0])
    Ssharp = sharp_adjoint(S)
    residuals = {
        "left": norm(S @ Ssharp - eye),
        "right": norm(Ssharp @ S - eye),
    }
    return CheckResult(max(residuals.values()) <= tol, residuals)


@dataclass(frozen=True)
class QuadBasisUnitary:
    """The unitary V_k taking (a, a#) to the quadratures (q, p)."""

    k: int
    matrix: np.ndarray

    @property
    def H(self):
        return self.matrix.conj().T

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


@lru_cache(maxsize=None)
def _quad_matrix(k):
    eye = np.eye(k)
    return _read_only(
        np.block([[eye, eye], [-1j * eye, 1j * eye]]) / np.sqrt(2)
    )


def quad_basis(k):
    """Returns V_k = (1/√2)[[I, I], [-iI, iI]]."""
    if k < 1:
        raise DimensionError(f"quad_basis needs k >= 1, got {k}")
    return QuadBasisUnitary(k, _quad_matrix(k))


def to_quadrature_basis(X):
    """Conjugates a 2k x 2r matrix into V_k X V_r†, keeping it complex."""
    X = np.asarray(X)
    k, r = _even_dims(X)
    left = _quad_matrix(k) if k else np.zeros((0, 0))
    right = _quad_matrix(r) if r else np.zeros((0, 0))
    return left @ X @ right.conj().T


def to_complex_basis(X):
    """Inverse of to_quadrature_basis: V_k† X V_r."""
    X = np.asarray(X)
    k, r = _even_dims(X)
    left = _quad_matrix(k) if k else np.zeros((0, 0))
    right = _quad_matrix(r) if r else np.zeros((0, 0))
    return left.conj().T @ X @ right


def passive_orthogonal(U):
    """Real orthogonal symplectic image [[Re U, -Im U], [Im U, Re U]] of a unitary."""
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    return np.block([[U.real, -U.imag], [U.imag, U.real]])


def symplectic_eigenvalues(V):
    """Symplectic eigenvalues of a real positive definite 2n x 2n matrix.

    They are the moduli of the eigenvalues of i JJ V, each appearing twice.
    """
    V = np.asarray(V, dtype=float)
    n, _ = _even_dims(V)
    eig = np.linalg.eigvals(1j * JJ(n) @ V).real
    return np.sort(eig[eig > 0])
