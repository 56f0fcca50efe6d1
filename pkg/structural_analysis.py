"""Stability, controllability, observability and the quantum Kalman canonical form."""
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.linalg import svd

from doubled_algebra import JJ, is_symplectic, sharp_adjoint
from system_model import (
    QuadratureSystem,
    check_realizability,
    from_quadrature,
    hamiltonian_from_quadrature,
    normalize_scattering,
)
from utils import LOGGER as logger
from utils import (
    RANK_TOL,
    STRUCTURE_TOL,
    PreconditionError,
    StructureError,
    norm,
    to_real_lists,
)

SUBSPACE_LABELS = (
    "controllable",
    "observable",
    "co",
    "c_obar",
    "cbar_o",
    "cbar_obar",
)
INTERSECTION_TOL = 1e-7
PIVOT_TIE = 1e-9


@dataclass(frozen=True)
class SubspaceBasis:
    columns: np.ndarray
    label: str

    def __post_init__(self):
        if self.label not in SUBSPACE_LABELS:
            raise ValueError(f"Unknown subspace label {self.label!r}")

    @property
    def dim(self):
        return self.columns.shape[1]

    def projector(self):
        return self.columns @ self.columns.T


@dataclass(frozen=True)
class HurwitzResult:
    stable: bool
    abscissa: float

    def __bool__(self):
        return bool(self.stable)


def is_hurwitz(qs: QuadratureSystem, tol=STRUCTURE_TOL):
    """True iff every eigenvalue of 𝔸 has real part below -tol."""
    if qs.n == 0:
        return HurwitzResult(True, -np.inf)
    abscissa = float(np.max(np.linalg.eigvals(qs.A).real))
    return HurwitzResult(abscissa < -tol, abscissa)


def _orth(matrix, tol, what):
    """Orthonormal range basis with relative SVD threshold tol·σ_max."""
    rows = matrix.shape[0]
    if matrix.size == 0:
        return np.zeros((rows, 0))
    U, s, _ = np.linalg.svd(matrix, full_matrices=False)
    if s[0] == 0:
        return np.zeros((rows, 0))
    threshold = tol * s[0]
    rank = int(np.sum(s > threshold))
    lower, upper = int(np.sum(s > threshold * 10)), int(np.sum(s > threshold / 10))
    if lower != upper:
        logger.warning(
            f"Rank of the {what} subspace is ambiguous near threshold {threshold:.2e}: "
            f"candidate dims {lower} to {upper}, using {rank}"
        )
    return U[:, :rank]


def _krylov_subspace(A, B, tol, what):
    """Smallest A-invariant subspace containing range(B)."""
    scale = norm(A) or 1.0
    A = A / scale
    W = _orth(B, tol, what)
    while True:
        grown = _orth(np.hstack([W, A @ W]), tol, what)
        if grown.shape[1] == W.shape[1]:
            return W
        W = grown


def controllable_subspace(qs: QuadratureSystem, tol=RANK_TOL):
    """Orthonormal basis of range[𝔹, 𝔸𝔹, ..., 𝔸^{2n-1}𝔹]."""
    return SubspaceBasis(
        _krylov_subspace(qs.A, qs.B, tol, "controllable"), "controllable"
    )


def observable_subspace(qs: QuadratureSystem, tol=RANK_TOL):
    """Orthonormal basis of the row space of the observability matrix."""
    return SubspaceBasis(
        _krylov_subspace(qs.A.T, qs.C.T, tol, "observable"), "observable"
    )


def _intersection(P1, P2):
    """Orthonormal basis of range(P1) ∩ range(P2) for orthogonal projectors.

    Singular values of [I - P1; I - P2] are compared to an absolute cutoff.
    """
    eye = np.eye(P1.shape[0])
    _, s, Vh = svd(np.vstack([eye - P1, eye - P2]))
    return Vh[s <= INTERSECTION_TOL].T


def _pivoted_basis(W, preference, dim):
    """Orthonormal basis of range(W) aligned with coordinate axes.

    Axes are tried in preference order; the one with the largest projection
    wins, earlier axes win ties. Each vector is signed so its pivot is positive.
    """
    P = W @ W.T
    chosen = []
    for _ in range(dim):
        projections = P[:, preference]
        norms = np.linalg.norm(projections, axis=0)
        best = norms.max()
        k = int(np.argmax(norms >= best * (1 - PIVOT_TIE)))
        v = projections[:, k] / norms[k]
        if v[preference[k]] < 0:
            v = -v
        chosen.append(v)
        P = P - np.outer(v, v)
    return np.array(chosen).T.reshape(W.shape[0], dim)


def _symplectic_pairs(W, n, dim_pairs):
    """Splits a JJ-invariant subspace into canonical pairs (e, -JJ e)."""
    P = W @ W.T
    q_axes, p_axes = [], []
    for _ in range(dim_pairs):
        e = _pivoted_basis(P, list(range(2 * n)), 1)[:, 0]
        f = -JJ(n) @ e
        leak = norm(f - P @ f)
        if leak > 1e-8:
            raise StructureError(
                f"Subspace is not invariant under the symplectic form (leak {leak:.2e})"
            )
        q_axes.append(e)
        p_axes.append(f)
        P = P - np.outer(e, e) - np.outer(f, f)
    shape = (2 * n, dim_pairs)
    return np.array(q_axes).T.reshape(shape), np.array(p_axes).T.reshape(shape)


@dataclass(frozen=True)
class KalmanDecomposition:
    """Quantum Kalman canonical form x̃ = Tᵀx = (q_h, p_h, x_co, x_c̄ō).

    Attributes:
        T: Real orthogonal blockwise symplectic transform.
        dims: (n_h, n_co, n_cbar_obar), in modes.
        A_bar, B_bar, C_bar: Transformed system matrices.
        qnd_indices: p_h coordinates, the QND variables.
        qmfs_indices: p_h coordinates, which mutually commute at all times.
        dfs_indices: x_c̄ō coordinates, the decoherence-free subsystem.
        system: The scattering-normalized system that was decomposed.
    """

    T: np.ndarray
    dims: tuple
    A_bar: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray
    qnd_indices: List[int]
    qmfs_indices: List[int]
    dfs_indices: List[int]
    system: QuadratureSystem
    subspaces: Dict[str, SubspaceBasis] = field(default_factory=dict)
    residuals: Dict[str, float] = field(default_factory=dict)
    scattering_normalized: bool = False

    @property
    def blocks(self):
        """Index ranges of q_h, p_h, x_co and x_c̄ō."""
        n_h, n_co, n_cc = self.dims
        edges = np.cumsum([0, n_h, n_h, 2 * n_co, 2 * n_cc])
        names = ("q_h", "p_h", "co", "cbar_obar")
        return {
            name: list(range(edges[k], edges[k + 1]))
            for k, name in enumerate(names)
        }

    @property
    def labels(self):
        """Coordinate names of x̃."""
        n_h, n_co, n_cc = self.dims
        return (
            [f"q_h{k + 1}" for k in range(n_h)]
            + [f"p_h{k + 1}" for k in range(n_h)]
            + [f"q_co{k + 1}" for k in range(n_co)]
            + [f"p_co{k + 1}" for k in range(n_co)]
            + [f"q_cbar_obar{k + 1}" for k in range(n_cc)]
            + [f"p_cbar_obar{k + 1}" for k in range(n_cc)]
        )

    def to_dict(self):
        return {
            "dims": {
                "n_h": self.dims[0],
                "n_co": self.dims[1],
                "n_cbar_obar": self.dims[2],
            },
            "labels": self.labels,
            "qnd_indices": self.qnd_indices,
            "qmfs_indices": self.qmfs_indices,
            "dfs_indices": self.dfs_indices,
            "T": to_real_lists(self.T),
            "A_bar": to_real_lists(self.A_bar),
            "B_bar": to_real_lists(self.B_bar),
            "C_bar": to_real_lists(self.C_bar),
            "residuals": self.residuals,
            "scattering_normalized": self.scattering_normalized,
        }


def zero_pattern_residual(A_bar, B_bar, C_bar, blocks):
    """Largest entry outside the Kalman canonical zero pattern."""
    hq, hp, co, cc = (blocks[k] for k in ("q_h", "p_h", "co", "cbar_obar"))
    not_hp = hq + co + cc
    pieces = [
        A_bar[np.ix_(hp, not_hp)],
        A_bar[np.ix_(co, hq + cc)],
        A_bar[np.ix_(cc, hq + co)],
        B_bar[hp + cc, :],
        C_bar[:, hq + cc],
    ]
    return max(
        (float(np.max(np.abs(piece))) for piece in pieces if piece.size),
        default=0.0,
    )


def _prepare(qs, tol):
    report = check_realizability(from_quadrature(qs), tol=max(tol, 1e-8))
    if not report.passes:
        raise PreconditionError(
            f"System is not physically realizable (residuals {report.residual_A:.2e}, {report.residual_B:.2e})"
        )
    normalized = norm(qs.D - np.eye(2 * qs.m)) > STRUCTURE_TOL
    if normalized:
        logger.info("Absorbing the scattering matrix into the output basis")
        qs = normalize_scattering(qs)
    return qs, normalized


def kalman_decompose(qs: QuadratureSystem, tol=RANK_TOL):
    """Computes the quantum Kalman canonical form of a realizable system.

    Args:
        qs: Quadrature system; a non-identity 𝔻 is first absorbed into ℂ.
        tol: Relative singular value threshold for subspace ranks.

    Returns:
        KalmanDecomposition with coordinates ordered (q_h, p_h, x_co, x_c̄ō).

    Raises:
        PreconditionError: if the system is not physically realizable.
        StructureError: if the subspaces do not split as expected.
    """
    qs, normalized = _prepare(qs, tol)
    n = qs.n
    eye = np.eye(2 * n)
    Rc = controllable_subspace(qs, tol)
    Ro = observable_subspace(qs, tol)
    Pc, Po = Rc.projector(), Ro.projector()
    spaces = {
        "co": _intersection(Pc, Po),
        "c_obar": _intersection(Pc, eye - Po),
        "cbar_o": _intersection(eye - Pc, Po),
        "cbar_obar": _intersection(eye - Pc, eye - Po),
    }
    dims = {k: v.shape[1] for k, v in spaces.items()}
    if sum(dims.values()) != 2 * n:
        raise StructureError(
            f"Subspace dimensions {dims} do not add up to {2 * n}"
        )
    if dims["c_obar"] != dims["cbar_o"] or dims["co"] % 2 or dims["cbar_obar"] % 2:
        raise StructureError(f"Subspace dimensions {dims} cannot be paired")
    n_h, n_co, n_cc = dims["cbar_o"], dims["co"] // 2, dims["cbar_obar"] // 2

    p_first = list(range(n, 2 * n)) + list(range(n))
    F = _pivoted_basis(spaces["cbar_o"], p_first, n_h)
    E = JJ(n) @ F
    P_cobar = spaces["c_obar"] @ spaces["c_obar"].T
    leak = norm(E - P_cobar @ E) if n_h else 0.0
    if leak > 1e-8:
        raise StructureError(
            f"Conjugate of the uncontrollable-observable block leaves the controllable-unobservable subspace (leak {leak:.2e})"
        )
    E_co, F_co = _symplectic_pairs(spaces["co"], n, n_co)
    E_cc, F_cc = _symplectic_pairs(spaces["cbar_obar"], n, n_cc)
    T = np.hstack([E, F, E_co, F_co, E_cc, F_cc])

    A_bar, B_bar, C_bar = T.T @ qs.A @ T, T.T @ qs.B, qs.C @ T
    decomposition = KalmanDecomposition(
        T=T,
        dims=(n_h, n_co, n_cc),
        A_bar=A_bar,
        B_bar=B_bar,
        C_bar=C_bar,
        qnd_indices=[],
        qmfs_indices=[],
        dfs_indices=[],
        system=qs,
        subspaces={
            "controllable": Rc,
            "observable": Ro,
            **{k: SubspaceBasis(v, k) for k, v in spaces.items()},
        },
        scattering_normalized=normalized,
    )
    blocks = decomposition.blocks
    decomposition.qnd_indices.extend(blocks["p_h"])
    decomposition.qmfs_indices.extend(blocks["p_h"])
    decomposition.dfs_indices.extend(blocks["cbar_obar"])
    decomposition.residuals.update(
        {
            "orthogonality": norm(T.T @ T - eye),
            "symplectic": is_symplectic(
                T @ _block_permutation(n_h, n_co, n_cc), tol=1.0
            ).residuals["left"],
            "zero_pattern": zero_pattern_residual(A_bar, B_bar, C_bar, blocks),
            "conjugate_leak": leak,
        }
    )
    logger.info(
        f"Kalman decomposition: n_h={n_h}, n_co={n_co}, n_cbar_obar={n_cc}; "
        f"zero-pattern residual {decomposition.residuals['zero_pattern']:.2e}"
    )
    return decomposition


def _block_permutation(n_h, n_co, n_cc):
    """Permutation taking x̃ = (q_h, p_h, q_co, p_co, ...) to (all q, all p)."""
    n = n_h + n_co + n_cc
    order = []
    offset = 0
    for size in (n_h, n_co, n_cc):
        order.append((offset, size))
        offset += 2 * size
    q_idx = [o + k for o, s in order for k in range(s)]
    p_idx = [o + s + k for o, s in order for k in range(s)]
    perm = np.zeros((2 * n, 2 * n))
    for target, source in enumerate(q_idx + p_idx):
        perm[source, target] = 1.0
    return perm


@dataclass(frozen=True)
class DecomposedDynamics:
    """Named sub-blocks of the Kalman canonical form.

    ẋ_c̄ō = A_cbar_obar x_c̄ō + A31 p_h
    ẋ_co = A_co x_co + A21 p_h + B_co u
    ṗ_h  = A_h22 p_h
    q̇_h  = A_h11 q_h + A_h12 p_h + A12 x_co + A13 x_c̄ō + B_h u
    y    = C_h p_h + C_co x_co + D u
    """

    A_h11: np.ndarray
    A_h12: np.ndarray
    A12: np.ndarray
    A13: np.ndarray
    A_h22: np.ndarray
    A21: np.ndarray
    A_co: np.ndarray
    A31: np.ndarray
    A_cbar_obar: np.ndarray
    B_h: np.ndarray
    B_co: np.ndarray
    C_h: np.ndarray
    C_co: np.ndarray
    D: np.ndarray
    labels: List[str]
    matrix: np.ndarray

    def coefficient(self, row, column):
        """Coefficient of coordinate `column` in the derivative of `row`."""
        return float(
            self.matrix[self.labels.index(row), self.labels.index(column)]
        )

    def equations(self, precision=6):
        """Renders one text line per coordinate."""
        lines = []
        for i, name in enumerate(self.labels):
            terms = [
                f"{self.matrix[i, j]:+.{precision}g}*{other}"
                for j, other in enumerate(self.labels)
                if abs(self.matrix[i, j]) > 10 ** (-precision)
            ]
            lines.append(f"d{name}/dt = {' '.join(terms) or '0'}")
        return lines


def decomposed_dynamics(kd: KalmanDecomposition, conservative=False):
    """Splits the transformed drift into the blocks of the canonical cascade.

    Args:
        kd: A decomposition.
        conservative: Keep only the Hamiltonian part JJ H̃ of the drift,
            i.e. the dynamics with the field dissipation omitted.
    """
    A = kd.A_bar
    if conservative:
        qs = kd.system
        A = kd.T.T @ (qs.A + 0.5 * sharp_adjoint(qs.C).real @ qs.C) @ kd.T
    b = kd.blocks
    hq, hp, co, cc = b["q_h"], b["p_h"], b["co"], b["cbar_obar"]

    def sub(M, rows, cols):
        return M[np.ix_(rows, cols)]

    return DecomposedDynamics(
        A_h11=sub(A, hq, hq),
        A_h12=sub(A, hq, hp),
        A12=sub(A, hq, co),
        A13=sub(A, hq, cc),
        A_h22=sub(A, hp, hp),
        A21=sub(A, co, hp),
        A_co=sub(A, co, co),
        A31=sub(A, cc, hp),
        A_cbar_obar=sub(A, cc, cc),
        B_h=kd.B_bar[hq, :],
        B_co=kd.B_bar[co, :],
        C_h=kd.C_bar[:, hp],
        C_co=kd.C_bar[:, co],
        D=np.array(kd.system.D),
        labels=kd.labels,
        matrix=A,
    )


###########################
# PARAMETERS AND BAE      #
###########################


@dataclass(frozen=True)
class CouplingBlocks:
    """Λ̃ = ΛT and H̃ = TᵀℍT split along the canonical blocks."""

    Lambda_h: np.ndarray
    Lambda_co_q: np.ndarray
    Lambda_co_p: np.ndarray
    H_tilde: np.ndarray
    H_co: np.ndarray


def coupling_blocks(kd: KalmanDecomposition):
    qs = kd.system
    m = qs.m
    Lambda = (qs.C[:m] + 1j * qs.C[m:]) / np.sqrt(2)
    Lambda_tilde = Lambda @ kd.T
    H_tilde = kd.T.T @ hamiltonian_from_quadrature(qs) @ kd.T
    b = kd.blocks
    n_co = kd.dims[1]
    co = b["co"]
    return CouplingBlocks(
        Lambda_h=Lambda_tilde[:, b["p_h"]],
        Lambda_co_q=Lambda_tilde[:, co[:n_co]],
        Lambda_co_p=Lambda_tilde[:, co[n_co:]],
        H_tilde=H_tilde,
        H_co=H_tilde[np.ix_(co, co)],
    )


BAE_DIRECTIONS = ("p_in->q_out", "q_in->p_out")


@dataclass(frozen=True)
class BAEResult:
    holds: bool
    max_residual: float
    direct_residual: float
    skipped: List[complex] = field(default_factory=list)

    def __bool__(self):
        return bool(self.holds)


def check_bae(
    kd: KalmanDecomposition,
    direction="p_in->q_out",
    sample_points=(0.5j, 1.0 + 1.0j, 2.0, -0.3 + 3.0j),
    tol=1e-9,
):
    """Tests back-action evasion through the co-block criterion.

    The rational function built from Λ_co and H_co is evaluated at the sample
    points and cross-checked against the direct transfer-function block.
    """
    if direction not in BAE_DIRECTIONS:
        raise ValueError(f"direction must be one of {BAE_DIRECTIONS}")
    blocks = coupling_blocks(kd)
    part = np.real if direction == "p_in->q_out" else np.imag
    Lq, Lp = part(blocks.Lambda_co_q), part(blocks.Lambda_co_p)
    left = np.hstack([Lq, Lp])
    right = np.vstack([Lp.T, -Lq.T])
    n_co = kd.dims[1]
    generator = JJ(n_co) @ blocks.H_co if n_co else np.zeros((0, 0))

    qs = kd.system
    m = qs.m
    out_rows, in_cols = (
        (slice(0, m), slice(m, 2 * m))
        if direction == "p_in->q_out"
        else (slice(m, 2 * m), slice(0, m))
    )
    values, direct, skipped = [0.0], [0.0], []
    spectrum = np.concatenate(
        [np.linalg.eigvals(generator), np.linalg.eigvals(qs.A)]
    )
    for s in sample_points:
        if spectrum.size and np.min(np.abs(spectrum - s)) <= 1e-10:
            logger.info(f"Skipping BAE sample point {s} on the spectrum")
            skipped.append(s)
            continue
        if n_co:
            value = left @ np.linalg.solve(s * np.eye(2 * n_co) - generator, right)
            values.append(float(np.max(np.abs(value), initial=0.0)))
        Xi = qs.C @ np.linalg.solve(s * np.eye(2 * qs.n) - qs.A, qs.B) + qs.D
        direct.append(float(np.max(np.abs(Xi[out_rows, in_cols]))))
    max_residual, direct_residual = max(values), max(direct)
    holds = max_residual <= tol
    if holds != (direct_residual <= tol):
        logger.warning(
            f"BAE criterion ({max_residual:.2e}) and direct transfer block ({direct_residual:.2e}) disagree"
        )
    return BAEResult(holds, max_residual, direct_residual, skipped)


@dataclass(frozen=True)
class CouplingStructureReport:
    """Structural consequences of realizability for a quadrature system."""

    ctrb_rank: int
    obsv_rank: int
    ranks_equal: bool
    hurwitz: bool
    full_rank_if_hurwitz: bool
    cbar_obar_max_real: float
    cbar_obar_imaginary: bool

    @property
    def passes(self):
        return (
            self.ranks_equal
            and self.full_rank_if_hurwitz
            and self.cbar_obar_imaginary
        )


def verify_coupling_structure(qs: QuadratureSystem, tol=RANK_TOL, spectrum_tol=1e-10):
    """Checks rank equality, Hurwitz ⇒ full rank, and an imaginary c̄ō spectrum."""
    ctrb = controllable_subspace(qs, tol).dim
    obsv = observable_subspace(qs, tol).dim
    hurwitz = bool(is_hurwitz(qs))
    kd = kalman_decompose(qs, tol)
    cc = kd.blocks["cbar_obar"]
    block = kd.A_bar[np.ix_(cc, cc)]
    max_real = (
        float(np.max(np.abs(np.linalg.eigvals(block).real))) if cc else 0.0
    )
    return CouplingStructureReport(
        ctrb_rank=ctrb,
        obsv_rank=obsv,
        ranks_equal=ctrb == obsv,
        hurwitz=hurwitz,
        full_rank_if_hurwitz=(not hurwitz) or ctrb == obsv == 2 * qs.n,
        cbar_obar_max_real=max_real,
        cbar_obar_imaginary=max_real <= spectrum_tol,
    )
