"""Coherent feedback networks of linear open quantum systems.

Nodes are stored in (S, L, H) form over named oscillators, with
L = Λx + α and H = ½xᵀℍx + hᵀx where x = (q₁, ..., qₙ, p₁, ..., pₙ).
Constant energy offsets are dropped, only gradients of H enter the dynamics.
"""
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

from doubled_algebra import (
    JJ,
    delta,
    flat_adjoint,
    passive_orthogonal,
    quad_basis,
    to_complex_basis,
    to_quadrature_basis,
)
from system_model import (
    PhysicalParams,
    QuadratureSystem,
    build_state_space,
    check_realizability,
    from_quadrature,
    hamiltonian_from_quadrature,
    quadrature_from_hamiltonian,
    to_quadrature,
)
from utils import LOGGER as logger
from utils import STRUCTURE_TOL
from utils import (
    CausalityError,
    CompositionError,
    DimensionError,
    ParameterError,
    as_matrix,
    norm,
    symmetrize,
    to_real_lists,
)


def _array(value, shape, dtype=complex, name="array"):
    array = np.array(value, dtype=dtype)
    if array.shape != tuple(shape):
        raise DimensionError(f"{name} has shape {array.shape}, expected {tuple(shape)}")
    array.setflags(write=False)
    return array


def quad_vector(v):
    """Quadratures √2(Re v, Im v) of a complex amplitude vector."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    return np.sqrt(2.0) * np.concatenate([v.real, v.imag])


def _quad_index(channels, m):
    channels = list(channels)
    return channels + [m + c for c in channels]


def _stacked_order(sizes):
    """Permutation from block-stacked (q_i; p_i) to the global (q; p) order."""
    q, p, start = [], [], 0
    for size in sizes:
        q.extend(range(start, start + size))
        p.extend(range(start + size, start + 2 * size))
        start += 2 * size
    return np.array(q + p, dtype=int)


#############
# PARTITION #
#############


@dataclass(frozen=True)
class Partition:
    """Channel groups of a node inside a plant-controller loop.

    For a plant the three input groups are the free noise channels, the
    signal channels carrying w_p and the channels fed by the controller. For
    a controller they are the channels fed by the plant, free noise channels
    and the signal channels carrying w_k. Both use (free, measured, loop) as
    output groups, where loop outputs are sent to the other party.
    """

    inputs: Tuple[Tuple[int, ...], ...]
    outputs: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        for name in ("inputs", "outputs"):
            groups = tuple(tuple(int(c) for c in g) for g in getattr(self, name))
            if len(groups) != 3:
                raise DimensionError(f"Partition {name} needs 3 groups, got {len(groups)}")
            object.__setattr__(self, name, groups)

    @classmethod
    def default(cls, m):
        """Every input carries signal plus vacuum and every output is free."""
        channels = tuple(range(m))
        return cls(inputs=((), channels, ()), outputs=(channels, (), ()))

    def validate(self, m):
        for name, groups in (("inputs", self.inputs), ("outputs", self.outputs)):
            flat = sorted(c for g in groups for c in g)
            if flat != list(range(m)):
                raise CompositionError(
                    f"Partition {name} {groups} must cover channels 0..{m - 1} exactly once"
                )
        return self

    def shifted(self, offset):
        def shift(groups):
            return tuple(tuple(c + offset for c in g) for g in groups)

        return Partition(shift(self.inputs), shift(self.outputs))

    def to_dict(self):
        return {
            "inputs": [list(g) for g in self.inputs],
            "outputs": [list(g) for g in self.outputs],
        }


#######
# SLH #
#######


@dataclass(frozen=True)
class QuadraticForm:
    """H = ½xᵀℍx + hᵀx."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        n2 = H.shape[0] if H.ndim == 2 else -1
        if H.shape != (n2, n2):
            raise DimensionError(f"Quadratic form must be square, got {H.shape}")
        if norm(H - H.T) > STRUCTURE_TOL:
            raise ParameterError("Quadratic form is not symmetric", field="H")
        object.__setattr__(self, "H", _array(symmetrize(H), (n2, n2), float, "H"))
        object.__setattr__(self, "h", _array(np.reshape(self.h, -1), (n2,), float, "h"))

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((2 * n, 2 * n)), np.zeros(2 * n))

    def __add__(self, other):
        return QuadraticForm(self.H + other.H, self.h + other.h)

    def __sub__(self, other):
        return QuadraticForm(self.H - other.H, self.h - other.h)


@dataclass(frozen=True)
class SLHNode:
    """An open oscillator network node G = (S, L, H).

    Attributes:
        label: Node name.
        modes: Names of the oscillators; equal names in two nodes denote the same oscillator.
        S: Unitary m x m scattering matrix.
        Lambda: Complex m x 2n coupling with L = Λx + α.
        hamiltonian: Quadratic form of H.
        offset: Constant part α of L, coherent drives.
        drive: Real 2n x l classical drive matrix.
        partition: Channel groups used by closed_loop.
        interaction: Interaction Hamiltonian of the last series product that built this node.
    """

    label: str
    modes: Tuple[str, ...]
    S: np.ndarray
    Lambda: np.ndarray
    hamiltonian: QuadraticForm
    offset: Optional[np.ndarray] = None
    drive: Optional[np.ndarray] = None
    partition: Optional[Partition] = None
    interaction: Optional[QuadraticForm] = None

    def __post_init__(self):
        modes = tuple(str(mode) for mode in self.modes)
        if len(set(modes)) != len(modes):
            raise CompositionError(f"Node '{self.label}' repeats oscillator labels {modes}")
        object.__setattr__(self, "modes", modes)
        S = as_matrix(self.S, name="S")
        m, n = S.shape[0], len(modes)
        if S.shape != (m, m):
            raise DimensionError(f"S must be square, got {S.shape}")
        residual = norm(S @ S.conj().T - np.eye(m))
        if residual > STRUCTURE_TOL:
            raise ParameterError(
                f"S of node '{self.label}' is not unitary (residual {residual:.3e})",
                field="S",
                residual=residual,
            )
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        Lambda = np.array(self.Lambda, dtype=complex)
        if Lambda.ndim == 1:
            Lambda = Lambda.reshape(1, -1)
        object.__setattr__(self, "Lambda", _array(Lambda, (m, 2 * n), name="Lambda"))
        if self.hamiltonian.H.shape != (2 * n, 2 * n):
            raise DimensionError(
                f"Hamiltonian of node '{self.label}' must be {2 * n} x {2 * n}"
            )
        offset = np.zeros(m) if self.offset is None else np.reshape(self.offset, -1)
        object.__setattr__(self, "offset", _array(offset, (m,), name="offset"))
        drive = np.zeros((2 * n, 0)) if self.drive is None else np.array(self.drive, dtype=float)
        if drive.ndim == 1:
            drive = drive[:, None]
        object.__setattr__(
            self, "drive", _array(drive, (2 * n, drive.shape[1]), float, "drive")
        )
        partition = Partition.default(m) if self.partition is None else self.partition
        object.__setattr__(self, "partition", partition.validate(m))

    @classmethod
    def from_params(cls, params: PhysicalParams, label, modes=None, partition=None):
        """Node of a parametrized system; its K drive becomes the classical drive."""
        qs = to_quadrature(build_state_space(params))
        modes = tuple(f"{label}{k}" for k in range(params.n)) if modes is None else modes
        m = params.m
        Lambda = (qs.C[:m] + 1j * qs.C[m:]) / np.sqrt(2.0)
        hamiltonian = QuadraticForm(hamiltonian_from_quadrature(qs), np.zeros(2 * params.n))
        return cls(
            label=label,
            modes=modes,
            S=params.S,
            Lambda=Lambda,
            hamiltonian=hamiltonian,
            drive=qs.E,
            partition=partition,
        )

    @property
    def n(self):
        return len(self.modes)

    @property
    def m(self):
        return self.S.shape[0]

    @property
    def l(self):
        return self.drive.shape[1]

    @property
    def params(self) -> PhysicalParams:
        """(S, C₋, C₊, Ω₋, Ω₊) of the quadratic part; offsets and drives are not included."""
        n = self.n
        C = self.Lambda @ quad_basis(n).matrix
        Omega = to_complex_basis(self.hamiltonian.H)
        return PhysicalParams.from_blocks(
            S=self.S,
            C_minus=C[:, :n],
            Omega_minus=Omega[:n, :n],
            C_plus=C[:, n:],
            Omega_plus=Omega[:n, n:],
        )

    def index(self, mode, quadrature="q"):
        """Position of the q or p quadrature of a mode in x."""
        k = self.modes.index(mode)
        return k if quadrature == "q" else self.n + k

    def coupling_matrix(self):
        """ℂ = √2 [Re Λ; Im Λ]."""
        return np.sqrt(2.0) * np.vstack([self.Lambda.real, self.Lambda.imag])

    def _linear_system(self):
        return quadrature_from_hamiltonian(
            self.hamiltonian.H, self.coupling_matrix(), passive_orthogonal(self.S)
        )

    def constant_drift(self):
        """Drift produced by the offsets and the linear Hamiltonian.

        (S, Λx + α, H) equals the node driven by the coherent input S†α plus
        the Hamiltonian Im(α†Λ)x.
        """
        B = self._linear_system().B
        gradient = np.imag(self.offset.conj() @ self.Lambda) + self.hamiltonian.h
        return B @ quad_vector(self.S.conj().T @ self.offset) + JJ(self.n) @ gradient

    def output_offset(self):
        return quad_vector(self.offset)

    def to_quadrature(self) -> QuadratureSystem:
        """Quadrature system with E = [drive, constant drift], driven by u = (v, 1)."""
        qs = self._linear_system()
        E = np.hstack([self.drive, self.constant_drift()[:, None]])
        return replace(qs, E=E)

    def realizability(self, tol=STRUCTURE_TOL):
        qs = self.to_quadrature()
        return check_realizability(
            from_quadrature(QuadratureSystem(qs.A, qs.B, qs.C, qs.D)), tol
        )

    def with_partition(self, inputs, outputs):
        return replace(self, partition=Partition(inputs, outputs))


@dataclass(frozen=True)
class StaticComponent:
    """Pure scattering element such as a beamsplitter or a phase shifter."""

    unitary: np.ndarray
    label: str = "static"

    def __post_init__(self):
        U = as_matrix(self.unitary, name="unitary")
        if U.shape[0] != U.shape[1]:
            raise DimensionError(f"unitary must be square, got {U.shape}")
        residual = norm(U @ U.conj().T - np.eye(U.shape[0]))
        if residual > STRUCTURE_TOL:
            raise ParameterError(
                f"Static component is not unitary (residual {residual:.3e})",
                field="unitary",
                residual=residual,
            )
        U.setflags(write=False)
        object.__setattr__(self, "unitary", U)

    @property
    def m(self):
        return self.unitary.shape[0]

    def as_node(self):
        return SLHNode(
            label=self.label,
            modes=(),
            S=self.unitary,
            Lambda=np.zeros((self.m, 0)),
            hamiltonian=QuadraticForm.zeros(0),
        )


def phase_shifter(phi, label="phase"):
    return StaticComponent(np.array([[np.exp(1j * phi)]]), label)


def beamsplitter(theta, label="beamsplitter"):
    """Real beamsplitter [[cos θ, -sin θ], [sin θ, cos θ]]."""
    c, s = np.cos(theta), np.sin(theta)
    return StaticComponent(np.array([[c, -s], [s, c]]), label)


def embed_static(component: StaticComponent, m_total, channels):
    """Acts with a static component on some channels and as identity on the others."""
    channels = list(channels)
    if len(channels) != component.m:
        raise DimensionError(
            f"{component.label} acts on {component.m} channels, got {channels}"
        )
    U = np.eye(m_total, dtype=complex)
    U[np.ix_(channels, channels)] = component.unitary
    return StaticComponent(U, component.label)


###############
# COMPOSITION #
###############

Component = Union[SLHNode, StaticComponent]


def _as_node(g: Component) -> SLHNode:
    return g.as_node() if isinstance(g, StaticComponent) else g


def _embed(node: SLHNode, modes):
    """Lifts Λ, ℍ, h and the drive of a node onto a larger mode list."""
    N = len(modes)
    cols = [modes.index(mode) for mode in node.modes]
    cols = cols + [N + c for c in cols]
    Lambda = np.zeros((node.m, 2 * N), dtype=complex)
    Lambda[:, cols] = node.Lambda
    H = np.zeros((2 * N, 2 * N))
    H[np.ix_(cols, cols)] = node.hamiltonian.H
    h = np.zeros(2 * N)
    h[cols] = node.hamiltonian.h
    drive = np.zeros((2 * N, node.l))
    drive[cols] = node.drive
    return Lambda, QuadraticForm(H, h), drive


def concatenation(g1: Component, g2: Component, label=None) -> SLHNode:
    """G₁ ⊞ G₂ = (diag(S₁, S₂), [L₁; L₂], H₁ + H₂) on disjoint oscillators."""
    g1, g2 = _as_node(g1), _as_node(g2)
    shared = set(g1.modes) & set(g2.modes)
    if shared:
        raise CompositionError(
            f"Cannot concatenate '{g1.label}' and '{g2.label}': shared oscillators {sorted(shared)}"
        )
    modes = g1.modes + g2.modes
    L1, H1, E1 = _embed(g1, modes)
    L2, H2, E2 = _embed(g2, modes)
    S = np.block(
        [
            [g1.S, np.zeros((g1.m, g2.m))],
            [np.zeros((g2.m, g1.m)), g2.S],
        ]
    )
    p1, p2 = g1.partition, g2.partition.shifted(g1.m)
    partition = Partition(
        tuple(a + b for a, b in zip(p1.inputs, p2.inputs)),
        tuple(a + b for a, b in zip(p1.outputs, p2.outputs)),
    )
    return SLHNode(
        label=label or f"{g1.label}+{g2.label}",
        modes=modes,
        S=S,
        Lambda=np.vstack([L1, L2]),
        hamiltonian=H1 + H2,
        offset=np.concatenate([g1.offset, g2.offset]),
        drive=np.hstack([E1, E2]),
        partition=partition,
    )


def interaction_hamiltonian(S2, Lambda2, alpha2, Lambda1, alpha1):
    """Quadratic form of (1/2i)(L₂†S₂L₁ - L₁†S₂†L₂) for L_j = Λ_j x + α_j."""
    M = Lambda2.conj().T @ S2 @ Lambda1
    H = M.imag + M.imag.T
    h = np.imag(alpha2.conj() @ S2 @ Lambda1 + Lambda2.conj().T @ S2 @ alpha1)
    return QuadraticForm(H, h)


def series(g2: Component, g1: Component, label=None) -> SLHNode:
    """G₂ ◁ G₁: the outputs of G₁ feed the inputs of G₂.

    Returns (S₂S₁, L₂ + S₂L₁, H₁ + H₂ + H_int); H_int is kept as the
    interaction attribute of the result. Oscillators with equal names are
    identified, the others are appended after those of G₂.
    """
    g1, g2 = _as_node(g1), _as_node(g2)
    if g1.m != g2.m:
        raise DimensionError(
            f"Series product needs equal channel counts, got {g2.m} ({g2.label}) and {g1.m} ({g1.label})"
        )
    modes = g2.modes + tuple(mode for mode in g1.modes if mode not in g2.modes)
    L1, H1, E1 = _embed(g1, modes)
    L2, H2, E2 = _embed(g2, modes)
    interaction = interaction_hamiltonian(g2.S, L2, g2.offset, L1, g1.offset)
    logger.debug(
        f"Series {g2.label} <| {g1.label}: interaction norm {norm(interaction.H):.3e}"
    )
    return SLHNode(
        label=label or f"{g2.label}<{g1.label}",
        modes=modes,
        S=g2.S @ g1.S,
        Lambda=L2 + g2.S @ L1,
        hamiltonian=H1 + H2 + interaction,
        offset=g2.offset + g2.S @ g1.offset,
        drive=np.hstack([E2, E1]),
        partition=Partition(g1.partition.inputs, g2.partition.outputs),
        interaction=interaction,
    )


def apply_static(component: StaticComponent, node: Component) -> SLHNode:
    """Sends the outputs of a node through a static component."""
    return series(component, node)


def pad_channels(node: Component, m_total, channels, label=None) -> SLHNode:
    """Places the channels of a node at the given positions of a wider channel space."""
    node = _as_node(node)
    channels = list(channels)
    if len(channels) != node.m or len(set(channels)) != node.m:
        raise DimensionError(f"Node '{node.label}' needs {node.m} distinct channels, got {channels}")
    if channels and (min(channels) < 0 or max(channels) >= m_total):
        raise DimensionError(f"Channels {channels} outside 0..{m_total - 1}")
    S = np.eye(m_total, dtype=complex)
    S[np.ix_(channels, channels)] = node.S
    Lambda = np.zeros((m_total, 2 * node.n), dtype=complex)
    Lambda[channels] = node.Lambda
    offset = np.zeros(m_total, dtype=complex)
    offset[channels] = node.offset
    return SLHNode(
        label=label or node.label,
        modes=node.modes,
        S=S,
        Lambda=Lambda,
        hamiltonian=node.hamiltonian,
        offset=offset,
        drive=node.drive,
    )


###############
# CLOSED LOOP #
###############


def direct_coupling(Kminus, Kplus=None):
    """ℬ₁₂ = -Δ(K₋, K₊)^♭ and ℬ₂₁ = Δ(K₋, K₊) for H_int = ½(ă_p†Ξ†ă_k + ă_k†Ξă_p), Ξ = Δ(iK₋, iK₊).

    K₋ and K₊ are n_k x n_p.
    """
    Kminus = as_matrix(Kminus, name="Kminus")
    Kplus = np.zeros_like(Kminus) if Kplus is None else as_matrix(Kplus, shape=Kminus.shape, name="Kplus")
    B21 = delta(Kminus, Kplus)
    return -flat_adjoint(B21), B21


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Plant-controller system after eliminating the in-loop fields.

    States are stacked as [x_p; x_k], each in its own (q; p) order. The
    columns of G_cl follow (B_p1, B_p2, B_k2, B_k3), those of B_cl follow
    (w_p, w_k) and the rows of C_out follow (p_f, p_m, k_f, k_m), each
    group in (q; p) order. E_cl is driven by (v_p, 1, v_k, 1).
    """

    A_cl: np.ndarray
    B_cl: np.ndarray
    E_cl: np.ndarray
    G_cl: np.ndarray
    C_cl: np.ndarray
    D_cl: np.ndarray
    C_out: np.ndarray
    D_out: np.ndarray
    plant_states: slice
    controller_states: slice
    noise_channels: Tuple[int, ...]
    output_channels: Tuple[int, ...]

    @property
    def n(self):
        return self.A_cl.shape[0] // 2

    def quadrature_system(self) -> QuadratureSystem:
        """(A_cl, G_cl, C_out, D_out) reordered into the global (q; p) convention."""
        n_p = (self.plant_states.stop - self.plant_states.start) // 2
        states = _stacked_order([n_p, self.n - n_p])
        inputs = _stacked_order(self.noise_channels)
        outputs = _stacked_order(self.output_channels)
        return QuadratureSystem(
            A=self.A_cl[np.ix_(states, states)],
            B=self.G_cl[np.ix_(states, inputs)],
            C=self.C_out[np.ix_(outputs, states)],
            D=self.D_out[np.ix_(outputs, inputs)],
        )

    def realizability(self, tol=STRUCTURE_TOL):
        return check_realizability(from_quadrature(self.quadrature_system()), tol)

    def to_dict(self):
        data = {
            name: to_real_lists(getattr(self, name))
            for name in ("A_cl", "B_cl", "E_cl", "G_cl", "C_cl", "D_cl", "C_out", "D_out")
        }
        data["plant_states"] = [self.plant_states.start, self.plant_states.stop]
        data["controller_states"] = [
            self.controller_states.start,
            self.controller_states.stop,
        ]
        return data


class _Blocks:
    """Quadrature blocks of a partitioned node."""

    def __init__(self, node: SLHNode):
        qs = node.to_quadrature()
        m = node.m
        self.A, self.E = qs.A, qs.E
        self.offset = node.output_offset()
        self.inputs = [_quad_index(g, m) for g in node.partition.inputs]
        self.outputs = [_quad_index(g, m) for g in node.partition.outputs]
        self._B, self._C, self._D = qs.B, qs.C, qs.D

    def B(self, i):
        return self._B[:, self.inputs[i]]

    def C(self, o):
        return self._C[self.outputs[o]]

    def D(self, o, i):
        return self._D[np.ix_(self.outputs[o], self.inputs[i])]

    def y0(self, o):
        return self.offset[self.outputs[o]]


def closed_loop(
    plant: SLHNode,
    controller: SLHNode,
    coupling=None,
    performance=None,
    tol=STRUCTURE_TOL,
) -> ClosedLoopSystem:
    """Assembles the closed-loop quadrature system of a plant and a coherent controller.

    The plant loop output group feeds the controller's first input group and the
    controller loop output group feeds the plant's third input group.

    Args:
        plant: Partitioned plant node.
        controller: Partitioned controller node.
        coupling: Optional (K₋, K₊) of a direct coupling, both n_k x n_p.
        performance: Optional (C_p, C_k, D_z) of z = C_p x_p + C_k x_k + D_z w;
            z = x when omitted.
        tol: Tolerance of the causality check.

    Raises:
        CompositionError: The loop channel counts differ.
        CausalityError: The controller loop output depends on its plant-fed input.
    """
    P, K = _Blocks(plant), _Blocks(controller)
    FREE, MEASURED, LOOP = 0, 1, 2
    IN1, IN2, IN3 = 0, 1, 2
    if len(plant.partition.inputs[IN3]) != len(controller.partition.outputs[LOOP]):
        raise CompositionError(
            f"Plant feedback inputs {plant.partition.inputs[IN3]} do not match controller loop outputs {controller.partition.outputs[LOOP]}"
        )
    if len(plant.partition.outputs[LOOP]) != len(controller.partition.inputs[IN1]):
        raise CompositionError(
            f"Plant loop outputs {plant.partition.outputs[LOOP]} do not match controller inputs {controller.partition.inputs[IN1]}"
        )
    if norm(K.D(LOOP, IN1)) > tol:
        raise CausalityError(
            f"Controller '{controller.label}' routes its plant-fed input straight into its loop output"
        )

    n_p, n_k = plant.n, controller.n
    B12 = np.zeros((2 * n_p, 2 * n_k))
    B21 = np.zeros((2 * n_k, 2 * n_p))
    if coupling is not None:
        Kminus, Kplus = coupling
        ck12, ck21 = direct_coupling(Kminus, Kplus)
        if ck21.shape != (2 * n_k, 2 * n_p):
            raise DimensionError(
                f"Direct coupling must be {n_k} x {n_p}, got {ck21.shape[0] // 2} x {ck21.shape[1] // 2}"
            )
        B12, B21 = to_quadrature_basis(ck12).real, to_quadrature_basis(ck21).real

    Bp1, Bp2, Bp3 = P.B(IN1), P.B(IN2), P.B(IN3)
    Bk1, Bk2, Bk3 = K.B(IN1), K.B(IN2), K.B(IN3)
    Cpk, Ckp = P.C(LOOP), K.C(LOOP)
    Dpk1, Dpk2, Dpk3 = P.D(LOOP, IN1), P.D(LOOP, IN2), P.D(LOOP, IN3)
    Dkp2, Dkp3 = K.D(LOOP, IN2), K.D(LOOP, IN3)

    A_cl = np.block(
        [
            [P.A, Bp3 @ Ckp + B12],
            [Bk1 @ Cpk + B21, K.A + Bk1 @ Dpk3 @ Ckp],
        ]
    )
    B_cl = np.block(
        [
            [Bp2, Bp3 @ Dkp3],
            [Bk1 @ Dpk2, Bk3 + Bk1 @ Dpk3 @ Dkp3],
        ]
    )
    G_cl = np.block(
        [
            [Bp1, Bp2, Bp3 @ Dkp2, Bp3 @ Dkp3],
            [Bk1 @ Dpk1, Bk1 @ Dpk2, Bk2 + Bk1 @ Dpk3 @ Dkp2, Bk3 + Bk1 @ Dpk3 @ Dkp3],
        ]
    )

    # offsets of the loop outputs enter the constant drive columns
    Ep, Ek = P.E.copy(), K.E.copy()
    Ep[:, -1] += Bp3 @ K.y0(LOOP)
    Ek[:, -1] += Bk1 @ (P.y0(LOOP) + Dpk3 @ K.y0(LOOP))
    E_cl = np.block(
        [
            [Ep, np.zeros((2 * n_p, Ek.shape[1]))],
            [np.zeros((2 * n_k, Ep.shape[1])), Ek],
        ]
    )

    C_rows, D_rows = [], []
    for o in (FREE, MEASURED):
        C_rows.append(np.hstack([P.C(o), P.D(o, IN3) @ Ckp]))
        D_rows.append(
            np.hstack(
                [P.D(o, IN1), P.D(o, IN2), P.D(o, IN3) @ Dkp2, P.D(o, IN3) @ Dkp3]
            )
        )
    for o in (FREE, MEASURED):
        Dk1 = K.D(o, IN1)
        C_rows.append(np.hstack([Dk1 @ Cpk, K.C(o) + Dk1 @ Dpk3 @ Ckp]))
        D_rows.append(
            np.hstack(
                [
                    Dk1 @ Dpk1,
                    Dk1 @ Dpk2,
                    K.D(o, IN2) + Dk1 @ Dpk3 @ Dkp2,
                    K.D(o, IN3) + Dk1 @ Dpk3 @ Dkp3,
                ]
            )
        )

    n_cl = 2 * (n_p + n_k)
    if performance is None:
        C_cl, D_cl = np.eye(n_cl), np.zeros((n_cl, B_cl.shape[1]))
    else:
        Cp, Ck, Dz = performance
        C_cl = np.hstack([np.atleast_2d(Cp), np.atleast_2d(Ck)])
        D_cl = np.atleast_2d(np.asarray(Dz, dtype=float))
        if C_cl.shape[1] != n_cl or D_cl.shape != (C_cl.shape[0], B_cl.shape[1]):
            raise DimensionError(
                f"Performance matrices {C_cl.shape} / {D_cl.shape} do not fit {n_cl} states and {B_cl.shape[1]} disturbances"
            )

    pp, kp = plant.partition, controller.partition
    noise_channels = tuple(
        len(g) for g in (pp.inputs[IN1], pp.inputs[IN2], kp.inputs[IN2], kp.inputs[IN3])
    )
    output_channels = tuple(
        len(g) for g in (pp.outputs[FREE], pp.outputs[MEASURED], kp.outputs[FREE], kp.outputs[MEASURED])
    )
    logger.info(
        f"Closed loop {plant.label} / {controller.label}: {n_p} + {n_k} modes, {sum(noise_channels)} noise channels"
    )
    return ClosedLoopSystem(
        A_cl=A_cl,
        B_cl=B_cl,
        E_cl=E_cl,
        G_cl=G_cl,
        C_cl=C_cl,
        D_cl=D_cl,
        C_out=np.vstack(C_rows),
        D_out=np.vstack(D_rows),
        plant_states=slice(0, 2 * n_p),
        controller_states=slice(2 * n_p, 2 * (n_p + n_k)),
        noise_channels=noise_channels,
        output_channels=output_channels,
    )


###########
# EXAMPLE #
###########


def _single_mode(label, mode, couplings, omega=0.0):
    """Node of one oscillator with L_j = c_q q + c_p p and H = ω/2 (q² + p²)."""
    Lambda = np.array(couplings, dtype=complex).reshape(-1, 2)
    return SLHNode(
        label=label,
        modes=(mode,),
        S=np.eye(Lambda.shape[0]),
        Lambda=Lambda,
        hamiltonian=QuadraticForm(omega * np.eye(2), np.zeros(2)),
    )


@dataclass(frozen=True)
class SpinMembraneNetwork:
    """An atomic spin ensemble and a membrane coupled through one laser beam.

    The spin ensemble has a thermal channel and two laser passes, the laser is
    S = 1, L = √κ a_l + α, H = 0 and the membrane has a laser and a thermal
    channel. Propagation delays are not modelled.
    """

    Omega_s: float = 1.0
    Omega_m: float = 1.0
    gamma_s: float = 0.1
    gamma_m: float = 0.1
    Gamma_s: float = 0.3
    Gamma_m: float = 0.5
    kappa_ext: float = 1.2
    alpha: complex = 0.0

    def __post_init__(self):
        for name in ("gamma_s", "gamma_m", "Gamma_s", "Gamma_m", "kappa_ext"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative", field=name)

    def spin(self):
        rs, rS = np.sqrt(self.gamma_s), np.sqrt(2 * self.Gamma_s)
        return _single_mode("spin", "s", [[rs, 0], [rS, 0], [rS, 0]], self.Omega_s)

    def laser(self):
        r = np.sqrt(self.kappa_ext / 2)
        node = _single_mode("laser", "l", [[r, 1j * r]])
        return replace(node, offset=[self.alpha])

    def cascade(self):
        """The spin ensemble driven by the laser on its second channel."""
        return series(self.spin(), pad_channels(self.laser(), 3, [1]), label="cascade")

    def membrane(self):
        rG, rg = np.sqrt(2 * self.Gamma_m), np.sqrt(self.gamma_m)
        return _single_mode("membrane", "m", [[-1j * rG, 0], [rg, 0]], self.Omega_m)

    def membrane_laser_coupling(self):
        """Cascade output 2 fed into the laser channel of the membrane."""
        rG = np.sqrt(2 * self.Gamma_m)
        membrane = _single_mode("membrane", "m", [[-1j * rG, 0]], self.Omega_m)
        return series(pad_channels(membrane, 3, [1]), self.cascade())

    def feedback_loop(self, phi):
        """Spin → membrane → phase shifter → spin along the laser beam.

        The second pass through the spin ensemble carries no Hamiltonian, so
        H of the result is H_s + H_m plus the two interaction Hamiltonians.
        """
        rS, rG = np.sqrt(2 * self.Gamma_s), np.sqrt(2 * self.Gamma_m)
        first_pass = _single_mode("spin", "s", [[rS, 0]], self.Omega_s)
        membrane = _single_mode("membrane", "m", [[-1j * rG, 0]], self.Omega_m)
        second_pass = _single_mode("spin", "s", [[rS, 0]])
        spin_to_membrane = series(membrane, first_pass)
        shifted = apply_static(phase_shifter(phi), spin_to_membrane)
        return series(second_pass, shifted, label="loop")

    def effective_hamiltonian(self, phi):
        """Spin-membrane Hamiltonian generated by the loop, free parts removed."""
        loop = self.feedback_loop(phi)
        free = np.zeros_like(loop.hamiltonian.H)
        for mode, omega in (("s", self.Omega_s), ("m", self.Omega_m)):
            for quadrature in ("q", "p"):
                k = loop.index(mode, quadrature)
                free[k, k] = omega
        return QuadraticForm(loop.hamiltonian.H - free, loop.hamiltonian.h)


def spin_membrane_example(**params) -> SpinMembraneNetwork:
    return SpinMembraneNetwork(**params)
