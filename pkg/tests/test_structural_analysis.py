import numpy as np
import pytest
from helpers import max_dev
from hypothesis import given, settings
from hypothesis import strategies as st

from doubled_algebra import passive_orthogonal
from structural_analysis import (
    check_bae,
    controllable_subspace,
    coupling_blocks,
    decomposed_dynamics,
    is_hurwitz,
    kalman_decompose,
    observable_subspace,
    verify_coupling_structure,
    zero_pattern_residual,
)
from system_model import (
    QuadratureSystem,
    build_state_space,
    cavity,
    optomechanical,
    random_params,
    random_unitary,
    to_quadrature,
)
from utils import PreconditionError

OMEGA, G, KAPPA = 1.0, 0.7, 2.0


def quadrature(params):
    return to_quadrature(build_state_space(params))


def direct_sum(*systems):
    """Block-diagonal composition of quadrature systems, modes and channels side by side."""

    def interleave(matrices, rows_half, cols_half):
        # (q, p) ordering: stack all q blocks first, then all p blocks
        out = np.zeros((2 * sum(rows_half), 2 * sum(cols_half)))
        r0 = c0 = 0
        R, Cn = sum(rows_half), sum(cols_half)
        for M, r, c in zip(matrices, rows_half, cols_half):
            for i in range(2):
                for j in range(2):
                    out[
                        i * R + r0 : i * R + r0 + r, j * Cn + c0 : j * Cn + c0 + c
                    ] = M[i * r : (i + 1) * r, j * c : (j + 1) * c]
            r0 += r
            c0 += c
        return out

    ns = [qs.n for qs in systems]
    ms = [qs.m for qs in systems]
    return QuadratureSystem(
        A=interleave([qs.A for qs in systems], ns, ns),
        B=interleave([qs.B for qs in systems], ns, ms),
        C=interleave([qs.C for qs in systems], ms, ns),
        D=interleave([qs.D for qs in systems], ms, ms),
    )


def free_oscillator(omega):
    """Single uncoupled mode with a dummy channel that never touches it."""
    return QuadratureSystem(
        A=[[0.0, omega], [-omega, 0.0]],
        B=np.zeros((2, 2)),
        C=np.zeros((2, 2)),
        D=np.eye(2),
    )


def mix_modes(qs, U):
    O = passive_orthogonal(U)
    return QuadratureSystem(O.T @ qs.A @ O, O.T @ qs.B, qs.C @ O, qs.D)


@pytest.fixture(scope="module")
def opto_kd():
    return kalman_decompose(quadrature(optomechanical(OMEGA, G, KAPPA)))


class TestHurwitz:
    def test_damped_cavity(self):
        result = is_hurwitz(quadrature(cavity(2.0, 1.0)))
        assert result
        assert np.isclose(result.abscissa, -1.0)

    def test_marginal_system(self):
        qs = QuadratureSystem(
            A=[[0.0, 1.0], [-1.0, 0.0]],
            B=np.zeros((2, 2)),
            C=np.zeros((2, 2)),
            D=np.eye(2),
        )
        assert not is_hurwitz(qs)

    def test_optomechanical_not_stable(self):
        assert not is_hurwitz(quadrature(optomechanical(OMEGA, G, KAPPA)))


class TestSubspaces:
    def test_cavity_fully_controllable_and_observable(self):
        qs = quadrature(cavity(1.0, 0.5))
        assert controllable_subspace(qs).dim == 2
        assert observable_subspace(qs).dim == 2

    def test_optomechanical_ranks(self):
        qs = quadrature(optomechanical(OMEGA, G, KAPPA))
        Rc = controllable_subspace(qs)
        Ro = observable_subspace(qs)
        assert Rc.dim == Ro.dim == 4
        assert max_dev(Rc.columns.T @ Rc.columns, np.eye(4)) <= 1e-12


class TestKalmanDecomposition:
    def test_dimensions(self, opto_kd):
        assert opto_kd.dims == (2, 1, 0)
        assert opto_kd.qnd_indices == [2, 3]
        assert opto_kd.qmfs_indices == [2, 3]
        assert opto_kd.dfs_indices == []

    def test_transformed_drift(self, opto_kd):
        w, g, k = OMEGA, 2 * np.sqrt(2) * G, KAPPA / 2
        expected = np.array(
            [
                [0, -w, 0, 0, 0, 0],
                [w, 0, 0, 0, g, 0],
                [0, 0, 0, -w, 0, 0],
                [0, 0, w, 0, 0, 0],
                [0, 0, 0, 0, -k, 0],
                [0, 0, 0, -g, 0, -k],
            ]
        )
        assert max_dev(opto_kd.A_bar, expected) <= 1e-10

    def test_transformed_ports(self, opto_kd):
        expected_B = np.zeros((6, 2))
        expected_B[4, 0] = expected_B[5, 1] = -np.sqrt(KAPPA)
        assert max_dev(opto_kd.B_bar, expected_B) <= 1e-10
        assert max_dev(opto_kd.C_bar, -expected_B.T) <= 1e-10

    def test_transform_is_orthogonal_symplectic(self, opto_kd):
        assert max_dev(opto_kd.T.T @ opto_kd.T, np.eye(6)) <= 1e-12
        assert opto_kd.residuals["symplectic"] <= 1e-10
        assert opto_kd.residuals["zero_pattern"] <= 1e-10

    def test_conservative_equations(self, opto_kd):
        dyn = decomposed_dynamics(opto_kd, conservative=True)
        g = 2 * np.sqrt(2) * G
        assert np.isclose(dyn.coefficient("q_h1", "q_h2"), -OMEGA)
        assert np.isclose(dyn.coefficient("q_h2", "q_co1"), g)
        assert np.isclose(dyn.coefficient("p_co1", "p_h2"), -g)
        assert np.allclose(dyn.matrix[4], 0, atol=1e-10)
        assert np.isclose(dyn.coefficient("p_co1", "p_co1"), 0, atol=1e-10)

    def test_named_blocks(self, opto_kd):
        dyn = decomposed_dynamics(opto_kd)
        assert dyn.A_h22.shape == (2, 2)
        assert dyn.A_co.shape == (2, 2)
        assert dyn.A_cbar_obar.shape == (0, 0)
        assert np.allclose(dyn.B_h, 0, atol=1e-10)
        assert len(dyn.equations()) == 6

    def test_serializable(self, opto_kd):
        data = opto_kd.to_dict()
        assert data["dims"] == {"n_h": 2, "n_co": 1, "n_cbar_obar": 0}
        assert len(data["A_bar"]) == 6

    def test_decoupled_mode_is_decoherence_free(self):
        qs = direct_sum(quadrature(cavity(1.0, 0.3)), free_oscillator(2.0))
        kd = kalman_decompose(qs)
        assert kd.dims == (0, 1, 1)
        assert kd.dfs_indices == [2, 3]

    def test_unrealizable_rejected(self):
        qs = quadrature(cavity(2.0, 1.0))
        broken = QuadratureSystem(qs.A + 0.1 * np.eye(2), qs.B, qs.C, qs.D)
        with pytest.raises(PreconditionError):
            kalman_decompose(broken)

    def test_non_identity_scattering_is_absorbed(self, rng):
        qs = quadrature(random_params(rng, 2, 2))
        kd = kalman_decompose(qs)
        assert kd.scattering_normalized
        assert max_dev(kd.system.D, np.eye(4)) == 0
        assert sum(kd.dims) == 2

    @pytest.mark.parametrize("seed", range(20))
    def test_generic_two_mode_system_is_controllable_observable(self, seed):
        rng = np.random.default_rng(seed)
        kd = kalman_decompose(quadrature(random_params(rng, 2, 2)))
        assert kd.dims == (0, 2, 0)
        assert kd.qnd_indices == kd.dfs_indices == []
        assert max_dev(kd.T.T @ kd.T, np.eye(4)) <= 1e-10
        assert kd.residuals["symplectic"] <= 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_generic_three_mode_passive_system(self, seed):
        rng = np.random.default_rng(seed)
        kd = kalman_decompose(quadrature(random_params(rng, 3, 2, passive=True)))
        assert kd.dims == (0, 3, 0)
        assert kd.residuals["orthogonality"] <= 1e-10

    @settings(max_examples=15)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    def test_mixed_engineered_structure(self, seed):
        rng = np.random.default_rng(seed)
        base = direct_sum(
            quadrature(optomechanical(*rng.uniform(0.5, 2.0, size=3))),
            free_oscillator(rng.uniform(0.5, 2.0)),
        )
        qs = mix_modes(base, random_unitary(4, rng))
        kd = kalman_decompose(qs)
        assert kd.dims == (2, 1, 1)
        assert 2 * kd.dims[0] + 2 * kd.dims[1] + 2 * kd.dims[2] == 2 * qs.n
        assert max_dev(kd.T.T @ kd.T, np.eye(8)) <= 1e-8
        assert (
            zero_pattern_residual(kd.A_bar, kd.B_bar, kd.C_bar, kd.blocks)
            <= 1e-8
        )


class TestBackActionEvasion:
    @pytest.mark.parametrize("direction", ["p_in->q_out", "q_in->p_out"])
    def test_optomechanical_is_bae(self, opto_kd, direction):
        result = check_bae(opto_kd, direction)
        assert result
        assert result.direct_residual <= 1e-9

    def test_detuned_cavity_is_not_bae(self):
        kd = kalman_decompose(quadrature(cavity(2.0, 1.0)))
        result = check_bae(kd, "p_in->q_out")
        assert not result
        assert result.direct_residual > 1e-3

    def test_resonant_cavity_is_bae(self):
        kd = kalman_decompose(quadrature(cavity(2.0, 0.0)))
        assert check_bae(kd, "q_in->p_out")

    def test_unknown_direction(self, opto_kd):
        with pytest.raises(ValueError):
            check_bae(opto_kd, "sideways")

    def test_coupling_blocks(self, opto_kd):
        blocks = coupling_blocks(opto_kd)
        assert np.allclose(blocks.Lambda_co_q, np.sqrt(KAPPA / 2))
        assert np.allclose(blocks.Lambda_co_p, 1j * np.sqrt(KAPPA / 2))
        assert np.allclose(blocks.Lambda_h, 0, atol=1e-10)
        assert np.allclose(blocks.H_co, 0, atol=1e-10)


class TestStructuralChecks:
    def test_stable_cavity(self):
        report = verify_coupling_structure(quadrature(cavity(1.0, 2.0)))
        assert report.hurwitz
        assert report.ctrb_rank == report.obsv_rank == 2
        assert report.passes

    def test_optomechanical(self):
        report = verify_coupling_structure(quadrature(optomechanical(OMEGA, G, KAPPA)))
        assert report.ranks_equal
        assert not report.hurwitz
        assert report.passes

    def test_decoherence_free_spectrum_is_imaginary(self):
        qs = direct_sum(quadrature(cavity(1.0)), free_oscillator(1.5))
        report = verify_coupling_structure(qs)
        assert report.cbar_obar_imaginary
        assert report.cbar_obar_max_real <= 1e-10

    def test_generic_two_mode_system(self, rng):
        report = verify_coupling_structure(quadrature(random_params(rng, 2, 2)))
        assert report.ctrb_rank == report.obsv_rank == 4
        assert report.passes
