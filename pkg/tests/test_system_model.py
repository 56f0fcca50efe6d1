import dataclasses

import numpy as np
import pytest
from helpers import max_dev
from hypothesis import given
from hypothesis import strategies as st

from doubled_algebra import delta, flat_adjoint, sharp_adjoint
from system_model import (
    ImpulseResponse,
    PhysicalParams,
    QuadratureSystem,
    build_state_space,
    cavity,
    check_realizability,
    flat_unitarity_residual,
    frequency_response,
    from_quadrature,
    hamiltonian_from_quadrature,
    impulse_response,
    is_passive,
    optomechanical,
    quadrature_from_hamiltonian,
    random_params,
    to_quadrature,
    transfer_function,
)
from utils import ParameterError, SingularityError, StructureError

seeds = st.integers(min_value=0, max_value=2**32 - 1)
sizes = st.integers(min_value=1, max_value=4)


class TestBuildStateSpace:
    def test_cavity_matrices(self):
        ss = build_state_space(cavity(kappa=2.0, omega=1.0))
        assert max_dev(ss.A, np.diag([-1 - 1j, -1 + 1j])) <= 1e-15
        assert max_dev(ss.B, -np.sqrt(2) * np.eye(2)) <= 1e-15
        assert max_dev(ss.C, np.sqrt(2) * np.eye(2)) <= 1e-15
        assert max_dev(ss.D, np.eye(2)) == 0

    def test_optomechanical_matrices(self):
        omega, G, kappa = 1.0, 0.7, 2.0
        ss = build_state_space(optomechanical(omega, G, kappa))
        w, g, k = omega, G, kappa / 2
        expected_A = np.array(
            [
                [-1j * w, 0, -1j * g, 0, 0, -1j * g],
                [0, 1j * w, -1j * g, 0, 0, -1j * g],
                [-1j * g, -1j * g, -k, -1j * g, -1j * g, 0],
                [0, 0, 1j * g, 1j * w, 0, 1j * g],
                [0, 0, 1j * g, 0, -1j * w, 1j * g],
                [1j * g, 1j * g, 0, 1j * g, 1j * g, -k],
            ]
        )
        expected_B = -np.sqrt(kappa) * np.array(
            [[0, 0, 1, 0, 0, 0], [0, 0, 0, 0, 0, 1]]
        ).T
        assert max_dev(ss.A, expected_A) <= 1e-15
        assert max_dev(ss.B, expected_B) <= 1e-15

    def test_closed_dynamics(self, rng):
        p = random_params(rng, 2, 1)
        closed = dataclasses.replace(
            p, C_minus=np.zeros((1, 2)), C_plus=np.zeros((1, 2))
        )
        ss = build_state_space(closed)
        assert max_dev(ss.A, -1j * np.diag([1, 1, -1, -1]) @ p.Omega) <= 1e-14
        assert np.all(ss.B == 0)

    def test_non_unitary_scattering_rejected(self):
        p = PhysicalParams.from_blocks(
            S=[[2.0]], C_minus=[[1.0]], Omega_minus=[[0.0]]
        )
        with pytest.raises(ParameterError) as info:
            build_state_space(p)
        assert info.value.field == "S"
        assert np.isclose(info.value.residual, 3.0)

    def test_drive_matrix_for_doubled_up_K(self, rng):
        p = random_params(rng, 2, 2, l=1)
        ss = build_state_space(p)
        expected = -2j * np.diag([1, 1, -1, -1]) @ p.K
        assert max_dev(ss.E, expected) <= 1e-13


class TestRealizability:
    @given(seed=seeds, n=sizes, m=sizes)
    def test_random_systems_realizable(self, seed, n, m):
        rng = np.random.default_rng(seed)
        report = check_realizability(build_state_space(random_params(rng, n, m)))
        assert report.passes
        assert report.residual_A <= 1e-12
        assert report.residual_B <= 1e-12

    def test_hundred_draws(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n, m = rng.integers(1, 5, size=2)
            ss = build_state_space(random_params(rng, n, m))
            report = check_realizability(ss, tol=1e-12)
            assert report.passes, report

    def test_perturbed_cavity_fails(self):
        ss = build_state_space(cavity(kappa=2.0, omega=1.0))
        broken = dataclasses.replace(ss, A=ss.A + 0.1 * np.eye(2))
        report = check_realizability(broken)
        assert not report.passes
        assert np.isclose(report.residual_A, 0.2)

    def test_passive_variant(self):
        report = check_realizability(build_state_space(cavity(2.0, 0.5)))
        assert report.passive_variant_used
        assert report.passes
        assert report.passive_residual_A <= 1e-14

    def test_active_system_skips_passive_variant(self):
        ss = build_state_space(optomechanical(1.0, 0.7, 2.0))
        assert not check_realizability(ss).passive_variant_used


class TestQuadrature:
    @pytest.mark.parametrize(("kappa", "omega"), [(1.0, 0.0), (2.0, 0.5)])
    def test_cavity(self, kappa, omega):
        qs = to_quadrature(build_state_space(cavity(kappa, omega)))
        assert max_dev(
            qs.A, [[-kappa / 2, omega], [-omega, -kappa / 2]]
        ) <= 1e-14
        assert max_dev(qs.B, -np.sqrt(kappa) * np.eye(2)) <= 1e-14
        assert max_dev(qs.C, np.sqrt(kappa) * np.eye(2)) <= 1e-14
        assert max_dev(qs.D, np.eye(2)) <= 1e-15

    def test_output_block_formula(self, rng):
        p = random_params(rng, 3, 2)
        qs = to_quadrature(build_state_space(p))
        Cm, Cp = p.C_minus, p.C_plus
        expected = np.block(
            [
                [(Cm + Cp).real, (-Cm + Cp).imag],
                [(Cm + Cp).imag, (Cm - Cp).real],
            ]
        )
        assert max_dev(qs.C, expected) <= 1e-13

    def test_scattering_is_symplectic(self, rng):
        qs = to_quadrature(build_state_space(random_params(rng, 2, 3)))
        assert qs.scattering_residual() <= 1e-12

    def test_round_trip(self, rng):
        ss = build_state_space(random_params(rng, 3, 2, l=2))
        back = from_quadrature(to_quadrature(ss))
        for name in "ABCDE":
            assert max_dev(getattr(back, name), getattr(ss, name)) <= 1e-12

    def test_cavity_inverse(self):
        kappa, omega = 2.0, 0.5
        qs = QuadratureSystem(
            A=[[-kappa / 2, omega], [-omega, -kappa / 2]],
            B=-np.sqrt(kappa) * np.eye(2),
            C=np.sqrt(kappa) * np.eye(2),
            D=np.eye(2),
        )
        ss = from_quadrature(qs)
        expected = np.diag([-kappa / 2 - 1j * omega, -kappa / 2 + 1j * omega])
        assert max_dev(ss.A, expected) <= 1e-15
        assert max_dev(ss.D, np.eye(2)) <= 1e-15

    def test_non_doubled_input_rejected(self):
        ss = build_state_space(cavity(1.0))
        broken = dataclasses.replace(ss, A=np.array([[1.0, 0], [0, 0]]))
        with pytest.raises(StructureError):
            to_quadrature(broken)

    def test_quadrature_matrices_from_hamiltonian(self, rng):
        qs = to_quadrature(build_state_space(random_params(rng, 2, 2)))
        H = hamiltonian_from_quadrature(qs)
        rebuilt = quadrature_from_hamiltonian(H, qs.C, qs.D)
        assert max_dev(rebuilt.A, qs.A) <= 1e-12
        assert max_dev(rebuilt.B, qs.B) <= 1e-12
        assert max_dev(rebuilt.B, -sharp_adjoint(qs.C).real @ qs.D) <= 1e-12


class TestResponse:
    def test_passive_cavity_at_zero(self):
        Xi = transfer_function(build_state_space(cavity(2.0)), 0.0)
        assert np.isclose(Xi[0, 0], -1.0)
        assert np.isclose(Xi[1, 1], -1.0)

    def test_flat_unitarity_on_axis(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            ss = build_state_space(random_params(rng, 2, 2))
            for omega in np.linspace(-10, 10, 50):
                try:
                    Xi = transfer_function(ss, 1j * omega)
                except SingularityError:
                    continue
                assert flat_unitarity_residual(Xi) <= 1e-9

    @given(seed=seeds)
    def test_para_unitarity_off_axis(self, seed):
        rng = np.random.default_rng(seed)
        ss = build_state_space(random_params(rng, 2, 2))
        s = complex(*rng.normal(size=2))
        Xi = transfer_function(ss, s)
        Xi_reflected = transfer_function(ss, -np.conj(s))
        assert max_dev(flat_adjoint(Xi_reflected) @ Xi, np.eye(4)) <= 1e-9

    def test_passive_singular_values(self, rng):
        ss = build_state_space(random_params(rng, 3, 2, passive=True))
        for omega in (-3.0, 0.0, 1.0, 10.0):
            Xi_minus = transfer_function(ss, 1j * omega)[:2, :2]
            sv = np.linalg.svd(Xi_minus, compute_uv=False)
            assert np.max(np.abs(sv - 1)) <= 1e-10

    def test_decoupled_system_is_scattering(self, rng):
        p = random_params(rng, 2, 2)
        p = dataclasses.replace(
            p, C_minus=np.zeros((2, 2)), C_plus=np.zeros((2, 2))
        )
        ss = build_state_space(p)
        assert max_dev(transfer_function(ss, 0.3 + 2j), ss.D) <= 1e-14

    def test_singular_point(self):
        ss = build_state_space(cavity(2.0, 1.0))
        with pytest.raises(SingularityError):
            transfer_function(ss, -1 - 1j)

    def test_frequency_response_matches_pointwise(self, rng):
        ss = build_state_space(random_params(rng, 2, 1))
        omegas = np.linspace(-5, 5, 7)
        grid = frequency_response(ss, omegas)
        for k, omega in enumerate(omegas):
            assert max_dev(grid[k], transfer_function(ss, 1j * omega)) <= 1e-12

    def test_impulse_response(self, rng):
        ss = build_state_space(cavity(2.0))
        assert np.all(impulse_response(ss, -0.5).smooth == 0)
        g0 = impulse_response(ss, 0.0)
        assert np.isclose(g0.smooth[0, 0], -2.0)
        assert max_dev(g0.delta, np.eye(2)) == 0
        g1 = impulse_response(ss, 1.0)
        assert np.isclose(g1.smooth[0, 0], -2.0 * np.exp(-1.0))
        random_ss = build_state_space(random_params(rng, 3, 2))
        assert impulse_response(random_ss, 0.7).structure_residual() <= 1e-12

    def test_impulse_structure_residual_is_scale_free(self):
        broken = delta(np.array([[1.0 + 0.5j]]), np.array([[0.2]]))
        broken[0, 0] += 1e-3
        small = ImpulseResponse(0.0, broken, np.eye(2)).structure_residual()
        large = ImpulseResponse(0.0, 1e6 * broken, np.eye(2)).structure_residual()
        assert small > 1e-4
        assert np.isclose(small, large, rtol=1e-12)


class TestPassivity:
    def test_cavity_is_passive(self):
        assert is_passive(cavity(1.0, 0.3))

    def test_optomechanical_is_active(self):
        assert not is_passive(optomechanical(1.0, 0.7, 2.0))

    def test_tolerance(self):
        p = PhysicalParams.from_blocks(
            S=[[1.0]], C_minus=[[1.0]], Omega_minus=[[0.0]], C_plus=[[1e-15]]
        )
        assert is_passive(p)
