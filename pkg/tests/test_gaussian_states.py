import numpy as np
import pytest
from helpers import max_dev
from scipy.linalg import expm

from doubled_algebra import quad_basis
from gaussian_states import (
    GaussianState,
    characteristic,
    characteristic_complex,
    coherent,
    convert_convention,
    evolve_moments,
    gaussian_to_fock,
    graph_covariance,
    is_pure,
    is_valid,
    moments_from_fock,
    pure_state_generator,
    quadrature_operators,
    sigma_from_pi,
    skew_information,
    squeezed,
    steady_state,
    thermal,
    uncertainty_report,
    vacuum,
    variance,
    wigner,
    wigner_grid,
    wigner_normalization,
)
from system_model import (
    QuadratureSystem,
    build_state_space,
    cavity,
    optomechanical,
    random_params,
    to_quadrature,
)
from utils import (
    DimensionError,
    PreconditionError,
    SingularityError,
    StateError,
    StructureError,
)


def quadrature(params):
    return to_quadrature(build_state_space(params))


class TestGaussianState:
    def test_shapes_checked(self):
        with pytest.raises(DimensionError):
            GaussianState([0.0, 0.0], np.eye(3))

    def test_asymmetric_cov_rejected(self):
        with pytest.raises(StructureError):
            GaussianState([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])

    def test_round_trip_dict(self):
        state = squeezed(0.3, 0.7)
        back = GaussianState.from_dict(state.to_dict())
        assert max_dev(back.cov, state.cov) == 0

    def test_convention_converter(self):
        assert max_dev(convert_convention(vacuum().cov, "unit"), np.eye(2)) == 0
        assert max_dev(convert_convention(np.eye(2), "half"), vacuum().cov) == 0
        with pytest.raises(ValueError):
            convert_convention(np.eye(2), "quarter")


class TestValidity:
    def test_vacuum(self):
        result = is_valid(vacuum())
        assert result
        assert np.isclose(result.min_eigenvalue, 0.0, atol=1e-15)

    def test_too_small_covariance(self):
        result = is_valid(GaussianState([0, 0], 0.4 * np.eye(2)))
        assert not result
        assert np.isclose(result.min_eigenvalue, -0.1)

    def test_thermal(self):
        result = is_valid(GaussianState([0, 0], 1.5 * np.eye(2)))
        assert result
        assert np.isclose(result.min_eigenvalue, 1.0)

    @pytest.mark.parametrize(
        ("state", "pure"),
        [
            (vacuum(), True),
            (GaussianState([0, 0], 1.5 * np.eye(2)), False),
            (GaussianState([0, 0], np.diag([np.exp(1.0), np.exp(-1.0)]) / 2), True),
        ],
    )
    def test_purity(self, state, pure):
        assert is_pure(state) == pure

    def test_purity_of_invalid_state(self):
        with pytest.raises(PreconditionError):
            is_pure(GaussianState([0, 0], 0.1 * np.eye(2)))


class TestPhaseSpace:
    def test_vacuum_wigner(self):
        assert np.isclose(wigner(vacuum(), [0.0, 0.0]), 1 / np.pi)
        w = np.array([0.4, -1.1])
        assert np.isclose(wigner(vacuum(), w), np.exp(-w @ w) / np.pi)

    def test_batched_wigner_grid(self):
        q = np.linspace(-2, 2, 5)
        p = np.linspace(-1, 1, 3)
        grid = wigner_grid(vacuum(), q, p)
        assert grid.shape == (3, 5)
        assert np.isclose(grid[1, 2], 1 / np.pi)

    def test_singular_covariance(self):
        with pytest.raises(SingularityError):
            wigner(GaussianState([0, 0], np.diag([1.0, 0.0])), [0.0, 0.0])

    @pytest.mark.parametrize(
        "state",
        [vacuum(), squeezed(0.6, 1.0), thermal(2.0), coherent(1 - 0.5j), vacuum(2)],
    )
    def test_wigner_normalized(self, state):
        assert abs(wigner_normalization(state) - 1.0) <= 1e-3

    def test_grid_integral(self):
        q = np.linspace(-8, 8, 401)
        grid = wigner_grid(squeezed(0.4), q, q)
        step = q[1] - q[0]
        assert abs(grid.sum() * step**2 - 1.0) <= 1e-3

    def test_characteristic_at_origin(self):
        assert characteristic(squeezed(0.5, 0.2), [0.0, 0.0]) == 1.0

    def test_vacuum_characteristic(self):
        beta = np.array([0.7, -0.2])
        assert np.isclose(characteristic(vacuum(), beta), np.exp(-0.25 * beta @ beta))

    def test_complex_form_matches_real_form(self):
        state = GaussianState([0.3, -0.8], [[0.9, 0.2], [0.2, 0.6]])
        alpha = 0.4 + 0.9j
        beta = (quad_basis(1).matrix @ np.array([alpha, np.conj(alpha)])).real
        assert np.isclose(
            characteristic_complex(state, alpha), characteristic(state, beta)
        )

    def test_vacuum_complex_characteristic(self):
        alpha = 0.5 - 1.2j
        assert np.isclose(
            characteristic_complex(vacuum(), alpha), np.exp(-abs(alpha) ** 2 / 2)
        )

    def test_fourier_transform_of_characteristic(self):
        state = GaussianState([0.6, -0.4], 0.8 * np.eye(2))
        axis = np.linspace(-12, 12, 241)
        step = axis[1] - axis[0]
        B1, B2 = np.meshgrid(axis, axis, indexing="ij")
        betas = np.stack([B1.ravel(), B2.ravel()], axis=1)
        chi = np.array([characteristic(state, b) for b in betas])
        JJ1 = np.array([[0.0, 1.0], [-1.0, 0.0]])
        for w in (np.array([0.3, 0.1]), np.array([-1.0, 0.5])):
            kernel = np.exp(1j * betas @ (JJ1.T @ w))
            value = (kernel * chi).sum() * step**2 / (2 * np.pi) ** 2
            assert abs(value.real - wigner(state, w)) <= 1e-6
            assert abs(value.imag) <= 1e-6

    def test_sigma_of_vacuum(self):
        assert max_dev(sigma_from_pi(vacuum()), np.diag([1.0, 0.0])) <= 1e-15


class TestMomentDynamics:
    def test_vacuum_is_fixed_point_of_cavity(self):
        qs = quadrature(cavity(2.0, 0.5))
        traj = evolve_moments(qs, vacuum(), horizon=5.0, dt=0.01)
        assert max_dev(traj.final.cov, vacuum().cov) <= 1e-12

    def test_frozen_system(self):
        qs = QuadratureSystem(
            np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2)
        )
        state = squeezed(0.3)
        traj = evolve_moments(qs, state, horizon=1.0, dt=0.1)
        assert max_dev(traj.final.cov, state.cov) == 0

    def test_mean_follows_matrix_exponential(self):
        qs = quadrature(cavity(1.0, 2.0))
        state = coherent(1.0 + 0.5j)
        traj = evolve_moments(qs, state, horizon=2.0, dt=0.01)
        expected = expm(qs.A * traj.t[-1]) @ state.mean
        assert max_dev(traj.final.mean, expected) <= 1e-8

    def test_validity_preserved(self, rng):
        qs = quadrature(random_params(rng, 2, 2))
        state0 = GaussianState(np.zeros(4), 0.5 * np.diag([np.e, 1 / np.e, 1 / np.e, np.e]))
        traj = evolve_moments(qs, state0, horizon=1.0, dt=0.002)
        for state in traj.states()[::50]:
            assert is_valid(state).min_eigenvalue >= -1e-8

    def test_converges_to_steady_state(self):
        qs = quadrature(cavity(1.0, 0.3))
        traj = evolve_moments(qs, thermal(2.0), horizon=30.0, dt=0.01)
        assert max_dev(traj.final.cov, steady_state(qs).cov) <= 1e-8

    def test_steady_state_requires_stability(self):
        with pytest.raises(PreconditionError):
            steady_state(quadrature(optomechanical(1.0, 0.7, 2.0)))

    def test_bad_step(self):
        with pytest.raises(ValueError):
            evolve_moments(quadrature(cavity(1.0)), vacuum(), 1.0, 0.0)


class TestPureStateGenerator:
    def test_vacuum_generation(self):
        gen = pure_state_generator(0.0, 1.0, 0.0, 0.0, 1.0)
        assert max_dev(gen.target.cov, vacuum().cov) <= 1e-14
        assert max_dev(gen.steady.cov, vacuum().cov) <= 1e-12

    def test_squeezed_generation(self):
        X, Y = 0.2, 1.5
        gen = pure_state_generator(X, Y, 0.0, 0.0, 1.0)
        S = np.array([[Y**-0.5, 0.0], [X * Y**-0.5, Y**0.5]])
        assert max_dev(gen.target.cov, 0.5 * S @ S.T) <= 1e-14
        assert gen.residual <= 1e-8
        assert np.isclose(np.linalg.det(gen.target.cov), 0.25)

    def test_two_mode_generation(self):
        X = np.array([[0.3, 0.1], [0.1, -0.2]])
        Y = np.array([[1.2, 0.3], [0.3, 0.8]])
        R = np.array([[0.5, 0.0], [0.0, 0.2]])
        Gamma = np.array([[0.0, 0.4], [-0.4, 0.0]])
        gen = pure_state_generator(X, Y, R, Gamma, np.eye(2))
        assert gen.residual <= 1e-8
        assert is_pure(gen.steady, tol=1e-8)

    def test_uncontrollable_pair(self):
        with pytest.raises(PreconditionError):
            pure_state_generator(
                np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)), [[1.0], [0.0]]
            )

    def test_graph_covariance_is_pure(self):
        assert np.isclose(np.linalg.det(graph_covariance(0.7, 0.4)), 0.25)


class TestFockBridge:
    def test_vacuum(self):
        fock = gaussian_to_fock(vacuum(), 20)
        expected = np.zeros((20, 20))
        expected[0, 0] = 1.0
        assert max_dev(fock.rho, expected) <= 1e-12

    def test_thermal_weights(self):
        fock = gaussian_to_fock(thermal(1.0), 60)
        k = np.arange(60)
        assert max_dev(fock.rho, np.diag(0.5 ** (k + 1))) <= 1e-12

    def test_squeezed_variance(self):
        r = 0.4
        fock = gaussian_to_fock(squeezed(r), 60)
        q, _ = quadrature_operators(60)
        assert abs(variance(fock, q) - np.exp(-2 * r) / 2) <= 1e-5

    @pytest.mark.parametrize(
        "state",
        [
            coherent(0.8 - 0.6j),
            squeezed(0.5, 0.9),
            GaussianState([0.5, 1.0], [[1.1, 0.3], [0.3, 0.7]]),
        ],
    )
    def test_moments_round_trip(self, state):
        fock = gaussian_to_fock(state, 60)
        back = moments_from_fock(fock)
        assert max_dev(back.mean, state.mean) <= 1e-5
        assert max_dev(back.cov, state.cov) <= 1e-5

    @pytest.mark.parametrize("theta", [0.7, 2.0, -1.1, np.pi])
    def test_rotated_squeezing_angle(self, theta):
        r = 0.4
        fock = gaussian_to_fock(squeezed(r, theta), 60)
        assert fock.moment_residual <= 1e-5
        back = moments_from_fock(fock)
        # qp covariance of exp((z* a² - z a†²)/2)|0⟩ with z = r e^{iθ}
        expected = -0.5 * np.sinh(2 * r) * np.sin(theta)
        assert abs(back.cov[0, 1] - expected) <= 1e-5
        assert abs(back.cov[0, 0] - 0.5 * (np.cosh(2 * r) - np.sinh(2 * r) * np.cos(theta))) <= 1e-5

    def test_invalid_state(self):
        with pytest.raises(PreconditionError):
            gaussian_to_fock(GaussianState([0, 0], 0.3 * np.eye(2)), 20)

    def test_multimode_rejected(self):
        with pytest.raises(DimensionError):
            gaussian_to_fock(vacuum(2), 20)


class TestSkewInformation:
    def test_pure_state_equals_variance(self):
        fock = gaussian_to_fock(squeezed(0.3, 0.5), 60)
        q, p = quadrature_operators(60)
        for X in (q, p):
            assert np.isclose(skew_information(fock, X), variance(fock, X), atol=1e-6)

    def test_commuting_case(self):
        rho = np.eye(6) / 6
        assert skew_information(rho, np.diag(np.arange(6.0))) == 0.0

    def test_mixed_state_bound(self):
        fock = gaussian_to_fock(thermal(1.0), 60)
        q, _ = quadrature_operators(60)
        skew = skew_information(fock, q)
        assert 0 < skew < variance(fock, q)

    def test_negative_density_rejected(self):
        with pytest.raises(StateError):
            skew_information(np.diag([1.2, -0.2]), np.eye(2))


class TestUncertaintyReport:
    def test_vacuum_saturates_heisenberg(self):
        report = uncertainty_report(vacuum(), 20)
        assert np.isclose(report.heisenberg_lhs, 0.5)
        assert np.isclose(report.luo_lhs, 0.25, atol=1e-6)

    def test_thermal_state(self):
        report = uncertainty_report(thermal(1.0), 60)
        assert np.isclose(report.heisenberg_lhs, 1.5)
        assert report.heisenberg_holds
        assert abs(report.U_q * report.U_p - 0.25) <= 1e-3

    @pytest.mark.parametrize(
        "state",
        [
            squeezed(0.5),
            GaussianState([1.0, -0.5], np.diag([1.2, 0.4])),
            coherent(0.5 + 0.5j),
        ],
    )
    def test_axis_aligned_states_minimize_skew_relation(self, state):
        report = uncertainty_report(state, 60)
        assert abs(report.luo_lhs - 0.25) <= 1e-3

    def test_rotated_pure_state_matches_variance_product(self):
        report = uncertainty_report(squeezed(0.5, 0.8), 60)
        assert report.luo_lhs > 0.25 + 1e-3
        assert np.isclose(report.luo_lhs, report.heisenberg_lhs**2, atol=1e-5)
