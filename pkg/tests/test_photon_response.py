import numpy as np
import pandas as pd
import pytest
from helpers import max_dev
from hypothesis import given, settings
from hypothesis import strategies as st

from photon_response import (
    PhotonGaussianSpec,
    PhotonTensor,
    PulseShape,
    cavity_output_oracle,
    fft_frequencies,
    gaussian_pulse,
    mode_product,
    multiphoton_transform,
    output_pulse_passive,
    photon_gaussian_transform,
    product_tensor,
    vacuum_R,
)
from system_model import (
    PhysicalParams,
    build_state_space,
    cavity,
    random_params,
    transfer_function,
)
from utils import (
    PAD_FACTOR,
    DimensionError,
    PreconditionError,
    ResourceError,
    SchemaError,
    StateError,
)

T0, DT, L = -10.0, 0.05, 800


def l2(a, b, dt):
    return np.sqrt(np.sum(np.abs(np.asarray(a) - np.asarray(b)) ** 2) * dt)


def squeezer(kappa=2.0, eps=0.3):
    return PhysicalParams.from_blocks(
        S=[[1.0]],
        C_minus=[[np.sqrt(kappa)]],
        Omega_minus=[[0.0]],
        Omega_plus=[[eps]],
    )


def single_photon_spec(pulse, m=1):
    xi_minus = np.zeros((m, m, len(pulse)), dtype=complex)
    for k in range(m):
        xi_minus[k, k] = pulse.samples
    return PhotonGaussianSpec(
        pulse.t0, pulse.dt, xi_minus, np.zeros_like(xi_minus), vacuum_R(m, PAD_FACTOR * len(pulse))
    )


class TestPulseShape:
    def test_gaussian_is_normalized(self):
        pulse = gaussian_pulse(T0, DT, L, center=1.0, width=0.7)
        assert np.isclose(pulse.norm(), 1.0, atol=1e-12)
        assert np.isclose(pulse.times[-1], T0 + DT * (L - 1))

    def test_normalized(self):
        pulse = PulseShape(0.0, 0.5, [1.0, 1j, 0.0])
        assert np.isclose(pulse.normalized().norm(), 1.0)

    def test_zero_pulse_cannot_be_normalized(self):
        with pytest.raises(StateError):
            PulseShape(0.0, 0.1, np.zeros(4)).normalized()

    def test_too_short(self):
        with pytest.raises(DimensionError):
            PulseShape(0.0, 0.1, [1.0])

    def test_frame_round_trip(self):
        pulse = gaussian_pulse(-2.0, 0.25, 17)
        restored = PulseShape.from_frame(pulse.to_frame())
        assert np.isclose(restored.dt, 0.25)
        assert max_dev(restored.samples, pulse.samples) <= 1e-15

    def test_non_uniform_grid_rejected(self):
        frame = pd.DataFrame({"t": [0.0, 0.1, 0.3], "re": [0, 1, 0], "im": [0, 0, 0]})
        with pytest.raises(SchemaError):
            PulseShape.from_frame(frame)

    def test_bins_cover_padded_grid(self):
        omegas = fft_frequencies(L, DT)
        assert omegas.size == PAD_FACTOR * L
        assert np.isclose(np.max(np.abs(omegas)), np.pi / DT)


class TestSinglePhoton:
    def test_decoupled_system_passes_pulse_through(self):
        params = PhysicalParams.from_blocks(S=[[1.0]], C_minus=[[0.0]], Omega_minus=[[0.4]])
        pulse = gaussian_pulse(T0, DT, L)
        (out,) = output_pulse_passive(params, [pulse])
        assert max_dev(out.samples, pulse.samples) <= 1e-12

    def test_cavity_matches_convolution_oracle(self):
        kappa = 2.0
        pulse = gaussian_pulse(T0, DT, L)
        (out,) = output_pulse_passive(cavity(kappa), [pulse])
        assert np.allclose(out.times, pulse.times)
        assert l2(out.samples, cavity_output_oracle(out.times, kappa), DT) <= 1e-5

    def test_shifted_pulse_oracle(self):
        kappa = 1.0
        pulse = gaussian_pulse(T0, DT, L, center=2.0, width=1.5)
        (out,) = output_pulse_passive(cavity(kappa), [pulse])
        expected = cavity_output_oracle(out.times, kappa, center=2.0, width=1.5)
        assert l2(out.samples, expected, DT) <= 1e-5

    @pytest.mark.parametrize("kappa, omega", [(2.0, 0.0), (1.0, 0.7), (4.0, -1.5)])
    def test_passive_norm_preservation(self, kappa, omega):
        pulse = gaussian_pulse(T0, DT, L)
        (out,) = output_pulse_passive(cavity(kappa, omega), [pulse])
        assert abs(out.norm() - pulse.norm()) <= 1e-6

    @settings(max_examples=10)
    @given(
        a=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
        b=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
    )
    def test_linearity(self, a, b):
        params = random_params(np.random.default_rng(7), 2, 2, passive=True)
        mu1 = [gaussian_pulse(T0, DT, L, center=c) for c in (-1.0, 0.5)]
        mu2 = [gaussian_pulse(T0, DT, L, center=c, width=0.5) for c in (1.0, 2.0)]
        mixed = [
            PulseShape(T0, DT, a * p.samples + b * q.samples) for p, q in zip(mu1, mu2)
        ]
        out1 = output_pulse_passive(params, mu1)
        out2 = output_pulse_passive(params, mu2)
        out = output_pulse_passive(params, mixed)
        for k in range(2):
            expected = a * out1[k].samples + b * out2[k].samples
            assert max_dev(out[k].samples, expected) <= 1e-12

    def test_non_passive_rejected(self):
        with pytest.raises(PreconditionError):
            output_pulse_passive(squeezer(), [gaussian_pulse(T0, DT, L)])

    def test_pulse_count_checked(self):
        pulse = gaussian_pulse(T0, DT, L)
        with pytest.raises(DimensionError):
            output_pulse_passive(cavity(1.0), [pulse, pulse])


class TestPhotonGaussian:
    def test_passive_vacuum_correlations_are_preserved(self):
        pulse = gaussian_pulse(T0, DT, L)
        spec = single_photon_spec(pulse)
        out = photon_gaussian_transform(build_state_space(cavity(2.0, 0.5)), spec)
        assert np.max(np.abs(out.R - spec.R)) <= 1e-12
        assert np.all(out.xi_plus == 0)

    def test_single_photon_spec_matches_pulse_response(self):
        pulse = gaussian_pulse(T0, DT, L)
        out = photon_gaussian_transform(build_state_space(cavity(2.0)), single_photon_spec(pulse))
        (expected,) = output_pulse_passive(cavity(2.0), [pulse])
        assert max_dev(out.xi_minus[0, 0], expected.samples) <= 1e-12
        assert out.normalization_residual() <= 1e-6

    def test_identity_system_leaves_spec_unchanged(self):
        params = PhysicalParams.from_blocks(S=[[1.0]], C_minus=[[0.0]], Omega_minus=[[0.2]])
        spec = single_photon_spec(gaussian_pulse(T0, DT, L))
        out = photon_gaussian_transform(build_state_space(params), spec)
        assert max_dev(out.xi_minus, spec.xi_minus) <= 1e-12
        assert max_dev(out.R, spec.R) <= 1e-14

    def test_squeezer_follows_bin_formula(self):
        ss = build_state_space(squeezer())
        spec = single_photon_spec(gaussian_pulse(T0, DT, L))
        out = photon_gaussian_transform(ss, spec)
        k = 5
        Xi = transfer_function(ss, 1j * spec.omegas[k])
        assert max_dev(out.R[k], Xi @ spec.R[k] @ Xi.conj().T) <= 1e-10
        assert np.max(np.abs(out.xi_plus)) > 1e-3
        assert out.normalization() is None

    def test_unstable_system_rejected(self):
        spec = single_photon_spec(gaussian_pulse(T0, DT, L))
        with pytest.raises(PreconditionError):
            photon_gaussian_transform(build_state_space(squeezer(eps=3.0)), spec)

    def test_channel_mismatch(self):
        spec = single_photon_spec(gaussian_pulse(T0, DT, L), m=2)
        with pytest.raises(DimensionError):
            photon_gaussian_transform(build_state_space(cavity(1.0)), spec)

    def test_bad_R_grid(self):
        pulse = gaussian_pulse(T0, DT, L)
        xi = pulse.samples.reshape(1, 1, -1)
        with pytest.raises(DimensionError):
            PhotonGaussianSpec(T0, DT, xi, np.zeros_like(xi), vacuum_R(1, L))

    def test_two_photons_in_one_mode(self):
        pulse = gaussian_pulse(T0, DT, L)
        xi_minus = np.zeros((2, 2, L), dtype=complex)
        xi_minus[0, 0] = xi_minus[0, 1] = pulse.samples
        spec = PhotonGaussianSpec(
            T0, DT, xi_minus, np.zeros_like(xi_minus), vacuum_R(2, PAD_FACTOR * L)
        )
        assert np.isclose(spec.normalization(), 2.0)


class TestMultiPhoton:
    grid = (-6.0, 0.2, 128)
    kappa = 1.0

    def pulse(self, center=0.0, width=1.0):
        return gaussian_pulse(*self.grid, center=center, width=width)

    def test_single_photon_reduces_to_pulse_response(self):
        pulse = self.pulse()
        psi = PhotonTensor(pulse.t0, pulse.dt, pulse.samples.reshape(1, -1))
        out = multiphoton_transform(cavity(self.kappa), psi)
        (expected,) = output_pulse_passive(cavity(self.kappa), [pulse])
        assert max_dev(out.values[0], expected.samples) <= 1e-14

    def test_separable_two_photon_state(self):
        pulse = self.pulse()
        psi = product_tensor([pulse, pulse], [0, 0], 1)
        out = multiphoton_transform(cavity(self.kappa), psi)
        nu = cavity_output_oracle(pulse.times, self.kappa)
        assert max_dev(out.values[0, 0], np.outer(nu, nu)) <= 1e-4

    def test_entangled_two_photon_state(self):
        a, b = self.pulse(center=-1.0), self.pulse(center=1.5, width=0.8)
        psi = PhotonTensor(
            a.t0,
            a.dt,
            (product_tensor([a, b], [0, 0], 1).values + product_tensor([b, a], [0, 0], 1).values),
        )
        out = multiphoton_transform(cavity(self.kappa), psi)
        nu_a = cavity_output_oracle(a.times, self.kappa, center=-1.0)
        nu_b = cavity_output_oracle(a.times, self.kappa, center=1.5, width=0.8)
        expected = np.outer(nu_a, nu_b) + np.outer(nu_b, nu_a)
        assert max_dev(out.values[0, 0], expected) <= 1e-4

    def test_mode_products_commute(self, rng):
        params = random_params(rng, 1, 2, passive=True)
        a, b = self.pulse(), self.pulse(center=2.0)
        psi = product_tensor([a, b], [0, 1], 2)
        first = mode_product(params, mode_product(params, psi, 0), 1)
        second = mode_product(params, mode_product(params, psi, 1), 0)
        assert max_dev(first.values, second.values) <= 1e-10

    def test_per_channel_sequence(self):
        pulse = self.pulse()
        tensors = [product_tensor([pulse], [0], 1), product_tensor([pulse, pulse], [0, 0], 1)]
        outs = multiphoton_transform(cavity(self.kappa), tensors)
        assert [t.photons for t in outs] == [1, 2]

    def test_symmetrization_and_normalization(self):
        a, b = self.pulse(center=-2.0), self.pulse(center=3.0)
        psi = product_tensor([a, b], [0, 0], 1)
        sym = psi.symmetrized()
        assert max_dev(sym.values, np.swapaxes(sym.values, 2, 3)) <= 1e-15
        # nearly orthogonal pulses: one photon in each of two modes
        assert np.isclose(psi.normalization_constant(), 1.0, atol=1e-3)
        same = product_tensor([a, a], [0, 0], 1)
        assert np.isclose(same.normalization_constant(), 2.0, atol=1e-10)

    def test_tensor_dict_round_trip(self):
        psi = product_tensor([self.pulse(), self.pulse(center=1.0)], [0, 1], 2)
        restored = PhotonTensor.from_dict(psi.to_dict())
        assert restored.values.shape == psi.values.shape
        assert max_dev(restored.values, psi.values) == 0

    def test_resource_limit(self):
        psi = PhotonTensor(0.0, 0.01, np.zeros((1, 1, 1600, 1600), dtype=complex))
        with pytest.raises(ResourceError):
            multiphoton_transform(cavity(1.0), psi)

    def test_photon_limit(self):
        pulse = gaussian_pulse(-2.0, 0.5, 8)
        psi = product_tensor([pulse] * 3, [0, 0, 0], 1)
        with pytest.raises(PreconditionError):
            multiphoton_transform(cavity(1.0), psi)
