import math

import numpy as np
import pytest

import decaylab as dl

# int_0^inf (1+s)^-2 cos(s) ds, frozen from a 30-digit oscillatory-quadrature run
OSC_SHIFT = 0.37855037576418664
# int_5^inf (1+s)^-2 cos(s) ds, same source
OSC_TAIL_AT_5 = 0.025602318634704


class TestGamma:
    def test_power_tail_closed_form(self):
        g = dl.power_tail(1.0, 3.0)
        assert dl.gamma_of(g, 0.0) == pytest.approx(-0.5, rel=1e-12)
        assert dl.gamma_of(g, 9.0) == pytest.approx(-0.005, rel=1e-12)

    def test_zero_perturbation(self):
        g = dl.zero_perturbation()
        assert dl.gamma_of(g, 0.0) == 0.0
        assert dl.gamma_of(g, 17.3) == 0.0

    def test_divergent_tail_rejected(self):
        g = dl.power_tail(1.0, 0.5)
        assert not g.has_convergent_integral
        with pytest.raises(dl.DomainError):
            dl.gamma_of(g, 1.0)

    def test_numeric_envelope_must_be_integrable(self):
        with pytest.raises(dl.ValidationError):
            dl.custom_perturbation(lambda t: (1.0 + t) ** -0.9, envelope=(1.0, 0.9))

    def test_envelope_violation_detected(self):
        with pytest.raises(dl.ValidationError):
            dl.custom_perturbation(lambda t: 5.0 * (1.0 + t) ** -2.0, envelope=(1.0, 2.0))

    def test_oscillatory_tail_matches_frozen_oracle(self):
        g = dl.oscillatory(1.0, 2.0, 1.0)
        assert dl.gamma_of(g, 0.0) == pytest.approx(-OSC_SHIFT, abs=1e-8)
        assert dl.gamma_of(g, 5.0) == pytest.approx(-OSC_TAIL_AT_5, abs=1e-8)

    def test_oscillatory_conditionally_convergent_needs_closed_form(self):
        g = dl.oscillatory(1.0, 0.8, 1.0)
        assert g.has_convergent_integral
        with pytest.raises(dl.DomainError):
            dl.gamma_of(g, 1.0)

    def test_numeric_envelope_mode_agrees_with_closed_form(self):
        g = dl.custom_perturbation(lambda t: (1.0 + t) ** -3.0, envelope=(1.0, 3.0))
        assert dl.gamma_of(g, 0.0) == pytest.approx(-0.5, abs=1e-8)
        assert dl.gamma_of(g, 9.0) == pytest.approx(-0.005, abs=1e-8)


class TestReduction:
    def test_power_tail_shift(self):
        gamma, xi_p = dl.reduce_external_to_internal(dl.power_tail(1.0, 3.0), 1.0)
        assert xi_p == pytest.approx(1.5, rel=1e-12)
        assert gamma(0.0) == pytest.approx(-0.5, rel=1e-12)

    def test_zero_shift(self):
        gamma, xi_p = dl.reduce_external_to_internal(dl.zero_perturbation(), 2.0)
        assert xi_p == 2.0
        assert gamma(5.0) == 0.0

    def test_oscillatory_shift_pinned(self):
        _, xi_p = dl.reduce_external_to_internal(dl.oscillatory(1.0, 2.0, 1.0), 0.0)
        assert xi_p == pytest.approx(OSC_SHIFT, abs=1e-8)

    def test_divergent_rejected(self):
        with pytest.raises(dl.DomainError):
            dl.reduce_external_to_internal(dl.power_tail(1.0, 1.0), 0.0)


class TestExternalIntegration:
    def test_unperturbed_exactness(self, f2):
        traj = dl.integrate_external(f2, dl.zero_perturbation(), 1.0, 1e6)
        assert float(np.max(np.abs(traj.x * (1.0 + traj.t) - 1.0))) <= 1e-5

    def test_sign_flip_symmetry(self, f2):
        up = dl.integrate_external(f2, dl.zero_perturbation(), 1.0, 1e4)
        dn = dl.integrate_external(f2, dl.zero_perturbation(), -1.0, 1e4)
        assert np.max(np.abs(up.x + dn.x)) <= 1e-8

    @pytest.mark.parametrize("beta", [2.0, 3.0])
    @pytest.mark.parametrize("xi", [0.37, 1.0])
    def test_matches_shifted_inverse_flow(self, beta, xi):
        f = dl.power(beta)
        fm = dl.FlowMap(f)
        inv = dl.InverseFlow(fm)
        traj = dl.integrate_external(f, dl.zero_perturbation(), xi, 1e6)
        shift = fm.compute_F(xi)
        ref = np.array([inv.compute(float(t) + shift) for t in traj.t[:: 16]])
        got = traj.x[:: 16]
        assert np.max(np.abs(got - ref) / ref) <= 1e-6

    def test_sign_trapping(self, f3):
        traj = dl.integrate_external(f3, dl.zero_perturbation(), 1.0, 1e5)
        assert np.all(traj.x > 0.0)
        traj = dl.integrate_external(f3, dl.zero_perturbation(), -1.0, 1e5)
        assert np.all(traj.x < 0.0)

    def test_convergence_toward_zero_when_integral_converges(self, f2):
        traj = dl.integrate_external(f2, dl.power_tail(1.0, 3.0), 1.0, 1e5)
        assert abs(traj.x[-1]) < abs(traj.x[0])
        w = traj.t >= traj.t[-1] / 10.0
        assert np.polyfit(np.log10(1.0 + traj.t[w]), np.abs(traj.x[w]), 1)[0] < 0

    def test_boundedness_reported(self, f2):
        traj = dl.integrate_external(f2, dl.power_tail(1.0, 1.5), 1.0, 1e6)
        assert np.all(np.isfinite(traj.x))
        assert np.all(np.diff(traj.t) > 0)
        assert traj.stats.n_accepted > 0
        assert traj.stats.n_rhs_evals > traj.stats.n_accepted

    def test_residual_identity_at_nodes(self, f2):
        g = dl.power_tail(1.0, 3.0)
        traj = dl.integrate_external(f2, g, 1.0, 1e4)
        resid = traj.deriv + np.array([f2.eval(v) for v in traj.x]) - g.g(traj.t)
        assert np.max(np.abs(resid)) <= 1e-12

    def test_horizon_below_one_rejected(self, f2):
        with pytest.raises(dl.ValidationError):
            dl.integrate_external(f2, dl.zero_perturbation(), 1.0, 0.5)

    def test_tolerance_halving_honesty(self, f2):
        g = dl.power_tail(1.0, 3.0)
        base = dl.integrate_external(f2, g, 1.0, 1e6, rtol=1e-8, atol=1e-12)
        tight = dl.integrate_external(f2, g, 1.0, 1e6, rtol=5e-9, atol=5e-13)
        assert abs(base.x[-1] - tight.x[-1]) <= 1e2 * base.stats.local_error_bound


class TestInternalIntegration:
    def test_zero_shift_reduces_to_unperturbed(self, f2):
        traj = dl.integrate_internal(f2, lambda t: 0.0, 1.0, 1e5)
        assert np.max(np.abs(traj.x * (1.0 + traj.t) - 1.0)) <= 1e-5

    def test_identity_with_external_route(self, f2):
        g = dl.power_tail(1.0, 3.0)
        gamma, xi_p = dl.reduce_external_to_internal(g, 1.0)
        tx = dl.integrate_external(f2, g, 1.0, 1e6, rtol=1e-10, atol=1e-13)
        tz = dl.integrate_internal(f2, gamma, xi_p, 1e6, rtol=1e-10, atol=1e-13)
        gam = np.array([gamma(float(t)) for t in tx.t])
        assert np.max(np.abs(tx.x - (tz.x + gam))) <= 1e-6

    def test_comparable_shift_keeps_ratio_bounded(self, f2, inv2):
        traj = dl.integrate_internal(f2, lambda t: (1.0 + t) ** -1.0, 1.0, 1e5)
        finv = np.array([inv2.compute(float(t)) for t in traj.t])
        ratio = np.abs(traj.x) / finv
        w = traj.t >= traj.t[-1] / 10.0
        assert np.max(ratio[w]) < 5.0
