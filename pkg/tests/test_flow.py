import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import decaylab as dl
from decaylab.flow import dump_flow, inverse_ratio


class TestTransform:
    @pytest.mark.parametrize("beta", [2.0, 3.0])
    def test_closed_form_oracle(self, beta):
        fm = dl.FlowMap(dl.power(beta))
        for x in np.geomspace(1e-4, 1.0, 17):
            exact = (x ** (1.0 - beta) - 1.0) / (beta - 1.0)
            assert fm.compute_F(x) == pytest.approx(exact, rel=1e-9, abs=1e-12)

    def test_anchor_is_exact_zero(self, flow2):
        assert flow2.compute_F(1.0) == 0.0

    def test_linear_log_oracle(self, flin):
        fm = dl.FlowMap(flin)
        assert fm.compute_F(0.1) == pytest.approx(math.log(10.0), rel=1e-12)

    def test_strictly_decreasing_cache(self, flow2):
        flow2.compute_F(1e-6)
        xs, Fs = flow2.cache_nodes()
        assert np.all(np.diff(xs) < 0)
        assert np.all(np.diff(Fs) > 0)

    def test_outside_unit_interval_rejected(self, flow2):
        with pytest.raises(dl.DomainError):
            flow2.compute_F(1.5)
        with pytest.raises(dl.DomainError):
            flow2.compute_F(0.0)

    def test_refining_tolerance_stays_within_budget(self, f2):
        coarse = dl.FlowMap(f2, abs_tol=1e-8, rel_tol=1e-8)
        fine = dl.FlowMap(f2, abs_tol=1e-9, rel_tol=1e-9)
        for x in np.geomspace(1e-4, 0.5, 9):
            a, b = coarse.compute_F(x), fine.compute_F(x)
            assert abs(a - b) <= 10.0 * (1e-8 + 1e-8 * abs(b))

    def test_flat_exponential_domain_floor(self, fflat):
        fm = dl.FlowMap(fflat)
        with pytest.raises(dl.DomainError) as err:
            fm.compute_F(1e-6)
        assert "below" in str(err.value) or "overflow" in str(err.value)

    def test_custom_table_must_reach_anchor(self):
        x = np.geomspace(1e-3, 0.5, 50)  # stops short of 1
        f = dl.from_table(x, x**2)
        with pytest.raises(dl.ValidationError):
            dl.FlowMap(f)


class TestInverse:
    def test_examples(self, inv2, flin):
        assert inv2.compute(1.0) == pytest.approx(0.5, abs=1e-9)
        assert inv2.compute(0.0) == 1.0
        lin_inv = dl.InverseFlow(dl.FlowMap(flin))
        assert lin_inv.compute(3.0) == pytest.approx(math.exp(-3.0), rel=1e-9)

    def test_round_trip_across_six_decades(self, flow2, inv2):
        for t in np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 60)]):
            assert abs(flow2.compute_F(inv2.compute(float(t))) - t) <= 1e-8

    @given(t=st.floats(min_value=0.0, max_value=1e5), dt=st.floats(min_value=1e-3, max_value=1e5))
    @settings(max_examples=40, deadline=None)
    def test_strictly_decreasing(self, inv2, t, dt):
        assert inv2.compute(t + dt) < inv2.compute(t)

    def test_negative_time_rejected(self, inv2):
        with pytest.raises(dl.DomainError):
            inv2.compute(-1.0)

    def test_domain_floor_error_names_range(self, flin):
        inv = dl.InverseFlow(dl.FlowMap(flin))
        with pytest.raises(dl.DomainError) as err:
            inv.compute(1e6)
        assert "largest supported" in str(err.value)


class TestRegimeSignatures:
    def test_power_ratio_bounded_between(self, inv2):
        ts = np.geomspace(1e4, 1e6, 12)
        r = inverse_ratio(inv2, 0.5, ts)
        assert np.all(r > 0.6) and np.all(r < 0.7)  # closed form: -> 2/3

    def test_linear_ratio_collapses_to_zero(self, flin):
        inv = dl.InverseFlow(dl.FlowMap(flin))
        ts = np.geomspace(50.0, 500.0, 10)
        r = inverse_ratio(inv, 0.1, ts)
        assert r[-1] < 1e-6
        assert np.all(np.diff(r) < 0)

    def test_flat_exponential_ratio_tends_to_one(self, fflat):
        inv = dl.InverseFlow(dl.FlowMap(fflat))
        mins = []
        for t_hi in (1e4, 1e5, 1e6):
            ts = np.geomspace(t_hi / 10.0, t_hi, 8)
            mins.append(float(np.min(inverse_ratio(inv, 0.1, ts))))
        assert mins[0] > 0.98
        assert mins[0] < mins[1] < mins[2] < 1.0

    def test_flat_exponential_transform_ratio_blows_up(self, fflat):
        fm = dl.FlowMap(fflat)
        xs = 0.1 * 0.5 ** np.arange(6)
        ratios = [fm.compute_F(0.5 * x) / fm.compute_F(x) for x in xs]
        assert ratios[-1] > 1e3
        assert np.all(np.diff(ratios) > 0)


class TestPhiFBounds:
    def test_beta2_records_within_bounds(self, f2, flow2, inv2):
        rho = dl.estimate_rho_limits(f2, flow2, dl.ScaleGrid(rungs=21))
        rep = dl.verify_phi_F_bounds(inv2, rho.l, rho.L, eps_ladder=(0.1, 0.5))
        assert rep.all_within
        by_eps = {r.eps: r for r in rep.records}
        # closed form: ratio -> 1/(1+eps); 1 - liminf -> eps/(1+eps)
        assert by_eps[0.5].one_minus_liminf == pytest.approx(1.0 / 3.0, abs=2e-4)
        assert by_eps[0.1].one_minus_liminf == pytest.approx(0.1 / 1.1, abs=2e-4)

    def test_beta3_against_closed_form(self, f3, flow3, inv3):
        rho = dl.estimate_rho_limits(f3, flow3, dl.ScaleGrid(rungs=21))
        rep = dl.verify_phi_F_bounds(inv3, rho.l, rho.L, eps_ladder=(0.1, 0.5))
        assert rep.all_within
        for r in rep.records:
            assert r.one_minus_liminf == pytest.approx(1.0 - (1.0 + r.eps) ** -0.5, abs=2e-4)

    def test_small_x_transform_ratio_approaches_one(self, f2, flow2, inv2):
        rho = dl.estimate_rho_limits(f2, flow2, dl.ScaleGrid(rungs=21))
        rep = dl.verify_phi_F_bounds(inv2, rho.l, rho.L)
        assert rep.psi_approaches_one
        assert rep.psi_liminf[-1] > 0.98


class TestDump:
    def test_dump_shape_and_determinism(self, inv2):
        a = dump_flow(inv2, 1e4, 50)
        b = dump_flow(inv2, 1e4, 50)
        assert a == b
        assert a[0] == (0.0, 1.0)
        assert len(a) == 50
        ts = [row[0] for row in a]
        vals = [row[1] for row in a]
        assert ts == sorted(ts)
        assert vals == sorted(vals, reverse=True)
