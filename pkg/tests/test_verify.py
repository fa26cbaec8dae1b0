import csv
import json
import math
from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snlw import verify as V
from snlw.imethod import MultiplierSpec
from snlw.noise import NoiseConfig, NoiseSource
from snlw.solver import SolverConfig, WaveState, cutoff_profile
from snlw.spectral_grid import GridSpec, RealField

from oracles import covariance_loop

TWO_PI = 2 * np.pi
SMALL = V.WickSetup.default(n=32, steps=2)


class TestRegression:
    def test_exact_power_law(self):
        fit = V.loglog_fit([(x, 3.0 * x**-0.7) for x in (2.0, 4.0, 8.0, 16.0)])
        assert fit.slope == pytest.approx(-0.7)
        assert fit.intercept == pytest.approx(math.log(3.0))
        assert fit.stderr_slope < 1e-12

    def test_constant_data(self):
        fit = V.loglog_fit([(1, 5), (2, 5), (3, 5)])
        assert fit.slope == pytest.approx(0.0, abs=1e-15)

    def test_noisy_slope(self):
        rng = np.random.default_rng(0)
        xs = np.geomspace(1, 1000, 40)
        ys = xs**-1.0 * np.exp(0.05 * rng.standard_normal(40))
        fit = V.loglog_fit(zip(xs, ys))
        assert abs(fit.slope + 1.0) < 4 * fit.stderr_slope + 1e-3
        assert 0 < fit.stderr_slope < 0.02

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.1, 10))
    def test_recovers_any_power(self, slope, scale):
        fit = V.loglog_fit([(x, scale * x**slope) for x in (1.0, 3.0, 9.0)])
        assert fit.slope == pytest.approx(slope, abs=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            V.loglog_fit([(1, 1), (2, 2)])
        with pytest.raises(ValueError):
            V.loglog_fit([(1, 1), (2, 0), (3, 1)])
        with pytest.raises(ValueError):
            V.loglog_fit([(2, 1), (2, 2), (2, 3)])


class TestReports:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
    def test_passed_is_the_band(self, stat, a, b):
        lo, hi = sorted((a, b))
        r = V.TestReport("x", stat, lo, hi, 1)
        assert r.passed == (lo <= stat <= hi)

    def test_json_round_trip(self):
        r = V.TestReport("cauchy", -0.2, -math.inf, -0.05, 10, {"rms": np.array([1.0, 0.5]), "k": np.int64(3)})
        d = json.loads(r.to_json())
        assert d["format"] == V.FORMAT_REPORT
        assert d["band_low"] is None and d["band_high"] == -0.05
        assert d["pass"] is True
        assert d["metadata"] == {"rms": [1.0, 0.5], "k": 3}
        assert r.line().startswith("PASS cauchy:")
        assert V.TestReport("y", 1.0, 0.0, 0.5, 1).line().startswith("FAIL y:")

    def test_summary_csv(self, tmp_path):
        reports = [V.TestReport("a", 0.1, 0.0, 1.0, 3), V.TestReport("b", 2.0, 0.0, 1.0, 3)]
        path = tmp_path / "summary.csv"
        V.write_summary_csv(reports, path, {"seed": 1})
        lines = path.read_text().splitlines()
        assert lines[0] == f"# format={V.FORMAT_REPORT}"
        assert json.loads(lines[1][len("# config="):]) == {"seed": 1}
        rows = list(csv.DictReader(lines[2:]))
        assert [r["pass"] for r in rows] == ["1", "0"]
        assert float(rows[0]["statistic"]) == 0.1


class TestSeedMap:
    def test_jobs_do_not_change_results(self):
        fn = partial(V._moment_worker, setup=SMALL, ls=(2,), eps=0.2, p=2.0, Ns=(4.0,), sigma_scale=1.0)
        serial = V.seed_map(fn, [1, 2, 3], jobs=1)
        parallel = V.seed_map(fn, [1, 2, 3], jobs=2)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestNoiseChecks:
    def test_covariance_oracle_matches_mode_loop(self):
        g = GridSpec(TWO_PI, 6)
        x, y = (0.3, 1.1), (2.0, -0.4)
        assert V.covariance_oracle(g, g.nyquist, 0.8, x, y) == pytest.approx(
            covariance_loop(6, TWO_PI, g.nyquist, 0.8, x, y), rel=1e-10)

    def test_covariance_mc(self):
        r = V.covariance_test(draws=20_000, pairs=4)
        assert r.passed, r.line()
        assert r.metadata["retained_modes"] == 25

    def test_renormalisation_and_ablation(self):
        g = GridSpec(TWO_PI, 8)
        good = V.renormalisation_test(g, g.nyquist, draws=4000, points=3)
        assert good.passed, good.line()
        bare = V.renormalisation_test(g, g.nyquist, draws=4000, points=3, sigma_scale=0.0)
        assert not bare.passed and bare.statistic > 20

    def test_moment_ratio_small(self):
        # the ratio approaches 1 from above; at N = 4 it is still pre-asymptotic
        setup = V.WickSetup.default(n=64, steps=2)
        r = V.moment_bound_test(2, 0.2, 2.0, 16.0, range(8), setup=setup)
        assert r.passed, r.line()

    def test_centering_detects_counterterm_fault(self):
        good = V.centering_test(2, 8.0, range(40), setup=SMALL)
        bad = V.centering_test(2, 8.0, range(40), setup=SMALL, sigma_scale=1.5)
        assert good.passed, good.line()
        assert not bad.passed, bad.line()

    def test_cauchy_coupled_vs_decoupled(self):
        setup = V.WickSetup.default(n=64, steps=2)
        _, coupled = V.cauchy_rate_test(1, 0.2, [4.0, 8.0, 16.0], range(6), setup=setup)
        _, decoupled = V.cauchy_rate_test(1, 0.2, [4.0, 8.0, 16.0], range(6), setup=setup, coupling="decoupled")
        assert coupled.statistic < decoupled.statistic
        assert not decoupled.passed

    def test_cauchy_rejects_unresolved_cutoff(self):
        with pytest.raises(ValueError):
            V.cauchy_statistics((1,), 0.2, [16.0, 32.0], [0], setup=SMALL)
        with pytest.raises(ValueError):
            V.cauchy_statistics((1,), 0.2, [2.0, 4.0], [0], setup=SMALL, coupling="other")

    def test_cauchy_band_collapses_on_noisy_fit(self):
        per_seed = np.array([[1.0, 0.1, 1.0]])
        fit, r = V.cauchy_report(1, 0.2, [4.0, 8.0, 16.0], per_seed)
        assert fit.stderr_slope > 0.1
        assert r.band_high == -math.inf and not r.passed

    def test_time_continuity(self):
        setup = V.WickSetup.default(n=32, steps=2)
        _, r = V.time_continuity_test(1, 0.2, [0.05, 0.1, 0.2], range(6), setup=setup, N=8.0)
        assert r.passed, r.line()


class TestLpGrowth:
    def test_order(self):
        assert V.lp_order(8.0) == 4
        assert V.lp_order(math.exp(7.5)) == 8
        assert V.lp_order(1e30) == 16

    def test_second_moment_matches_analytic(self):
        N_list = [4.0, 8.0]
        per_seed = V.lp_moments((2.0,), N_list, range(60), setup=SMALL)[:, 0, :]
        m, se = V._mean_stderr(per_seed)
        for j, N in enumerate(N_list):
            analytic = V.lp2_analytic(SMALL, N, 0.9)
            assert abs(m[j] - analytic) < 4 * se[j]

    def test_identity_dominates_multiplier(self):
        assert V.lp2_analytic(SMALL, 4.0, 0.9, identity=True) >= V.lp2_analytic(SMALL, 4.0, 0.9)

    def test_report_band(self):
        r = V.lp_growth_report(2.0, [4.0, 8.0, 16.0], np.array([[1.0, 1.5, 2.0], [1.0, 1.5, 2.0]]))
        assert r.band_low == 1.0 and r.band_high == 2.0
        assert r.statistic >= 1.0


class TestCommutatorSuite:
    def test_random_field_is_real_and_decays(self):
        g = GridSpec(TWO_PI, 32)
        v = V.random_hs_field(g, 0.9, np.random.default_rng(0))
        c = np.abs(np.fft.fft2(v.values))
        assert c[1, 0] > c[12, 0]

    def test_exponent(self):
        assert V.bound_exponent(2, 0.9) == pytest.approx(-0.8)
        assert V.bound_exponent(3, 0.9) == pytest.approx(-0.7)

    def test_small_suite(self):
        results = V.commutator_slope_suite([0.9], [1, 2], [2.0, 4.0, 8.0], [0, 1], grid=GridSpec(TWO_PI, 64))
        (none, k1), (fit, k2) = results
        assert none is None and k1.passed and k1.statistic < 1e-12
        assert fit.slope < 0


class TestEnergyChecks:
    grid = GridSpec(TWO_PI, 32)

    def state(self):
        x1, x2 = self.grid.coordinates()
        v = 0.3 * np.cos(x1) + 0.2 * np.sin(2 * x2)
        return WaveState(RealField(self.grid, v), RealField(self.grid, 0.1 * np.cos(x1 + x2)))

    def test_decomposition(self):
        rho = cutoff_profile(self.grid, 1.0, 1.0)
        cfg = SolverConfig(dt=self.grid.dx / 8, rho=rho)
        noise = NoiseSource(NoiseConfig(0, 4.0, self.grid))
        r = V.energy_decomposition_test(self.state(), noise, cfg, MultiplierSpec(2.0, 0.9), 0.2)
        assert r.passed, r.line()

    def test_conservation(self):
        cfg = SolverConfig(dt=self.grid.dx / 4, rho=RealField(self.grid, np.ones((32, 32))))
        r = V.conservation_test(self.state(), cfg, 1.0)
        assert r.passed, r.line()


class TestPropagationChecks:
    def test_discrepancy_of_identical_runs(self):
        setup = V.PropagationSetup(n=32, T=0.25)
        g = setup.grid
        rho = cutoff_profile(g, 1.0, 1.0).values
        r = V.propagation_test(rho, rho, setup, tolerance=1e-3)
        assert r.statistic == 0.0 and r.passed
        neg = V.propagation_test(rho, rho, setup, tolerance=1e-3, negative_control=True)
        assert not neg.passed

    def test_perturbed_cutoff_differs_inside_cone(self):
        g = GridSpec(16.0, 64)
        T = 0.5
        inner = cutoff_profile(g, 1.0, 1.0).values
        pert = V.perturbed_cutoff(g, T).values
        assert np.abs(inner - pert)[g.radius() < 2 * T].max() > 0

    def test_cone_discrepancy_ignores_outside(self):
        g = GridSpec(16.0, 32)
        a = WaveState.zero(g)
        vals = np.where(g.radius() > 3.0, 1.0, 0.0)
        b = WaveState(RealField(g, vals), RealField(g, np.zeros((32, 32))))
        assert V.cone_discrepancy([a], [b], g, 2.0) == 0.0
        assert V.cone_discrepancy([a], [b], g, 4.0) == 1.0
