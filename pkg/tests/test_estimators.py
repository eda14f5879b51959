import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lossnet import PFI, SSS, Threshold, reference_params, run
from lossnet.analytic import best_threshold, fluid_reward, sss_window
from lossnet.estimators import (
    EpochRecord,
    EpochTable,
    GapEstimate,
    Method,
    TooFewEpochs,
    batch_means,
    decomposition_report,
    detect_pfi_epochs,
    detect_sss_epochs,
    gap_estimate,
    h_rejection_ratio,
    idleness_ratio,
    lag1_autocorrelation,
    regenerative_gap,
    time_average_gap,
)

REF2 = reference_params(2)


def _log(rows):
    keys = ("time", "idle", "U", "P", "W", "cum_idle", "cum_h_rej", "cum_l_acc", "index")
    return {k: np.array([r[i] for r in rows]) for i, k in enumerate(keys)}


@pytest.fixture(scope="module")
def pfi50():
    return run(reference_params(50), PFI(), 400.0, 11)


class TestRegenerative:
    def test_single_epoch_formula(self):
        ep = EpochTable.from_records([EpochRecord(0.0, 2.0, 3.0, 1, 0, 5)])
        est = regenerative_gap(ep, REF2, "pfi", min_epochs=1)
        assert est.point == pytest.approx(2.0) and est.method is Method.REGENERATIVE

    def test_no_idleness_no_rejections(self):
        ep = EpochTable.from_records([EpochRecord(i, i + 1.0, 0.0, 0, 2, 4) for i in range(40)])
        assert regenerative_gap(ep, REF2).point == 0.0
        assert regenerative_gap(ep, REF2).std_error == 0.0

    def test_too_few(self):
        ep = EpochTable.from_records([EpochRecord(0.0, 1.0, 1.0, 0, 0, 1)] * 5)
        with pytest.raises(TooFewEpochs):
            regenerative_gap(ep, REF2)

    def test_ratio_error_against_bootstrap(self):
        rng = np.random.default_rng(0)
        n = 400
        dur = rng.exponential(1.0, n)
        idle = dur * rng.gamma(4.0, 0.5, n)
        ep = EpochTable(np.cumsum(dur) - dur, np.cumsum(dur), idle, np.zeros(n, int), np.zeros(n, int),
                        np.ones(n, int))
        est = idleness_ratio(ep)
        boot = [idle[i].sum() / dur[i].sum() for i in rng.integers(0, n, (2000, n))]
        assert est.std_error == pytest.approx(np.std(boot), rel=0.15)

    def test_rejection_ratio(self):
        ep = EpochTable.from_records([EpochRecord(2.0 * i, 2.0 * i + 2.0, 0.0, i % 2, 0, 1) for i in range(40)])
        assert h_rejection_ratio(ep).point == pytest.approx(0.25)


class TestDetection:
    def test_no_l_acceptance_means_no_pfi_epochs(self):
        params = reference_params(25)
        traj = run(params, Threshold(params.N), 100.0, 0)
        assert len(detect_pfi_epochs(traj.action_log)) == 0

    def test_hand_built_pfi_boundary(self):
        # Row 1 and row 4 meet Y=1, not U, P, W; the rest miss one condition each.
        log = _log([
            (0.5, 1, False, True, False, 0.0, 0, 1, 0),
            (1.0, 1, False, True, True, 1.0, 0, 1, 3),
            (1.5, 1, True, True, True, 2.0, 1, 1, 5),
            (2.0, 1, False, False, True, 3.0, 1, 2, 8),
            (3.0, 1, False, True, True, 5.5, 2, 3, 12),
        ])
        ep = detect_pfi_epochs(log)
        assert len(ep) == 1
        assert (ep.start[0], ep.end[0]) == (1.0, 3.0)
        assert (ep.idleness_integral[0], ep.H_rejections[0], ep.L_acceptances[0], ep.action_count[0]) == (4.5, 2, 2, 9)

    def test_sss_never_full(self):
        log = _log([(float(i), 3, False, False, False, float(i), 0, 0, i) for i in range(10)])
        assert len(detect_sss_epochs(log)) == 0

    def test_sss_alternating(self):
        rows = [(float(i), i % 2, False, False, False, float(i), 0, 0, i) for i in range(11)]
        ep = detect_sss_epochs(_log(rows))
        assert len(ep) + 1 == sum(r[1] == 0 for r in rows)

    @pytest.mark.parametrize("which", ["pfi", "sss"])
    def test_epochs_partition_the_covered_span(self, which, pfi50):
        traj = pfi50 if which == "pfi" else run(reference_params(25), SSS(0.3), 200.0, 2)
        ep = (detect_pfi_epochs if which == "pfi" else detect_sss_epochs)(traj.action_log)
        assert len(ep) > 30
        np.testing.assert_allclose(ep.start[1:], ep.end[:-1])
        assert np.all(ep.duration > 0)
        cols = traj.action_log.arrays()
        first = np.searchsorted(cols["time"], ep.start[0])
        last = np.searchsorted(cols["time"], ep.end[-1])
        assert ep.idleness_integral.sum() == pytest.approx(cols["cum_idle"][last] - cols["cum_idle"][first])
        assert ep.H_rejections.sum() == cols["cum_h_rej"][last] - cols["cum_h_rej"][first]
        assert ep.action_count.sum() == cols["index"][last] - cols["index"][first]

    def test_full_and_candidate_logs_agree(self):
        params = reference_params(25)
        a = run(params, PFI(), 80.0, 5)
        b = run(params, PFI(), 80.0, 5, full_log=True)
        for detect in (detect_pfi_epochs, detect_sss_epochs):
            ea, eb = detect(a.action_log), detect(b.action_log)
            np.testing.assert_array_equal(ea.start, eb.start)
            np.testing.assert_array_equal(ea.idleness_integral, eb.idleness_integral)

    def test_concat(self):
        t = EpochTable.from_records([EpochRecord(0.0, 1.0, 1.0, 0, 0, 1)])
        assert len(EpochTable.concat([t, t, t])) == 3


class TestBatchMeans:
    def test_constant_series(self):
        est = batch_means(np.full(200, 3.5), 20)
        assert est.point == 3.5 and est.std_error == 0.0

    def test_needs_ten_batches(self):
        with pytest.raises(ValueError):
            batch_means(np.ones(100), 9)

    def test_too_short(self):
        with pytest.raises(ValueError):
            batch_means(np.ones(15), 20)

    def test_coverage_of_iid_gaussian(self):
        rng = np.random.default_rng(1)
        hits = 0
        for _ in range(1000):
            lo, hi = batch_means(rng.normal(2.0, 1.0, 400), 20).ci(0.95)
            hits += lo <= 2.0 <= hi
        # t with 19 d.o.f. makes a normal-quantile interval cover a little under 95%.
        assert 0.92 <= hits / 1000 <= 0.97

    def test_doubling_horizon_shrinks_error(self):
        rng = np.random.default_rng(2)
        short = np.mean([batch_means(rng.normal(size=400), 20).std_error for _ in range(400)])
        long = np.mean([batch_means(rng.normal(size=800), 20).std_error for _ in range(400)])
        assert short / long == pytest.approx(math.sqrt(2), rel=0.05)

    def test_warmup_dropped(self):
        x = np.r_[np.full(100, 50.0), np.ones(1000)]
        assert batch_means(x, 10, warmup_fraction=0.1).point == pytest.approx(1.0, abs=1e-12)


class TestCrossChecks:
    def test_pfi_regenerative_agrees_with_time_average(self, pfi50):
        regen = regenerative_gap(detect_pfi_epochs(pfi50.action_log), pfi50.params)
        ta = time_average_gap(pfi50, 20, 0.05)
        assert abs(regen.point - ta.point) <= 3 * math.hypot(regen.std_error, ta.std_error)
        lo1, hi1 = regen.ci()
        lo2, hi2 = ta.ci()
        assert lo1 <= hi2 and lo2 <= hi1

    def test_pfi_epoch_durations_not_autocorrelated(self, pfi50):
        d = detect_pfi_epochs(pfi50.action_log).duration
        r = lag1_autocorrelation(d)
        assert abs(r) < stats.norm.ppf(0.995) / math.sqrt(d.size)

    def test_fallback_to_batch_means(self):
        traj = run(reference_params(10), Threshold(10), 50.0, 0)  # no L admitted, so no PFI epoch
        with pytest.warns(RuntimeWarning):
            est, _ = gap_estimate(traj, "pfi")
        assert est.method is Method.BATCH_MEANS

    def test_lag1_of_constant(self):
        assert lag1_autocorrelation(np.ones(10)) == 0.0


class TestDecomposition:
    def test_pfi_at_fluid(self):
        p = reference_params(25)
        rep = decomposition_report(p, pfi=GapEstimate(0.0, 0.1, 50, Method.REGENERATIVE))
        assert rep.C_vol_upper == 0.0 and rep.R_PFI_hat == fluid_reward(p)

    def test_all_equal(self):
        p = reference_params(25)
        est = GapEstimate(1.0, 0.0, 50, Method.REGENERATIVE)
        rep = decomposition_report(p, pfi=est, sss=est, on=(3, fluid_reward(p) - 1.0))
        assert rep.C_uncertainty_hat == pytest.approx(0.0, abs=1e-12)
        assert rep.C_short_upper == pytest.approx(0.0, abs=1e-12)
        assert rep.violations() == []

    def test_violation_flagged(self):
        p = reference_params(25)
        rep = decomposition_report(p, pfi=GapEstimate(-1.0, 0.1, 50, Method.REGENERATIVE))
        assert "C_vol_upper" in rep.violations()

    def test_needs_an_estimate(self):
        with pytest.raises(ValueError):
            decomposition_report(reference_params(25))

    def test_reference_run_fills_every_field(self):
        p = reference_params(100)
        pfi = regenerative_gap(detect_pfi_epochs(run(p, PFI(), 150.0, 0).action_log), p)
        sss_traj = run(p, SSS(sss_window(p, c_override=20)), 150.0, 0)
        sss, _ = gap_estimate(sss_traj, "sss", min_epochs=10)
        rep = decomposition_report(p, pfi=pfi, sss=sss)
        assert rep.theta_star == best_threshold(p)[0]
        for name in ("R_PFI_hat", "R_PFI_se", "R_SSS_hat", "R_SSS_se", "C_vol_upper", "C_vol_se",
                     "C_uncertainty_hat", "C_uncertainty_se", "C_short_upper", "C_short_se"):
            assert math.isfinite(getattr(rep, name)), name


@given(st.lists(st.floats(0.0, 10.0), min_size=30, max_size=60), st.floats(0.1, 5.0))
@settings(max_examples=40, deadline=None)
def test_gap_scales_with_idle(idles, scale):
    n = len(idles)
    ep = EpochTable(np.arange(n, dtype=float), np.arange(n) + 1.0, np.array(idles), np.zeros(n, int),
                    np.zeros(n, int), np.ones(n, int))
    ep2 = EpochTable(ep.start, ep.end, ep.idleness_integral * scale, ep.H_rejections, ep.L_acceptances,
                     ep.action_count)
    assert regenerative_gap(ep2, REF2).point == pytest.approx(scale * regenerative_gap(ep, REF2).point,
                                                              abs=1e-9)
