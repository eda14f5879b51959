import heapq
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossnet import PFI, SSS, Decision, JobClass, init, reference_params, run
from lossnet.analytic import race_probability, transient_absorption
from lossnet.lookahead import (
    CounterfactualState,
    RaceVerdict,
    TransitionCapExceeded,
    counterfactual_from_state,
    fresh_counterfactual,
    pfi_decide,
    race_to_levels,
    sss_decide,
    window_check,
    window_race,
)
from lossnet.samplepath import SamplePath, StreamId


def _cf(params, y, seed=0):
    return fresh_counterfactual(params, y, SamplePath(seed))


def _state_at(params, seed, idle, policy=None, max_steps=100_000):
    """Live state run forward under ``policy`` until the idle count equals ``idle``."""
    state = init(params, seed)
    policy = policy or PFI()
    for _ in range(max_steps):
        if state.Y == idle:
            return state
        state.step(policy)
    raise AssertionError(f"idle={idle} not reached")


class TestRaceTrivia:
    def test_start_on_upper(self, ref50):
        out = race_to_levels(_cf(ref50, 7), 1, 7)
        assert out.verdict is RaceVerdict.HIT_UPPER and out.hit_time == 0 and out.transitions == 0

    def test_start_on_lower(self, ref50):
        out = race_to_levels(_cf(ref50, 1), 1, 7)
        assert out.verdict is RaceVerdict.HIT_LOWER and out.hit_time == 0

    def test_bad_levels(self, ref50):
        with pytest.raises(ValueError):
            race_to_levels(_cf(ref50, 3), 4, 4)

    def test_cap_is_an_error(self, ref50):
        with pytest.raises(TransitionCapExceeded):
            race_to_levels(_cf(ref50, 3), 1, 7, max_transitions=1)

    def test_hit_time_matches_verdict_level(self, ref50):
        for seed in range(30):
            cf = _cf(ref50, 4, seed)
            out = race_to_levels(cf, 1, 7)
            assert out.hit_time > 0 and out.transitions > 0


class TestWindowTrivia:
    def test_level_one_fails(self, ref10):
        assert not window_check(_cf(ref10, 1), 0.1)

    def test_tiny_window_passes(self, ref10):
        assert window_check(_cf(ref10, 2), 1e-12)

    def test_window_must_be_positive(self, ref10):
        with pytest.raises(ValueError):
            window_check(_cf(ref10, 3), 0.0)

    def test_expired_reports_w(self, ref10):
        out = window_race(_cf(ref10, 8), 1e-9)
        assert out.verdict is RaceVerdict.WINDOW_EXPIRED and out.hit_time == 1e-9


def test_race_frequency_matches_birth_death_solve(ref50):
    # A smaller cousin of the acceptance check; 3000 fresh futures from y=4.
    n = 3000
    hits = sum(race_to_levels(_cf(ref50, 4, s), 1, 7).verdict is RaceVerdict.HIT_UPPER for s in range(n))
    p = race_probability(ref50, 4, 1, 7)
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_window_frequency_matches_uniformization(ref10):
    n = 3000
    ok = sum(window_check(_cf(ref10, 3, s), 0.2) for s in range(n))
    p = 1 - transient_absorption(ref10, 3, 0.2)
    assert abs(ok / n - p) < 3 * math.sqrt(p * (1 - p) / n)


@given(seed=st.integers(0, 2**32), y=st.integers(2, 5), drop=st.integers(0, 10**6))
@settings(max_examples=60, deadline=None)
def test_extra_idle_server_never_hurts_the_race(seed, y, drop):
    # Same future variates, one fewer job in service: the path from y+1
    # dominates the path from y, so HIT_UPPER from y implies it from y+1.
    params = reference_params(49)  # m = 7
    lo = fresh_counterfactual(params, y, SamplePath(seed))
    comps = list(lo.completions)
    comps.pop(drop % len(comps))
    heapq.heapify(comps)
    hi = CounterfactualState(params, lo.path, 0.0, y + 1, comps, lo.next_h, lo.ah_index, lo.sh_index)
    up_lo = race_to_levels(lo, 1, 7).verdict is RaceVerdict.HIT_UPPER
    up_hi = race_to_levels(hi, 1, 7).verdict is RaceVerdict.HIT_UPPER
    assert up_hi or not up_lo


class TestDecisions:
    def test_pfi_h_rule(self):
        params = reference_params(4)
        state = _state_at(params, 0, 0)
        assert pfi_decide(state, JobClass.H, params) is Decision.REJECT
        state = _state_at(params, 0, 4)
        assert pfi_decide(state, JobClass.H, params) is Decision.ACCEPT

    def test_pfi_l_at_sqrt_level_accepts(self):
        params = reference_params(25)
        state = _state_at(params, 1, 5)
        assert pfi_decide(state, JobClass.L, params) is Decision.ACCEPT

    def test_pfi_l_at_one_rejects(self):
        params = reference_params(25)
        state = _state_at(params, 1, 1)
        assert pfi_decide(state, JobClass.L, params) is Decision.REJECT

    def test_pfi_small_n_never_admits_l(self):
        traj = run(reference_params(3), PFI(), 50.0, 0)
        assert traj.accepted[JobClass.L] == 0

    def test_sss_l_at_one_rejects(self, ref10):
        state = _state_at(ref10, 2, 1, SSS(0.1))
        assert sss_decide(state, JobClass.L, ref10, 0.1) is Decision.REJECT

    def test_sss_window_shorter_than_next_event_accepts(self, ref10):
        state = _state_at(ref10, 2, 3, SSS(0.1))
        gap = state.next_event_time() - state.now
        assert sss_decide(state, JobClass.L, ref10, gap / 2) is Decision.ACCEPT

    def test_sss_accept_implies_no_touch_within_window(self, ref10):
        w = 0.1
        for seed in range(20):
            state = _state_at(ref10, seed, 3, SSS(w))
            cf = counterfactual_from_state(state)
            race = race_to_levels(cf, 1, ref10.N)
            if sss_decide(state, JobClass.L, ref10, w) is Decision.ACCEPT and race.verdict is RaceVerdict.HIT_LOWER:
                assert race.hit_time > w


class _Redundant:
    """Calls every oracle a few extra times before deferring to ``inner``."""

    def __init__(self, inner):
        self.inner = inner
        self.w = getattr(inner, "w", None)

    def decide(self, job_class, state):
        for _ in range(2):
            pfi_decide(state, JobClass.L, state.params)
            sss_decide(state, JobClass.L, state.params, 0.3)
        return self.inner.decide(job_class, state)

    def __str__(self):
        return str(self.inner)


@pytest.mark.parametrize("policy", [PFI(), SSS(0.2)])
def test_oracles_are_pure(policy):
    params = reference_params(25)
    plain = run(params, policy, 20.0, 4, record_events=True)
    noisy = run(params, _Redundant(policy), 20.0, 4, record_events=True)
    assert plain.events == noisy.events


class _PerturbedPath(SamplePath):
    def __init__(self, seed, bump):
        super().__init__(seed)
        self.bump = bump

    def value_at(self, stream, index):
        v = super().value_at(stream, index)
        return v * 3.0 + 1.0 if (stream, index) in self.bump else v


@pytest.mark.parametrize("seed", range(8))
def test_sss_reads_nothing_realised_after_the_window(seed):
    params = reference_params(25)
    w = 0.15
    state = _state_at(params, seed, 4, SSS(w))
    probe = []
    cf = counterfactual_from_state(state, probe)
    verdict = window_check(cf, w)
    horizon = state.now + w
    late = {(s, j) for s, j, t in probe if t > horizon}
    # Every variate the rollout read is realised inside the window, or its
    # only use was to learn that it lands beyond it: pushing such variates
    # further out must not change the answer.
    perturbed = CounterfactualState(params, _PerturbedPath(state.seed, late), cf.start_time, cf.idle,
                                    list(cf.completions), cf.next_h, cf.ah_index, cf.sh_index)
    assert window_check(perturbed, w) == verdict
    assert all(j < state.cursor[s] + 200 for s, j, _ in probe)


def test_sss_reads_are_bounded_by_window_depth():
    params = reference_params(25)
    state = _state_at(params, 0, 5, SSS(0.05))
    probe = []
    window_check(counterfactual_from_state(state, probe), 0.05)
    h_reads = [j for s, j, _ in probe if s == StreamId.AH]
    # Expected number of H arrivals in 0.05 h is 0.875; far fewer than 30 reads.
    assert len(h_reads) < 30
