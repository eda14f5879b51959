"""
Promise of future idleness
==========================

PFI admits an L job only if, were every later L job rejected, the idle
count would climb to ``floor(sqrt(N))`` before dropping to 1.  The race is
run on the real future of the sample path.  Below, the race frequency is
compared with the birth-death hitting probability, then PFI is simulated and
its fluid gap estimated over regeneration epochs.
"""

from lossnet import PFI, reference_params, run
from lossnet.analytic import best_threshold, fluid_reward, race_probability
from lossnet.estimators import detect_pfi_epochs, idleness_ratio, regenerative_gap, time_average_gap
from lossnet.lookahead import RaceVerdict, fresh_counterfactual, race_to_levels
from lossnet.samplepath import SamplePath

params = reference_params(50)
m = params.sqrt_level
for y in (2, 4, 6):
    n = 4000
    up = sum(race_to_levels(fresh_counterfactual(params, y, SamplePath(s)), 1, m).verdict
             is RaceVerdict.HIT_UPPER for s in range(n))
    print(f"start {y}: reaches {m} first in {up / n:.3f} of futures, chain says {race_probability(params, y, 1, m):.3f}")

traj = run(params, PFI(), 300.0, seed=1)
epochs = detect_pfi_epochs(traj.action_log)
gap = regenerative_gap(epochs, params)
ta = time_average_gap(traj)
print(f"{len(epochs)} epochs, mean length {epochs.duration.mean():.3f} h")
print(f"gap over epochs {gap.point:.3f} +- {gap.std_error:.3f}; time average {ta.point:.3f} +- {ta.std_error:.3f}")
print(f"idle server-hours per hour inside epochs: {idleness_ratio(epochs).point:.3f}")
print(f"H rejections: {traj.rejected[0]}")
theta, r_on = best_threshold(params)
print(f"best threshold gap: {fluid_reward(params) - r_on:.3f} (theta={theta})")
