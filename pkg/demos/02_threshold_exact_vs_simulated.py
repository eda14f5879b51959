"""
Trunk reservation: exact chain against simulation
=================================================

A threshold policy admits an L job only while more than ``theta`` servers
are idle.  Its busy-server count is a birth-death chain, so the long-run
reward has a closed form.  Here the simulator is checked against it.
"""

import numpy as np

from lossnet import Threshold, reference_params, run
from lossnet.analytic import best_threshold, fluid_reward, threshold_rewards
from lossnet.estimators import batch_means

params = reference_params(10)
exact = threshold_rewards(params)  # one entry per theta = 0..N
print("exact reward by theta:", np.round(exact, 4))
theta_star, r_star = best_threshold(params)
print(f"best theta = {theta_star}, reward {r_star:.4f}, fluid bound {fluid_reward(params):.4f}")

for theta in (0, theta_star, 6):
    traj = run(params, Threshold(theta), 2000.0, seed=theta)
    est = batch_means(traj.slab_reward_rate, 20, 0.05)
    lo, hi = est.ci()
    print(f"theta={theta}: simulated {est.point:.4f} [{lo:.4f}, {hi:.4f}]  exact {exact[theta]:.4f}")
