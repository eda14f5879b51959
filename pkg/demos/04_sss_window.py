"""
How long should the sensor look?
================================

SSS admits an L job if the reject-all-L idle count stays above 1 for the
next ``w`` hours, with ``w = c log(N) / N``.  A very short window behaves
almost like a one-server reserve; a longer one approaches PFI.
"""

from lossnet import SSS, reference_params, run
from lossnet.analytic import sss_window, sufficient_window_constant
from lossnet.estimators import gap_estimate

print(f"sufficient constant at the reference rates: {sufficient_window_constant(0.7, 0.8, 1.0):.2f}")
params = reference_params(50)
for c in (0.001, 1.0, 5.0, 15.0, 50.0):
    w = sss_window(params, c_override=c)
    traj = run(params, SSS(w), 300.0, seed=3)
    gap, epochs = gap_estimate(traj, "sss", min_epochs=10)
    print(f"c={c:>6}: w={w:.4f} h  gap {gap.point:.3f} +- {gap.std_error:.3f}  ({gap.method.value}, {len(epochs)} epochs)")
