"""
The online gap grows like log N
===============================

For each N the best trunk-reservation reward is found exactly over all
thresholds.  Its distance to the fluid bound is then fitted against ln N.
"""

from lossnet import reference_params
from lossnet.cli import exact_threshold_sweep, fit_log_slope

rows = exact_threshold_sweep(reference_params(16), [2 ** k for k in range(4, 15)])
for r in rows:
    print(f"N={r['N']:>6}  theta*={r['theta_star']:>3}  gap={r['gap']:.4f}")
fit = fit_log_slope([(r["N"], r["gap"]) for r in rows])
print(f"gap ~ {fit.intercept:.3f} + {fit.slope:.3f} ln N   (R2 = {fit.r2:.4f})")
