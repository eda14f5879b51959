"""
When do SSS and its accept-if-either twin part ways?
====================================================

Two policies share one sample path.  While they agree, their states
coincide; the first arrival on which they disagree is a decoupling.  At each
SSS epoch boundary (every server busy) the pair is re-synchronised.
"""

from lossnet import PFI, SSS, CompositeAE, coupled_run, reference_params
from lossnet.analytic import sss_window

for N in (25, 100):
    params = reference_params(N)
    sss = SSS(sss_window(params, c_override=15), label="sss:c=15")
    stats = coupled_run(params, sss, CompositeAE(sss, PFI()), 300.0, seed=0)
    print(f"N={N}: {stats.decoupled_epochs} of {stats.epochs} epochs decouple ({stats.frequency:.3f})")
