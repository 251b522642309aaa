"""Second-order oscillators with drag: how good is the leading-order return map?

The synchronized orbit crosses position 0 at velocity nu_beta, the fixed
point of a scalar return map.  The measured derivative of the Poincare map is
compared with the leading term [[c I, 0], [0, 0]], c = 1 - 2 delta / (beta nu_beta).
The gap shrinks with beta, roughly like c / beta.
"""
import numpy as np

from ecrflow.flow import IntegratorConfig
from ecrflow.oscillators import Sync2Params, sync2_expected_DP, sync2_find_orbit
from ecrflow.poincare import poincare_derivative

cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)
print(f"{'beta':>6} {'nu_beta':>10} {'c':>8} {'|E|':>10} {'beta |E| / c':>13}")
for beta in (5.0, 10.0, 20.0, 40.0):
    p = Sync2Params(d=2, alpha=1.0, beta=beta, delta=0.5, Delta=0.05)
    o = sync2_find_orbit(p, cfg)
    pd = poincare_derivative(o.model, o.orbit, o.section, cfg)
    lead = sync2_expected_DP(p, o.nu_beta)
    err = max(np.linalg.norm(M - lead, 2) for M in pd.matrices.values())
    c = lead[0, 0]
    print(f"{beta:6g} {o.nu_beta:10.6f} {c:8.4f} {err:10.4g} {beta * err / c:13.4f}")
