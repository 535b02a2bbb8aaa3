"""Glued Brownian bridges on the real line and plane.

Two standard-normal-quarter laws are coupled with correlation ``rho``, a
midpoint ``z`` is drawn from the same law and bridges ``x -> z -> y`` are
glued at ``t = 1/2``. Every time marginal stays ``N(0, I/4)``, so the
candidate is incompressible for that law, and the bridge entropy has the
closed form ``|x + y|^2 / 2``.
"""

import numpy as np

from bslab.entropy import gaussian_bridge_diagnostics, gaussian_candidate_entropy
from bslab.sampling import (TimeGrid, build_gaussian_candidate, gaussian_coupling,
                            gaussian_marginal_variance)

grid = TimeGrid.uniform(8)
for rho in (0.0, 0.8):
    pi = gaussian_coupling(2, rho=rho)
    e = build_gaussian_candidate(2, pi, 50_000, grid, seed=1)
    print(f"rho = {rho}")
    print("   t    MC var   formula")
    for t in grid.times:
        mc = np.trace(np.cov(e.at(t).T)) / 2
        print(f"  {t:4.3f}  {mc:7.4f}  {gaussian_marginal_variance(min(t, 1 - t)):7.4f}")
    rep = gaussian_candidate_entropy(2, rho)
    print(f"  entropy: endpoint {rep.terms['endpoint']:.4f} + bridges "
          f"{rep.terms['conditional']:.4f} = {rep.total:.4f}\n")

# which closed form matches the bridge entropy?
d = gaussian_bridge_diagnostics([0.3, -0.2], [0.5, 0.1])
print("bridge entropy at x=(0.3,-0.2), y=(0.5,0.1)")
for k, v in d.items():
    print(f"  {k:13s} {v:.10f}")
