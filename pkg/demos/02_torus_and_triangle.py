"""Candidates on a torus and on a reflection quotient.

On the unit torus the glued-bridge candidate keeps every marginal uniform
while its endpoints follow a lazy coupling. Folding the square torus of side
2 by its reflection group gives the isosceles right triangle; its heat
kernel is the orbit average of the torus kernel.
"""

import numpy as np

from bslab.geometry import quotient_heat_kernel, torus, triangle_quotient
from bslab.sampling import TimeGrid, build_candidate, lazy_coupling, marginal_histogram

g = torus(1.0, 1.0)
pi = lazy_coupling(g, (8, 8), eps=0.1)
e = build_candidate(g, pi, 40_000, TimeGrid.uniform(10), seed=2)
print("torus: largest deviation of a cell mass from uniform (64 cells)")
for t in (0.0, 0.3, 0.5, 0.8, 1.0):
    m = marginal_histogram(e, t, (8, 8)).masses
    print(f"  t={t:.1f}  {np.abs(m * 64 - 1).max():.3f}")
print(f"  (one-cell sampling noise is about {np.sqrt(64 / 40_000):.3f})")
step = np.linalg.norm(((e.at(1.0) - e.at(0.0) + 0.5) % 1.0) - 0.5, axis=1)
print(f"median endpoint displacement {np.median(step):.3f} (lazy coupling)\n")

q = triangle_quotient(1.0)
print(f"triangle quotient: group order {q.order}, volume {q.volume}")
x, y = np.array([0.2, 0.1]), np.array([0.7, 0.4])
for t in (0.01, 0.1, 1.0):
    print(f"  p_t(x, y) at t={t:<4}  {float(quotient_heat_kernel(q, t, x, y)):.6f}")
print("  (tends to 1 against normalised volume)")

# folding sends any torus point into the fundamental triangle
pts = np.random.default_rng(0).uniform(0, 2, (10_000, 2))
print(f"folded points inside the triangle: {q.in_fundamental_domain(q.fold(pts)).mean():.0%}")
