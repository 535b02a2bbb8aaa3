"""Entropy of the glued-bridge candidate.

The relative entropy of the candidate splits into an endpoint term
``H(pi | R_01)`` and the average entropy of the uniform law against the
bridge midpoint. The second term is bounded on compact spaces, so the
candidate has finite entropy whenever the coupling does. Concentrating the
coupling on the diagonal drives the endpoint term up.
"""

from bslab.entropy import bridge_entropy_sup, candidate_entropy_bound
from bslab.geometry import circle
from bslab.sampling import TimeGrid, lazy_coupling
from bslab.solver import discretize_reference

g = circle(4.0)
N = 32
kernels = discretize_reference(g, (N,), TimeGrid.uniform(8))
print(f"circle(4), {N} cells")
print("   eps    endpoint   bridges   total (continuum)   total (8-step chain)")
for eps in (1.0, 0.5, 0.1, 0.01):
    pi = lazy_coupling(g, N, eps=eps)
    cont = candidate_entropy_bound(pi, resolution=64)
    disc = candidate_entropy_bound(pi, kernels=kernels)
    print(f"  {eps:5.2f}  {cont.terms['endpoint']:8.4f}  {cont.terms['conditional']:8.4f}"
          f"  {cont.total:12.4f}  {disc.total:18.4f}")

sup = bridge_entropy_sup(g, n_points=16, resolution=64)
print(f"\nlargest bridge midpoint entropy over a 16x16 grid of endpoints: {sup['sup']:.4f}")
