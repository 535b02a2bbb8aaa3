"""Entropy-minimising path measures on flat spaces and their reflection quotients."""

from .geometry import (FlatGeometry, QuotientMap, box, box_quotient, circle, heat_kernel,
                       interval, quotient_heat_kernel, torus, triangle_quotient)
from .measures import Coupling, GridMeasure, VelocityField
from .sampling import (PathEnsemble, TimeGrid, build_candidate, build_gaussian_candidate,
                       lazy_coupling, sample_bridge, sample_reflected_bm, twisted_coupling)
from .solver import DiscreteBSProblem, incompressible_problem, sample_paths, solve_ipfp
from .entropy import candidate_entropy_bound, kl_divergence, path_measure_entropy
from .hjb import ForcingSpec, fourier_forcing, solve_hopf_cole

__all__ = [
    "FlatGeometry", "QuotientMap", "box", "box_quotient", "circle", "heat_kernel", "interval",
    "quotient_heat_kernel", "torus", "triangle_quotient",
    "Coupling", "GridMeasure", "VelocityField",
    "PathEnsemble", "TimeGrid", "build_candidate", "build_gaussian_candidate", "lazy_coupling",
    "sample_bridge", "sample_reflected_bm", "twisted_coupling",
    "DiscreteBSProblem", "incompressible_problem", "sample_paths", "solve_ipfp",
    "candidate_entropy_bound", "kl_divergence", "path_measure_entropy",
    "ForcingSpec", "fourier_forcing", "solve_hopf_cole",
]
