"""gaplab: a numerical laboratory for p-Laplace field concentration in the
thin gap between two nearly touching insulators.

The package solves the conormal (insulated) p-Laplace problem in the
narrow region between two smooth boundary profiles, measures the gradient
blow-up as the separation shrinks, certifies explicit super/subsolution
barriers by dense sampling of their closed forms, and verifies the
coordinate-transform bounds used to flatten the gap.
"""

__version__ = "0.1.0"

from .geometry import (GapGeometry, Region, inner_normal, make_disk_geometry,
                       make_flat_geometry, make_quadratic_geometry,
                       validate_hypotheses)
from .transforms import NeckChart, PhiChart, verify_phi_bounds
from .solver import (DiscreteField, SolverConfig, assemble_energy,
                     gradient_field, linear_p2_solve, neumann_residual,
                     oscillation, solve)
from .barriers import (BarrierSpec, bernstein_eval, certify_sign,
                       comparison_fit, eval_barrier, q_weight)
from .experiments import (RateFit, RateTable, fit_rate, oscillation_decay_fit,
                          sweep_epsilon, theorem_targets)

__all__ = [
    "GapGeometry", "Region", "inner_normal", "make_disk_geometry",
    "make_flat_geometry", "make_quadratic_geometry", "validate_hypotheses",
    "NeckChart", "PhiChart", "verify_phi_bounds",
    "DiscreteField", "SolverConfig", "assemble_energy", "gradient_field",
    "linear_p2_solve", "neumann_residual", "oscillation", "solve",
    "BarrierSpec", "bernstein_eval", "certify_sign", "comparison_fit",
    "eval_barrier", "q_weight",
    "RateFit", "RateTable", "fit_rate", "oscillation_decay_fit",
    "sweep_epsilon", "theorem_targets",
]
