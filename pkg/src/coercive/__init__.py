"""Exact tree calculus and coming-down-from-infinity bounds.

Submodules:
    trees          decorated rooted trees, grafting, coproduct, enumeration
    differentials  elementary differentials of a nonlinearity along trees
    exponents      the exponent tables behind the a-priori bounds
    paths          fractional noise samples, level-2 lifts, driver norms
    solvers        Young / branched-lift / finite-difference integrators
    verify         empirical bound checks and constant extraction
    cli            command-line entry points
"""

from coercive.trees import (
    ConformingSet,
    HForest,
    LabeledTree,
    MultiIndex,
    Rule,
    TreeSum,
    enumerate_conforming,
    parse_tree,
    serialize,
)
from coercive.exponents import (
    ExponentReport,
    GrowthDescriptor,
    alpha,
    classical_rho,
    rp_exponents,
    young_exponents,
)
from coercive.paths import (
    BranchedLift2,
    NormEstimate,
    SampledPath,
    besov_norm_field,
    holder_norm,
    lift_level2,
    sample_fbm,
)
from coercive.solvers import (
    GridField,
    ODESolution,
    mollified_noise,
    pde_fd_solve,
    rde_solve_davie,
    young_solve,
)
from coercive.verify import (
    BoundReport,
    BoundSpec,
    Forcing,
    empirical_constant,
    rhs_classical,
    rhs_rp,
    rhs_young,
    sweep_coming_down,
)

__all__ = [
    "ConformingSet",
    "HForest",
    "LabeledTree",
    "MultiIndex",
    "Rule",
    "TreeSum",
    "enumerate_conforming",
    "parse_tree",
    "serialize",
    "ExponentReport",
    "GrowthDescriptor",
    "alpha",
    "classical_rho",
    "rp_exponents",
    "young_exponents",
    "BranchedLift2",
    "NormEstimate",
    "SampledPath",
    "besov_norm_field",
    "holder_norm",
    "lift_level2",
    "sample_fbm",
    "GridField",
    "ODESolution",
    "mollified_noise",
    "pde_fd_solve",
    "rde_solve_davie",
    "young_solve",
    "BoundReport",
    "BoundSpec",
    "Forcing",
    "empirical_constant",
    "rhs_classical",
    "rhs_rp",
    "rhs_young",
    "sweep_coming_down",
]

__version__ = "0.1.0"
