"""Levy area corrections for time-reversible deterministic fast-slow systems.

Green-Kubo estimation of the diffusion covariance Sigma and Levy area
matrix E, their block structure under time-reversal symmetry, constructive
realization of arbitrary E0 blocks, full-rank factorizations, and the
corrected homogenised SDE with statistical law comparison.
"""

from .config import ExperimentConfig, PRESET_NAMES, load_config, preset
from .errors import (
    BlowUpError,
    ConfigError,
    LevyAreaError,
    NearIdentityBoundError,
    RankCollapseError,
    RankDeficientError,
    StructureError,
    SymmetryError,
)
from .greenkubo import (
    Correlogram,
    GreenKuboEstimate,
    choose_t_max,
    correlogram,
    estimate_e0,
    green_kubo,
    integrate_estimates,
)
from .homogenise import (
    EnsembleLaw,
    FastSlowRun,
    LawComparison,
    SlowField,
    compare_laws,
    drift_correction,
    fast_slow_ensemble,
    section6_slow_field,
    simulate_fast_slow,
    simulate_sde,
    sparse_b_field,
)
from .observables import (
    InvariantBasis,
    Observable,
    Poly,
    build_invariant_basis,
    construct_v,
    coordinates,
    decompose,
    default_generators,
    realize_target,
    scale_transform,
    symmetrize,
    telescoping_residual,
)
from .symmetry import (
    BlockForm,
    EigenSplit,
    FactorResult,
    Involution,
    block_decompose,
    eigen_split,
    find_full_rank_t,
    full_rank_factor,
)
from .systems import (
    FastSystem,
    OUSurrogate,
    Trajectory,
    integrate,
    lorenz63,
    nose_hoover,
    nose_hoover_pair,
    ou_closed_form,
    reversibility_residual,
    sample_measure,
    simulate_ou,
)

__version__ = "0.1.0"
