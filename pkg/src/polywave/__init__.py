"""Quasi-periodic waves of cubic polyharmonic operators with periodic potentials.

The package resolves isolated spectral bands of ``(-Lap)^l + W`` on the
integer frequency lattice, feeds the band back through the cubic
nonlinearity ``W = V + sigma |psi|^2`` until self-consistent, and traces
isoenergetic surfaces in quasi-momentum space.  Everything is organized
around exact sparse Fourier arithmetic and stably-evaluated energy gaps, so
the tiny high-energy corrections survive the huge absolute energy scales.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    HoleBoundary,
    NewtonFailure,
    NonConvergence,
    NumericalFailure,
    PolywaveError,
    ResonanceError,
)
from .lattice import (
    ModelContext,
    PeriodicFunction,
    abs_squared,
    cosine_potential,
    decompose,
    from_json_dict,
    momentum,
    multiply,
    star_norm,
    to_json_dict,
    truncate_support,
    zero_mean_shift,
)
from .nonres import (
    Exponents,
    NonResonanceReport,
    SphereSampleStats,
    check_quasimomentum,
    contour_center,
    contour_radius,
    energy_gaps,
    exponents,
    k1_threshold,
    require_nonresonant,
    sample_nonresonant,
)
from .bloch import (
    BlochEigenpair,
    ContourSpec,
    DenseWindowSeries,
    GradientCheck,
    dense_window_series,
    diagonalize_oracle,
    eigenvalue_gradient,
    eigenvalue_ladder,
    first_order_column,
    op_norm_1,
    periodic_eigenfunction,
    second_order_eigenvalue_shift,
    series_eigenpair,
)
from .fixedpoint import (
    ApplyMapResult,
    ContractionReport,
    FixedPointTrace,
    Solution,
    apply_map,
    contraction_ratio,
    contraction_report,
    effective_perturbation,
    iterate,
    residual,
)
from .galerkin import RefinementComparison, compare, newton_solve
from .iso import (
    GradientSample,
    IsoSurfaceSample,
    SurfaceScan,
    h_gradient,
    kappa_solve,
    reference_radius,
    sample_surface,
)
from .config import RunConfig, parse_config

__all__ = [name for name in dir() if not name.startswith("_")]
