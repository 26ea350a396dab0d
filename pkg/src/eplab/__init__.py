"""Numerical laboratory for exceptional points in a two-level open system.

Layout:
  core    exact 2x2 Pauli-vector algebra, gauge fixing, symmetry normal form
  synth   parametric scattering model and synthetic spectrum generation
  fit     two-resonance model fits of measured or synthetic spectra
  epscan  parameter-plane scans, EP location, curve tracing, braids
  cli     the `eplab` command line front end
"""

from .core import (
    EPS_CROSS,
    EPS_PT,
    BasisTransform,
    EffHamiltonian,
    EigenPair,
    PTNormalForm,
    PTReport,
    Radicand,
    TransformKind,
    defectiveness,
    eigenvalues,
    extract_tau,
    from_matrix,
    from_pauli,
    gauge_fix,
    is_ep,
    pt_commutator_norm,
    pt_eigenvector_alignment,
    pt_report,
    radicand,
    to_pt_form,
    width_offset,
)
from .synth import (
    CSV_HEADER,
    CouplingSet,
    NoiseSpec,
    Spectrum,
    SyntheticFamily,
    effective_hamiltonian,
    family_at,
    frequency_grid,
    load_family,
    read_spectrum,
    smatrix_at,
    synth_spectrum,
)
from .fit import (
    FitConfig,
    FitResult,
    fit_spectrum,
    seed_initializer,
)
from .epscan import (
    BraidTrace,
    CurveTrace,
    EPLocation,
    ParamGrid,
    Permutation,
    ScanResult,
    SpectrumDirectory,
    braid,
    braid_loop,
    locate_ep,
    scan,
    trace_pt_curve,
)
from .errors import (
    DataError,
    DegenerateGaugeError,
    DegenerateRotationError,
    EPOutsideWindowError,
    EplabError,
    InsufficientSpanError,
    InvalidArgumentError,
    NoEPFoundError,
    NonConvergenceError,
    NotGaugeFixedError,
    NotOnPTCurveError,
    OutOfBoundsError,
    PoleOnGridError,
    RefineLoopError,
    ScanQualityError,
    SingularRatioError,
    UnresolvableDoubletError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "EPS_CROSS",
    "EPS_PT",
    "BasisTransform",
    "EffHamiltonian",
    "EigenPair",
    "PTNormalForm",
    "PTReport",
    "Radicand",
    "TransformKind",
    "defectiveness",
    "eigenvalues",
    "extract_tau",
    "from_matrix",
    "from_pauli",
    "gauge_fix",
    "is_ep",
    "pt_commutator_norm",
    "pt_eigenvector_alignment",
    "pt_report",
    "radicand",
    "to_pt_form",
    "width_offset",
    "CSV_HEADER",
    "CouplingSet",
    "NoiseSpec",
    "Spectrum",
    "SyntheticFamily",
    "effective_hamiltonian",
    "family_at",
    "frequency_grid",
    "load_family",
    "read_spectrum",
    "smatrix_at",
    "synth_spectrum",
    "FitConfig",
    "FitResult",
    "fit_spectrum",
    "seed_initializer",
    "BraidTrace",
    "CurveTrace",
    "EPLocation",
    "ParamGrid",
    "Permutation",
    "ScanResult",
    "SpectrumDirectory",
    "braid",
    "braid_loop",
    "locate_ep",
    "scan",
    "trace_pt_curve",
    "EplabError",
    "InvalidArgumentError",
    "DegenerateGaugeError",
    "NotGaugeFixedError",
    "SingularRatioError",
    "NotOnPTCurveError",
    "DegenerateRotationError",
    "OutOfBoundsError",
    "PoleOnGridError",
    "UnresolvableDoubletError",
    "InsufficientSpanError",
    "NonConvergenceError",
    "ScanQualityError",
    "EPOutsideWindowError",
    "NoEPFoundError",
    "RefineLoopError",
    "UsageError",
    "DataError",
]
