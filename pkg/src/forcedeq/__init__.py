"""Forced-equilibrium search for quasi-periodically forced systems.

Decomposes orbits into forced and free spectral terms by windowed frequency
analysis and iteratively refines initial conditions until only the forced
oscillations remain.
"""

from .signals import (
    GridMismatchError,
    Signal,
    SignalFormatError,
    evaluate_phi,
    inner_product,
    read_signal,
    weighted_norm,
    window_weight,
    write_signal,
)
from .integrate import (
    IntegrationError,
    IntegratorOptions,
    NonFiniteStateError,
    OdeProblem,
    StepSizeUnderflowError,
    integrate_sampled,
    solve_dense,
)
from .naff import (
    Decomposition,
    DegenerateSignalError,
    IllConditionedError,
    NaffOptions,
    NoPeakError,
    SpectralTerm,
    decompose,
    locate_peak,
    project,
    reconstruct,
    sampled_window_transform,
    shift_reference,
    write_decomposition,
)
from .refine import (
    DivergenceError,
    ForcingBasis,
    InsufficientDataError,
    PairingError,
    RefineOptions,
    RefinementLog,
    TermClassification,
    classify,
    estimate_convergence_rate,
    forced_value_at_zero,
    free_value_at_zero,
    refine,
)
from .models import (
    DynamicalSystem,
    ModelConfigError,
    ResonanceError,
    forced_linear_oscillator,
    forced_prey_predator,
    user_system_from_config,
)

__version__ = "0.1.0"

__all__ = [
    "Decomposition",
    "DegenerateSignalError",
    "DivergenceError",
    "DynamicalSystem",
    "ForcingBasis",
    "GridMismatchError",
    "IllConditionedError",
    "InsufficientDataError",
    "IntegrationError",
    "IntegratorOptions",
    "ModelConfigError",
    "NaffOptions",
    "NoPeakError",
    "NonFiniteStateError",
    "OdeProblem",
    "PairingError",
    "RefineOptions",
    "RefinementLog",
    "ResonanceError",
    "Signal",
    "SignalFormatError",
    "SpectralTerm",
    "StepSizeUnderflowError",
    "TermClassification",
    "classify",
    "decompose",
    "estimate_convergence_rate",
    "evaluate_phi",
    "forced_linear_oscillator",
    "forced_prey_predator",
    "forced_value_at_zero",
    "free_value_at_zero",
    "inner_product",
    "integrate_sampled",
    "locate_peak",
    "project",
    "read_signal",
    "reconstruct",
    "refine",
    "sampled_window_transform",
    "shift_reference",
    "solve_dense",
    "user_system_from_config",
    "weighted_norm",
    "window_weight",
    "write_decomposition",
    "write_signal",
]
