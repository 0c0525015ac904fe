"""Stroboscopic dynamics of periodically kicked classical spin lattices."""

__version__ = "0.1.0"

from .lattice import (
    NEAREST_NEIGHBOR,
    InteractionKernel,
    LatticeSpec,
    build_kernel,
    kac_normalization,
    torus_distance,
)
from .state import (
    Purpose,
    RngStream,
    SpinConfig,
    init_polarized_noisy,
    perturb_copy,
    site_coordinates,
    write_spin_csv,
)
from .dynamics import (
    DriveParams,
    Evolver,
    FieldWorkspace,
    SamplingSchedule,
    effective_field,
    effective_field_direct,
    effective_field_fft,
    evolve,
    evolve_pair,
    stroboscopic_step,
)
from .observables import (
    D_INFINITY,
    TimeSeries,
    TimescalePair,
    decorrelator,
    decorrelator_plateau,
    energy_first_half,
    energy_period_averaged,
    extract_timescales,
    magnetization,
    moving_average,
    spectrum,
    subharmonic_order_parameter,
)
from .experiments import (
    FrequencyScanResult,
    SweepAxis,
    SweepPlan,
    SweepResult,
    fit_log_slope,
    frequency_scan,
    run_point,
    run_sweep,
)

__all__ = [
    "NEAREST_NEIGHBOR",
    "D_INFINITY",
    "InteractionKernel",
    "LatticeSpec",
    "build_kernel",
    "kac_normalization",
    "torus_distance",
    "Purpose",
    "RngStream",
    "SpinConfig",
    "init_polarized_noisy",
    "perturb_copy",
    "site_coordinates",
    "write_spin_csv",
    "DriveParams",
    "Evolver",
    "FieldWorkspace",
    "SamplingSchedule",
    "effective_field",
    "effective_field_direct",
    "effective_field_fft",
    "evolve",
    "evolve_pair",
    "stroboscopic_step",
    "TimeSeries",
    "TimescalePair",
    "decorrelator",
    "decorrelator_plateau",
    "energy_first_half",
    "energy_period_averaged",
    "extract_timescales",
    "magnetization",
    "moving_average",
    "spectrum",
    "subharmonic_order_parameter",
    "FrequencyScanResult",
    "SweepAxis",
    "SweepPlan",
    "SweepResult",
    "fit_log_slope",
    "frequency_scan",
    "run_point",
    "run_sweep",
]
