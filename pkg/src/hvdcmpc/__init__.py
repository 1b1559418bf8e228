"""Per-unit VSC-HVDC station simulation with predictive current control."""

__version__ = "0.1.0"

from .params import (
    BaseValues,
    ConfigError,
    DampingParams,
    DcLineParams,
    MpcBounds,
    MpcSettings,
    MpcSoftening,
    PiSettings,
    PllParams,
    Scenario,
    ScenarioEvent,
    StationParams,
    SystemConfig,
    dc_line_to_pu,
    default_config,
    effective_grid_impedance,
    load_config,
    save_config,
)
from .plant import PlantCoeffs, PlantError, PlantInput, PlantState
from .linear import (
    DiscreteModel,
    LinearModel,
    OperatingPoint,
    OperatingPointError,
    discretize_zoh,
    eigenvalues,
    linearize,
    reduce_model,
    solve_operating_point,
    transfer_function,
)
from .harness import (
    SimulationAbort,
    StepMetrics,
    TimeSeries,
    simulate_p2p,
    simulate_single,
    step_metrics,
    weight_sweep,
)
