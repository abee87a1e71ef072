"""Two-time-scale control of an interior-PM synchronous generator on a dc bus.

Fast output-regulation current loops, a slow receding-horizon voltage
controller whose steady state minimizes the stator current norm, a
closed-loop simulator (averaged or sine-PWM switched converter) and a CLI
with the two reference case studies.
"""

from ._accel import NUMBA_DISABLED, NUMBA_ENABLED
from .errors import (
    ConfigError,
    NonPositiveVoltage,
    PmsgctrlError,
    SegmentTooShort,
    SimulationDiverged,
    UncontrollableAxis,
    UnstableRequest,
    VoltageFloor,
)
from .machine import (
    BMW_I3,
    PRESETS,
    DcLinkParams,
    DutyCycles,
    MachineParams,
    OperatingPoint,
    PlantState,
    electrical_power,
    electrical_torque,
    get_preset,
    inverse_park,
    park_transform,
    plant_derivatives,
    rpm_to_electrical,
)
from .nmpc import (
    ControllerMemory,
    NmpcConfig,
    NmpcController,
    OcpSolution,
    ReducedState,
    build_and_solve_ocp,
    discretize_fe,
    nmpc_step,
    reduced_dynamics,
    run_reduced_loop,
)
from .optimal import (
    StaticProblem,
    StaticSolution,
    brute_force_oracle,
    constraint_set_membership,
    solve_static,
    voltage_ellipse_lhs,
)
from .regulator import (
    AxisModel,
    InnerLoopState,
    RegulatorDesign,
    control_step,
    decouple,
    observer_step,
    step_response,
    synthesize_axis,
)
from .simulate import (
    Scenario,
    Trace,
    case1,
    case2,
    compute_metrics,
    run_closed_loop,
    sine_pwm,
)

__version__ = "0.1.0"

__all__ = [
    "BMW_I3",
    "PRESETS",
    "AxisModel",
    "ConfigError",
    "ControllerMemory",
    "DcLinkParams",
    "DutyCycles",
    "InnerLoopState",
    "MachineParams",
    "NmpcConfig",
    "NmpcController",
    "NonPositiveVoltage",
    "NUMBA_DISABLED",
    "NUMBA_ENABLED",
    "OcpSolution",
    "OperatingPoint",
    "PlantState",
    "PmsgctrlError",
    "ReducedState",
    "RegulatorDesign",
    "Scenario",
    "SegmentTooShort",
    "SimulationDiverged",
    "StaticProblem",
    "StaticSolution",
    "Trace",
    "UncontrollableAxis",
    "UnstableRequest",
    "VoltageFloor",
    "brute_force_oracle",
    "build_and_solve_ocp",
    "case1",
    "case2",
    "compute_metrics",
    "constraint_set_membership",
    "control_step",
    "decouple",
    "discretize_fe",
    "electrical_power",
    "electrical_torque",
    "get_preset",
    "inverse_park",
    "nmpc_step",
    "observer_step",
    "park_transform",
    "plant_derivatives",
    "reduced_dynamics",
    "rpm_to_electrical",
    "run_closed_loop",
    "run_reduced_loop",
    "sine_pwm",
    "solve_static",
    "step_response",
    "synthesize_axis",
    "voltage_ellipse_lhs",
]
