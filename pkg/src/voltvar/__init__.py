"""Radial feeder power flow and PV inverter reactive-power dispatch.

Model a single-branch distribution circuit with distributed PV, solve its
exact and linearized branch power flow, and compute reactive setpoints for
the inverters: an all-idle baseline, a communication-free local rule, and
the loss-minimizing convex QP, all under inverter capacity limits and a
voltage regulation band.
"""

__version__ = "0.1.0"

from .circuit import (
    Circuit,
    LinkImpedance,
    NodeLoad,
    ParameterError,
    ScenarioParams,
    capacity_bound,
    generate_circuit,
    validate,
)
from .dispatch import (
    GRID_STEPS,
    QP_TOL,
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    STATUS_OPTIMAL,
    DispatchSolution,
    InfeasibleError,
    KktReport,
    QpProblem,
    SavingsUndefinedError,
    brute_force_oracle,
    build_qp,
    kkt_check,
    lin_objective,
    local_dispatch,
    optimal_dispatch,
    savings,
    zero_dispatch,
)
from .experiments import (
    ALL_POLICIES,
    ProfileCase,
    SweepResult,
    SweepSpec,
    run_sweep,
    summarize,
    voltage_profile_case,
    write_manifest,
)
from .powerflow import (
    MODEL_AC,
    MODEL_LIN,
    POLICY_CUSTOM,
    POLICY_LOCAL,
    POLICY_OPTIMAL,
    POLICY_ZERO,
    ConvergenceError,
    Dispatch,
    FlowState,
    Residuals,
    VoltageBandReport,
    VoltageCollapseError,
    losses,
    net_loads,
    residuals,
    solve_ac,
    solve_lin,
    voltage_band_ok,
    write_flow_csv,
)
