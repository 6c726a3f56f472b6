"""derband: closed-loop load aggregation of binary DERs under deadband
control, with an AC power-flow backend, ergodic diagnostics, and set-valued
checkers for the piecewise-smooth closed-loop maps."""

from .agents import (
    AgentKind,
    AgentParams,
    EnsembleState,
    commitment_probability,
    ensemble_output,
    make_ensemble,
    sample_commitments,
)
from .caseio import (
    Branch,
    Bus,
    BusKind,
    CaseData,
    Generator,
    ValidationReport,
    builtin_case30,
    case30_text,
    case_to_text,
    parse_case,
    validate_case,
)
from .config import ExperimentConfig, load_config, parse_config
from .control import (
    ControllerKind,
    ControllerState,
    FilterState,
    controller_step,
    deadband_phi,
    error,
    filter_step,
    make_controller,
)
from .ergodics import (
    EmpiricalDistribution,
    MixingReport,
    fairness_gap,
    long_run_average,
    mixing_sweep,
    mixing_time,
    running_average,
    wasserstein2_sq,
)
from .filippov import (
    MeasureSpec,
    PiecewiseMap,
    SetValue,
    check_average_contraction,
    check_matching_condition,
    check_measure_preservation,
    convexify,
    enumerate_solutions,
    probe_incremental_iss,
)
from .loop import (
    RunSet,
    SimConfig,
    Trajectory,
    run_closed_loop,
    run_ensemble_experiment,
    subseed,
)
from .powerflow import (
    AdmittanceMatrix,
    PfOptions,
    PfSolution,
    apply_commitment,
    branch_losses,
    build_admittance,
    gauss_seidel_power_flow,
    solve_power_flow,
    total_losses,
)

__version__ = "0.1.0"
