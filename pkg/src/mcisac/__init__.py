"""Robust transmit precoding for multi-cell sensing-and-communication downlinks."""

from .scenario import (
    ArrayGeometry,
    CellTopology,
    ChannelSet,
    InterferenceCaps,
    Scenario,
    ScenarioError,
    dump_scenario,
    generate_channels,
    load_scenario,
    preset_names,
    steering,
    target_response,
)
from .sensing_crb import (
    ClutterCovariance,
    CrbDiag,
    FisherInformation,
    SingularFimError,
    clutter_covariance_cbf,
    crb_diag,
    fim,
)
from .robust_constraints import (
    QuadraticBounds,
    SlpStack,
    ci_residuals,
    slp_inter_leakage_residual,
    slp_stack,
    worst_case_interference,
    worst_case_quadratic_bounds,
)
from .conic_solver import (
    Cone,
    ConeSolution,
    ConicProgram,
    SolverSettings,
    dump_program,
    hermitian_embed,
    kkt_residuals,
    project_cone,
    solve,
)

__version__ = "0.1.0"
