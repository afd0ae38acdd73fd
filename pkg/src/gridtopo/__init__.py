"""Distribution-grid topology estimation from bus voltage time series.

The pipeline differences per-bus voltage measurements, regresses every
bus on the others with a (group) lasso penalty selected by BIC, and
merges the per-bus neighbor claims into an undirected edge set with the
AND, OR, or AND-OR rule. A linearized grid simulator generates
ground-truthed panels for validation, and a CLI wraps simulation,
estimation, evaluation, and diagnostics.
"""

from .connectivity import (
    EstimationConfig,
    PrescreenResult,
    build_complex_design,
    build_magnitude_design,
    estimate_neighbors_complex,
    estimate_neighbors_magnitude,
    gaussian_mutual_information,
    prescreen_topk,
)
from .metrics import EvaluationReport, edge_error_rate, node_error
from .model import (
    Branch,
    DeltaPanel,
    EdgeSet,
    MeasurementPanel,
    NeighborSet,
    NetworkModel,
    build_admittance,
    difference_panel,
)
from .simulator import (
    ScenarioConfig,
    add_loops,
    add_meter_noise,
    builtin_network,
    conditional_correlation,
    diagnostic_autocorr,
    diagnostic_mi_matrix,
    run_scenario,
    solve_voltages,
    synth_injections,
)
from .solver import (
    BicTrace,
    CoefficientEstimate,
    GroupedDesign,
    fit_group_lasso,
    fit_path,
    group_soft_threshold,
    lambda_grid,
    lambda_max,
    select_lambda,
)
from .topology import (
    JointDesign,
    TopologyEstimate,
    build_joint_design,
    combine_and,
    combine_and_or,
    combine_or,
    estimate_topology,
    estimate_topology_joint,
)

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "BicTrace",
    "CoefficientEstimate",
    "DeltaPanel",
    "EdgeSet",
    "EstimationConfig",
    "EvaluationReport",
    "GroupedDesign",
    "JointDesign",
    "MeasurementPanel",
    "NeighborSet",
    "NetworkModel",
    "PrescreenResult",
    "ScenarioConfig",
    "TopologyEstimate",
    "add_loops",
    "add_meter_noise",
    "build_admittance",
    "build_complex_design",
    "build_joint_design",
    "build_magnitude_design",
    "builtin_network",
    "combine_and",
    "combine_and_or",
    "combine_or",
    "conditional_correlation",
    "diagnostic_autocorr",
    "diagnostic_mi_matrix",
    "difference_panel",
    "edge_error_rate",
    "estimate_neighbors_complex",
    "estimate_neighbors_magnitude",
    "estimate_topology",
    "estimate_topology_joint",
    "fit_group_lasso",
    "fit_path",
    "gaussian_mutual_information",
    "group_soft_threshold",
    "lambda_grid",
    "lambda_max",
    "node_error",
    "prescreen_topk",
    "run_scenario",
    "select_lambda",
    "solve_voltages",
    "synth_injections",
]
