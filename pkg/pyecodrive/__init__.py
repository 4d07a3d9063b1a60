"""
pyecodrive - spatial dynamic programming eco-driving for mild-hybrid vehicles
=============================================================================

Velocity and battery state-of-charge trajectories of a 48V mild-hybrid
vehicle are co-optimized along a known route. Three solvers are provided:

- benchmark: full-route DP over engine and BSG torque
- full-route DP-ECMS: DP over the powertrain torque, the engine/BSG split
  given by an ECMS minimisation with a tuned equivalence factor offset
- look-ahead: receding-horizon DP-ECMS over a grid of equivalence factors
  with the full-route DP-ECMS value function as terminal cost

Routes are read from csv files (see route_models for examples), vehicle
parameters from a flat json file.

Misc
----

Standard abbreviation for that module: ed
Dependencies:

- numpy
- scipy
- pandas
- matplotlib
- pyarrow (only for parquet storage of trajectories)

:license: BSD 3-Clause License

"""

from pyecodrive.core.constants import PYECODRIVE_PATH
from pyecodrive.core.dpsystem import (
    Grid2D,
    NoFeasiblePathError,
    PolicyTable,
    SimulationDivergenceError,
    Trajectory,
    ValueTable,
)
from pyecodrive.core.fileio import *
from pyecodrive.core.route import (
    Perturbation,
    RawRoute,
    Route,
    RouteError,
    RoutePoint,
    apply_perturbations,
    resample,
)
from pyecodrive.tools.dpsolver import (
    DPConfig,
    backward_solve_benchmark,
    backward_solve_dpecms,
    forward_simulate,
)
from pyecodrive.tools.ecms import EcmsConfig, optimal_split, soc_penalty
from pyecodrive.tools.edutil import EVAL_COUNTER
from pyecodrive.tools.evaluation import (
    CostReport,
    RunSettings,
    brute_force_oracle,
    complexity_estimate,
    cost_increment,
    cumulative_cost,
    increments_table,
    measure_complexity,
    pareto_sweep,
    random_tiny_problem,
    run_solver,
)
from pyecodrive.tools.lambdatuning import (
    BracketError,
    ShootingConfig,
    ShootingWarning,
    shoot,
)
from pyecodrive.tools.lookahead import (
    LookaheadConfig,
    horizon_solve,
    receding_horizon_run,
    select_lambda,
)
from pyecodrive.tools.ptmath import (
    BatteryPowerLimitError,
    InfeasibleControlError,
    battery_step,
    bsg_electrical_power,
    driveline_force,
    engine_speed,
    fuel_rate,
    road_load,
    torque_limits,
)
from pyecodrive.tools.runmetadata import RunMetaData
from pyecodrive.tools.spmath import ProblemConfig, StateVector, stage_cost, transition
from pyecodrive.tools.vehicle import ParameterError, VehicleParams
from pyecodrive.version import __version__
