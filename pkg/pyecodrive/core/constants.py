"""
Various constant values

"""

import os
from pathlib import Path

import numpy as np

# path information of the package
__ROOT = Path(os.path.dirname(__file__))
__MODELS = Path(__ROOT / "../route_models").absolute()
PYECODRIVE_PATH = {
    "route_models": __MODELS,
    "vehicle": __MODELS / "default_vehicle.json",
    "flat": __MODELS / "flat_2km.csv",
    "hilly": __MODELS / "hilly_5km.csv",
    "mixed": __MODELS / "mixed_7km.csv",
}

FIXTURE_ROUTES = ("flat", "hilly", "mixed")

DEFAULT_FILE_NAMES = {
    "manifest": "manifest.json",
    "trajectory": "trajectory.csv",
    "report": "report.csv",
    "pareto": "pareto.csv",
    "increments": "increments.csv",
    "shooting": "shooting.json",
    "complexity": "complexity.json",
    "oracle": "oracle.csv",
    "value_table": "value_table.csv",
}

STORAGE_FORMAT = {
    "txt": ["txt", "tsv", "csv"],
    "parquet": ["parquet", "par", "parq"],
}

# column layouts of the csv interfaces
ROUTE_COLUMNS = ["d_m", "v_min_mps", "v_max_mps", "grade_rad", "stop"]
TRAJECTORY_COLUMNS = [
    "k",
    "d_m",
    "v_mps",
    "soc",
    "T_eng_Nm",
    "T_bsg_Nm",
    "T_pt_Nm",
    "fuel_kg",
    "t_s",
    "cost",
]
PARETO_COLUMNS = ["gamma", "fuel_kg", "time_s", "cost", "solver", "soc_neutral"]
PERTURBATION_COLUMNS = ["d_m", "v_max_mps", "activate_at_stage"]

SOLVERS = ("benchmark", "full-route-dpecms", "lookahead")

# the +inf flag marking infeasible cells in value tables
INFEASIBLE = np.inf

# route discretisation
DEFAULT_STEP = 10.0
V_FLOOR = 1.0

# gamma schedule of the published Pareto comparison
PARETO_GAMMAS = (0.3, 0.4, 0.5, 0.65, 0.7, 0.75, 0.8, 0.82)

OUTPUT_DIR_ENV = "PYECODRIVE_OUTPUT_DIR"
