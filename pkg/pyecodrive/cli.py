"""
Command line front end of pyecodrive

Subcommands: solve, tune-lambda, pareto, lookahead, oracle-check and
complexity. Every run writes its artifacts and a manifest.json into the
output directory (option --output or the PYECODRIVE_OUTPUT_DIR variable).

Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
3 solver infeasibility. Failures print a json line with 'error' and 'tag'
to stderr.

"""

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from pyecodrive.core.constants import (
    DEFAULT_FILE_NAMES,
    DEFAULT_STEP,
    FIXTURE_ROUTES,
    PARETO_GAMMAS,
    PYECODRIVE_PATH,
    SOLVERS,
    V_FLOOR,
)
from pyecodrive.core.dpsystem import NoFeasiblePathError, SimulationDivergenceError
from pyecodrive.core.fileio import ReadError, load_params, load_perturbations, load_route
from pyecodrive.core.route import RouteError, resample
from pyecodrive.tools import evaluation
from pyecodrive.tools.dpsolver import DPConfig
from pyecodrive.tools.ecms import EcmsConfig
from pyecodrive.tools.edutil import dump_json, resolve_output_dir
from pyecodrive.tools.lambdatuning import BracketError, ShootingConfig, shoot
from pyecodrive.tools.lookahead import LookaheadConfig
from pyecodrive.tools.ptmath import BatteryPowerLimitError, InfeasibleControlError
from pyecodrive.tools.runmetadata import RunMetaData
from pyecodrive.tools.spmath import ProblemConfig
from pyecodrive.tools.vehicle import ParameterError
from pyecodrive.version import __version__

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


@dataclass
class RunConfig:
    """Resolved settings of one command line run"""

    command: str
    route: str = "mixed"
    params: Optional[str] = None
    dd: float = DEFAULT_STEP
    solver: str = "benchmark"
    gamma: float = 0.65
    gammas: tuple = PARETO_GAMMAS
    lambda_mode: str = "shoot"
    lambda0: Optional[float] = None
    lam_lo: float = ShootingConfig.lam_lo
    lam_hi: float = ShootingConfig.lam_hi
    lam_tol: float = ShootingConfig.tol
    max_iter: int = ShootingConfig.max_iter
    n_h: int = 20
    n_lambda: int = 10
    spread: float = 0.5
    stride: int = 1
    perturbations: Optional[str] = None
    n_e: int = DPConfig.n_e
    n_xi: int = DPConfig.n_xi
    n_xi_ecms: int = 11
    n_t_eng: int = DPConfig.n_t_eng
    n_t_bsg: int = DPConfig.n_t_bsg
    n_t_pt: int = DPConfig.n_t_pt
    mode: str = DPConfig.mode
    replay: str = "bellman"
    threads: int = 1
    seeds: int = 20
    seed: int = 0
    table_format: str = "txt"
    plot: bool = False
    output: Optional[str] = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError("Unknown solver {}".format(self.solver))
        if not 0 <= self.gamma <= 1 or any(not 0 <= g <= 1 for g in self.gammas):
            raise ValueError("gamma must lie in [0, 1]")
        if self.lambda_mode == "fixed" and self.lambda0 is None:
            raise ValueError("A fixed lambda0 requires --lambda0")
        if self.threads < 1:
            raise ValueError("--threads must be positive")

    @classmethod
    def from_args(cls, args):
        known = {fld.name for fld in dataclasses.fields(cls)}
        content = {key: val for key, val in vars(args).items() if key in known}
        if content.get("lambda0") is not None:
            content["lambda_mode"] = "fixed"
        if content.get("command") == "lookahead":
            content["solver"] = "lookahead"
            content.setdefault("lambda_mode", "grid")
        return cls(**content)

    def route_path(self):
        if self.route in FIXTURE_ROUTES:
            return PYECODRIVE_PATH[self.route]
        return Path(self.route)

    def settings(self):
        """RunSettings of the evaluation harness"""
        perts = tuple(load_perturbations(self.perturbations)) if self.perturbations else ()
        la_cfg = LookaheadConfig(
            n_h=self.n_h, n_lambda=self.n_lambda, stride=self.stride, threads=self.threads
        )
        return evaluation.RunSettings(
            params=load_params(self.params),
            cfg=ProblemConfig(),
            dpcfg=DPConfig.benchmark(
                n_e=self.n_e,
                n_xi=self.n_xi,
                n_t_eng=self.n_t_eng,
                n_t_bsg=self.n_t_bsg,
                mode=self.mode,
                threads=self.threads,
            ),
            dpecms_cfg=DPConfig.dpecms(
                n_e=self.n_e,
                n_xi=self.n_xi_ecms,
                n_t_pt=self.n_t_pt,
                mode=self.mode,
                threads=self.threads,
            ),
            ecms_cfg=EcmsConfig(),
            shooting_cfg=ShootingConfig(
                lam_lo=self.lam_lo, lam_hi=self.lam_hi, tol=self.lam_tol, max_iter=self.max_iter
            ),
            la_cfg=la_cfg,
            la_spread=self.spread,
            lambda0=self.lambda0,
            perturbations=perts,
            replay=self.replay,
        )

    def to_dict(self):
        return dataclasses.asdict(self)


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--route",
        default="mixed",
        help="route csv file or fixture name ({})".format(", ".join(FIXTURE_ROUTES)),
    )
    common.add_argument("--params", default=None, help="vehicle parameter json file")
    common.add_argument("--dd", type=float, default=DEFAULT_STEP, help="step size in m")
    common.add_argument("--output", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--n-e", dest="n_e", type=int, default=DPConfig.n_e)
    common.add_argument("--n-xi", dest="n_xi", type=int, default=DPConfig.n_xi)
    common.add_argument("--n-xi-ecms", dest="n_xi_ecms", type=int, default=11)
    common.add_argument("--n-t-eng", dest="n_t_eng", type=int, default=DPConfig.n_t_eng)
    common.add_argument("--n-t-bsg", dest="n_t_bsg", type=int, default=DPConfig.n_t_bsg)
    common.add_argument("--n-t-pt", dest="n_t_pt", type=int, default=DPConfig.n_t_pt)
    common.add_argument("--mode", choices=["interp", "nearest"], default=DPConfig.mode)
    common.add_argument(
        "--replay",
        choices=["bellman", "policy"],
        default="bellman",
        help="replay by re-minimisation on the value tables or by the stored controls",
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    return common


def _add_shooting(parser):
    parser.add_argument("--lam-lo", dest="lam_lo", type=float, default=ShootingConfig.lam_lo)
    parser.add_argument("--lam-hi", dest="lam_hi", type=float, default=ShootingConfig.lam_hi)
    parser.add_argument("--lam-tol", dest="lam_tol", type=float, default=ShootingConfig.tol)
    parser.add_argument(
        "--max-iter", dest="max_iter", type=int, default=ShootingConfig.max_iter
    )


def _gamma_list(text):
    try:
        return tuple(float(val) for val in text.split(",") if val.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("gammas must be a comma separated list of numbers")


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="pyecodrive",
        description="Eco-driving of a mild-hybrid vehicle by spatial dynamic programming",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve_p = sub.add_parser("solve", parents=[common], help="solve and replay one case")
    solve_p.add_argument("--solver", choices=SOLVERS, default="benchmark")
    solve_p.add_argument("--gamma", type=float, default=0.65)
    solve_p.add_argument("--lambda0", type=float, default=None)
    solve_p.add_argument("--nh", dest="n_h", type=int, default=20)
    solve_p.add_argument("--ni", dest="n_lambda", type=int, default=10)
    solve_p.add_argument("--format", dest="table_format", choices=["txt", "parquet"], default="txt")
    solve_p.add_argument("--plot", action="store_true")
    _add_shooting(solve_p)

    tune_p = sub.add_parser("tune-lambda", parents=[common], help="shooting on lambda0")
    tune_p.add_argument("--gamma", type=float, default=0.65)
    _add_shooting(tune_p)

    pareto_p = sub.add_parser("pareto", parents=[common], help="sweep over gamma")
    pareto_p.add_argument("--solver", choices=SOLVERS, default="benchmark")
    pareto_p.add_argument("--gammas", type=_gamma_list, default=PARETO_GAMMAS)
    pareto_p.add_argument("--nh", dest="n_h", type=int, default=20)
    pareto_p.add_argument("--ni", dest="n_lambda", type=int, default=10)
    pareto_p.add_argument("--plot", action="store_true")
    _add_shooting(pareto_p)

    la_p = sub.add_parser("lookahead", parents=[common], help="receding-horizon run")
    la_p.add_argument("--gamma", type=float, default=0.65)
    la_p.add_argument("--nh", dest="n_h", type=int, default=20)
    la_p.add_argument("--ni", dest="n_lambda", type=int, default=10)
    la_p.add_argument("--spread", type=float, default=0.5)
    la_p.add_argument("--stride", type=int, default=1)
    la_p.add_argument("--lambda0", type=float, default=None)
    la_p.add_argument("--format", dest="table_format", choices=["txt", "parquet"], default="txt")
    la_p.add_argument("--plot", action="store_true")
    la_p.add_argument("--perturbations", default=None, help="perturbation csv file")
    _add_shooting(la_p)

    oracle_p = sub.add_parser("oracle-check", parents=[common], help="DP against brute force")
    oracle_p.add_argument("--seeds", type=int, default=20)
    oracle_p.add_argument("--seed", type=int, default=0, help="first seed")

    comp_p = sub.add_parser("complexity", parents=[common], help="evaluation counts")
    comp_p.add_argument("--gamma", type=float, default=0.65)
    comp_p.add_argument("--lambda0", type=float, default=None)
    return parser


def _configure_logging(args):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s")


def _load_route(run, meta):
    raw = load_route(run.route_path(), v_floor=V_FLOOR, meta=meta)
    return resample(raw, dd=run.dd)


def _save_frame(frame, outdir, key):
    path = outdir / DEFAULT_FILE_NAMES[key]
    frame.to_csv(path, index=False, float_format="%.12g")
    logging.info("Saved {}".format(path))
    return path


def cmd_solve(run, route, outdir, meta):
    settings = run.settings()
    traj, report, details = evaluation.run_solver(route, run.gamma, run.solver, settings)
    ext = "csv" if run.table_format == "txt" else "parquet"
    traj_file = traj.save(
        outdir / "{}.{}".format(Path(DEFAULT_FILE_NAMES["trajectory"]).stem, ext),
        table_format=run.table_format,
    )
    _save_frame(evaluation.reports_to_frame([report]), outdir, "report")
    if "shooting" in details:
        dump_json(details["shooting"], outdir / DEFAULT_FILE_NAMES["shooting"])
    if run.plot:
        traj.plot(route=route, file_name=outdir / "trajectory.png")
    meta._add_fileio("Trajectory saved to {}".format(traj_file))
    logging.info(
        "{} gamma = {}: fuel {:.5f} kg, time {:.1f} s, cost {:.4f}".format(
            run.solver, run.gamma, report.fuel_kg, report.time_s, report.cost
        )
    )
    return report.to_dict()


def cmd_tune_lambda(run, route, outdir, meta):
    settings = run.settings()
    result = shoot(
        route,
        run.gamma,
        settings.shooting_cfg,
        settings.params,
        settings.cfg,
        settings.dpecms_cfg,
        settings.ecms_cfg,
        lookup=settings.replay,
    )
    content = result.to_dict()
    dump_json(content, outdir / DEFAULT_FILE_NAMES["shooting"])
    return content


def cmd_pareto(run, route, outdir, meta):
    settings = run.settings()
    reports = evaluation.pareto_sweep(
        route, run.gammas, run.solver, settings, threads=run.threads
    )
    _save_frame(evaluation.reports_to_frame(reports), outdir, "pareto")
    if run.plot:
        evaluation.plot_pareto(reports, file_name=outdir / "pareto.png")
    return dict(solved=sum(rep.error is None for rep in reports), total=len(reports))


def cmd_oracle_check(run, route, outdir, meta):
    frame = evaluation.oracle_suite(range(run.seed, run.seed + run.seeds))
    _save_frame(frame, outdir, "oracle")
    failed = frame[~(frame.equal & frame.replay_ok)]
    if len(failed):
        raise evaluation.EvaluationError(
            "DP and oracle differ for seed(s) {}".format(", ".join(map(str, failed.seed)))
        )
    return dict(problems=len(frame), matched=len(frame))


def cmd_complexity(run, route, outdir, meta):
    settings = run.settings()
    report = evaluation.measure_complexity(route, run.gamma, settings, run.lambda0)
    content = report.to_dict()
    dump_json(content, outdir / DEFAULT_FILE_NAMES["complexity"])
    return content


COMMANDS = {
    "solve": cmd_solve,
    "tune-lambda": cmd_tune_lambda,
    "pareto": cmd_pareto,
    "lookahead": cmd_solve,
    "oracle-check": cmd_oracle_check,
    "complexity": cmd_complexity,
}


def _fail(code, err, tag):
    sys.stderr.write(json.dumps({"error": str(err), "tag": tag}) + "\n")
    return code


def main(argv=None):
    """Run the command line interface, returns the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_USAGE
    _configure_logging(args)

    try:
        run = RunConfig.from_args(args)
        outdir = resolve_output_dir(run.output)
        meta = RunMetaData(
            location=outdir,
            description="pyecodrive {} run".format(run.command),
            name=Path(str(run.route)).stem,
            solver=run.solver if run.command != "oracle-check" else "benchmark",
        )
        meta.set_config(run.to_dict())
        route = None
        if run.command != "oracle-check":
            route = _load_route(run, meta)
            meta.note("Route with {} grid points (dd = {} m)".format(route.n_points, run.dd))
    except (ValueError, ReadError, RouteError, ParameterError) as err:
        return _fail(EXIT_USAGE, err, "config")

    try:
        result = COMMANDS[run.command](run, route, outdir, meta)
    except (ValueError, ReadError) as err:
        if isinstance(err, (InfeasibleControlError, BatteryPowerLimitError)):
            return _fail(EXIT_INFEASIBLE, err, getattr(err, "bound", "battery-power"))
        if isinstance(err, BracketError):
            return _fail(EXIT_FAILURE, err, "bracket")
        return _fail(EXIT_USAGE, err, "config")
    except (NoFeasiblePathError, SimulationDivergenceError) as err:
        return _fail(EXIT_INFEASIBLE, err, err.tag)
    except Exception as err:
        logging.exception("pyecodrive {} failed".format(run.command))
        return _fail(EXIT_FAILURE, err, type(err).__name__)
    finally:
        meta.save()

    meta.note("Result: {}".format(json.dumps(result, default=str)))
    meta.save()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
