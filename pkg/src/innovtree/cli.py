"""Command-line front end.

Every subcommand reads one scenario file (TOML or JSON).  Outputs go to
``--out``, else ``$INNOVTREE_OUT``, else the scenario's ``outputs.dir``.

Exit codes: 0 success (possibly with warnings), 1 model or scaling failure,
2 I/O, parse or schema failure, 3 runtime simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import check_scaling, measure_fixation_time, total_variation_distance, tv_curve
from .deterministic import NearestNeighborLV, integrate
from .errors import GridMismatchError, ModelError, PreconditionError, ScenarioError, SimulationError
from .jump_processes import initial_tst, simulate_tss, simulate_tst
from .model import Configuration, validate_assumptions
from .scenario import Scenario, load_scenario
from .stochastic_sim import STREAM_VERSION, Trajectory, make_grid, run_ensemble, simulate

log = logging.getLogger("innovtree")

OUT_ENV = "INNOVTREE_OUT"

# top-level scenario keys each subcommand ignores
IRRELEVANT = {
    "validate": set(),
    "simulate": {"replicates", "ode", "jump"},
    "ensemble": {"ode", "jump"},
    "ode": {"seed", "replicates", "burn_in", "discovered", "jump"},
    "tss": {"replicates", "grid", "burn_in", "discovered", "ode", "initial", "horizon", "migration"},
    "tst": {"replicates", "grid", "burn_in", "discovered", "ode", "initial", "horizon", "migration"},
}


def fmt(x: float) -> str:
    return "%.17g" % x


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def csv_text(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def trajectory_csv(times, ids, values) -> str:
    return csv_text(["time", *ids], ([t, *row] for t, row in zip(times, values)))


def trajectory_json(times, ids, values, extra=None) -> str:
    obj = {"time": [float(t) for t in times], "traits": {i: [float(v) for v in values[:, k]] for k, i in enumerate(ids)}}
    if extra:
        obj.update(extra)
    return dump_json(obj)


def read_table(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "time":
        raise GridMismatchError(f"{path}: expected a CSV whose first column is 'time'")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise GridMismatchError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise GridMismatchError(f"{path}: ragged rows")
    return header, data


def read_trajectory(path: Path) -> Trajectory:
    """Load a trajectory CSV, using the mean columns of an ensemble CSV."""
    header, data = read_table(path)
    cols = header[1:]
    if cols and all(c.rsplit("_", 1)[-1] in ("mean", "var", "p05", "p95") for c in cols):
        keep = [k for k, c in enumerate(cols) if c.endswith("_mean")]
        ids = [cols[k][: -len("_mean")] for k in keep]
        values = data[:, [k + 1 for k in keep]]
    else:
        ids, values = cols, data[:, 1:]
    return Trajectory(ids, 0, 1.0, data[:, 0], values, {})


class Run:
    """Collects output paths and warnings for one subcommand invocation."""

    def __init__(self, command: str, scenario: Scenario, args):
        self.command = command
        self.scenario = scenario
        self.args = args
        self.outputs: list[str] = []
        self.warnings: list[str] = []
        self.events: dict[str, int] = {}
        self.started = time.perf_counter()
        self.out_dir = Path(args.out or os.environ.get(OUT_ENV) or scenario.data["outputs"]["dir"])
        ignored = sorted(scenario.present_keys & IRRELEVANT[command])
        for key in ignored:
            self.warn(f"scenario field '{key}' is not used by '{command}'")

    def warn(self, message: str) -> None:
        log.warning(message)
        self.warnings.append(message)

    def write(self, suffix: str, text: str) -> Path:
        path = self.out_dir / f"{self.scenario.name}_{suffix}"
        atomic_write(path, text)
        self.outputs.append(path.name)
        return path

    def assumption_warnings(self, rho: float) -> None:
        catalog, regime = self.scenario.catalog, self.scenario.regime
        report = validate_assumptions(catalog, regime)
        for c in report.failures + report.warnings:
            self.warn(f"assumption {c.name} not met: {c.detail}")
        for c in scaling_report(self.scenario, rho).failures:
            self.warn(f"scaling {c.name}: ratio {c.ratio:.3g} > {rho:g}")

    def summary(self, inputs: dict) -> Path:
        obj = {
            "command": self.command,
            "scenario": self.scenario.name,
            "digest": self.scenario.digest,
            "version": __version__,
            "stream_version": STREAM_VERSION,
            "inputs": inputs,
            "outputs": list(self.outputs),
            "events": self.events,
            "warnings": self.warnings,
            "wall_clock_s": round(time.perf_counter() - self.started, 6),
        }
        return self.write("summary.json", dump_json(obj))


def scaling_report(scenario: Scenario, rho: float):
    catalog = scenario.catalog
    return check_scaling(
        scenario.regime,
        rho,
        migration=bool(np.any(catalog.migration > 0)),
        mutation=bool(np.any(catalog.mutation_weight > 0)),
    )


def _grid(args, scenario: Scenario):
    if args.grid is None:
        return scenario.grid
    text = args.grid.strip()
    try:
        if "," in text:
            return [float(t) for t in text.split(",") if t.strip()]
        return int(text)
    except ValueError:
        raise ScenarioError(f"--grid must be a point count or comma-separated times, got {args.grid!r}") from None


def _horizon(args, scenario):
    return scenario.data["horizon"] if args.horizon is None else args.horizon


def _seed(args, scenario):
    return scenario.data["seed"] if args.seed is None else args.seed


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    run = Run("validate", scenario, args)
    assumptions = validate_assumptions(scenario.catalog, scenario.regime)
    scaling = scaling_report(scenario, args.margin)
    hard_scaling = [c for c in scaling.failures if c.ratio > 1.0]
    report = {
        "scenario": scenario.name,
        "digest": scenario.digest,
        "assumptions": assumptions.to_dict(),
        "scaling": scaling.to_dict(),
        "status": "fail" if assumptions.failures or hard_scaling else
        "pass_with_warnings" if assumptions.warnings or scaling.failures else "pass",
    }  # fmt: skip
    text = dump_json(report)
    sys.stdout.write(text)
    if args.out or os.environ.get(OUT_ENV):
        run.write("validate.json", text)
    for c in assumptions.warnings:
        log.warning("assumption %s not met: %s", c.name, c.detail)
    for c in scaling.failures:
        log.warning("scaling %s: ratio %.3g > %g", c.name, c.ratio, args.margin)
    return 1 if report["status"] == "fail" else 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    run = Run("simulate", scenario, args)
    run.assumption_warnings(args.margin)
    horizon, grid, seed = _horizon(args, scenario), _grid(args, scenario), _seed(args, scenario)
    traj = simulate(
        scenario.catalog,
        scenario.regime,
        scenario.initial,
        horizon,
        grid,
        seed,
        discovered=scenario.discovered(),
        burn_in=scenario.data["burn_in"],
        record_events=args.events,
    )
    ids = scenario.catalog.ids
    if args.format == "json":
        extra = {"mutations": [[t, ids[a], ids[b]] for t, a, b in traj.mutations]}
        run.write("trajectory.json", trajectory_json(traj.sample_times, ids, traj.states, extra))
    else:
        run.write("trajectory.csv", trajectory_csv(traj.sample_times, ids, traj.states))
    if args.events:
        rows = ([e.time, e.kind.name.lower(), ids[e.trait], ids[e.target]] for e in traj.events)
        run.write("events.csv", csv_text(["time", "kind", "from", "to"], rows))
    if traj.mutations:
        rows = ([t, ids[a], ids[b]] for t, a, b in traj.mutations)
        run.write("mutations.csv", csv_text(["time", "from", "to"], rows))
    if traj.absorbed:
        run.warn(f"population went extinct at t={traj.absorption_time:.6g}")
    run.events = traj.events_total
    run.summary({"seed": seed, "horizon": horizon, "grid": _grid_echo(grid), "events": bool(args.events)})
    return 0


def _grid_echo(grid):
    return grid if isinstance(grid, int) else [float(t) for t in grid]


def cmd_ensemble(args) -> int:
    scenario = load_scenario(args.scenario)
    run = Run("ensemble", scenario, args)
    run.assumption_warnings(args.margin)
    horizon, grid, seed = _horizon(args, scenario), _grid(args, scenario), _seed(args, scenario)
    reps = scenario.data["replicates"] if args.replicates is None else args.replicates
    stats = run_ensemble(
        scenario.catalog,
        scenario.regime,
        scenario.initial,
        horizon,
        grid,
        reps,
        seed,
        workers=args.workers,
        keep_trajectories=True,
        discovered=scenario.discovered(),
        burn_in=scenario.data["burn_in"],
    )
    ids = stats.trait_ids
    stat_names = ("mean", "var", "p05", "p95")
    arrays = [stats.mean, stats.var, stats.p05, stats.p95]
    header = ["time"] + [f"{i}_{s}" for i in ids for s in stat_names]
    rows = []
    for t_idx, t in enumerate(stats.sample_times):
        row = [t]
        for k in range(len(ids)):
            row.extend(a[t_idx, k] for a in arrays)
        rows.append(row)
    if args.format == "json":
        obj = {
            "time": [float(t) for t in stats.sample_times],
            "replicates": reps,
            "traits": {i: {s: [float(v) for v in a[:, k]] for s, a in zip(stat_names, arrays)} for k, i in enumerate(ids)},
        }
        run.write("ensemble.json", dump_json(obj))
    else:
        run.write("ensemble.csv", csv_text(header, rows))
    events: dict[str, int] = {}
    extinct = 0
    for tr in stats.trajectories:
        for k, v in tr.events_total.items():
            events[k] = events.get(k, 0) + v
        extinct += tr.absorbed
    if extinct:
        run.warn(f"{extinct} of {reps} replicates went extinct")
    run.events = events
    run.summary({"seed": seed, "replicates": reps, "horizon": horizon, "grid": _grid_echo(grid)})
    return 0


def cmd_ode(args) -> int:
    scenario = load_scenario(args.scenario)
    run = Run("ode", scenario, args)
    horizon, grid = _horizon(args, scenario), _grid(args, scenario)
    catalog = scenario.catalog
    system = NearestNeighborLV(catalog, scenario.regime, scenario.data["ode"]["include_migration"])
    times = make_grid(horizon, grid)
    y0 = scenario.initial.to_array(len(catalog))
    sol = integrate(system, y0, horizon, times)
    ids = catalog.ids
    if args.format == "json":
        run.write("ode.json", trajectory_json(sol.t, ids, sol.y))
    else:
        run.write("ode.csv", trajectory_csv(sol.t, ids, sol.y))
    run.events = {"rhs_evaluations": int(sol.nfev)}
    run.summary(
        {"horizon": horizon, "grid": _grid_echo(grid), "include_migration": scenario.data["ode"]["include_migration"]}
    )
    return 0


def _jump_inputs(args, scenario):
    horizon = scenario.data["jump"]["horizon"] if args.horizon is None else args.horizon
    start = scenario.catalog.index(scenario.data["jump"]["start"])
    return horizon, start, _seed(args, scenario)


def cmd_tss(args) -> int:
    scenario = load_scenario(args.scenario)
    run = Run("tss", scenario, args)
    catalog = scenario.catalog
    horizon, start, seed = _jump_inputs(args, scenario)
    path = simulate_tss(start, horizon, catalog, seed)
    ids = catalog.ids
    if args.format == "json":
        records = [{"time": t, "trait_id": ids[x], "mass": m} for t, (x, m) in zip(path.jump_times, path.states)]
        run.write("tss.json", dump_json({"absorbed": path.absorbed, "records": records}))
    else:
        rows = ([t, ids[x], m] for t, (x, m) in zip(path.jump_times, path.states))
        run.write("tss.csv", csv_text(["time", "trait_id", "mass"], rows))
    run.events = {"jumps": len(path.jump_times) - 1}
    run.summary({"seed": seed, "horizon": horizon, "start": ids[start], "time_unit": "1/(K*sigma)"})
    return 0


def cmd_tst(args) -> int:
    scenario = load_scenario(args.scenario)
    run = Run("tst", scenario, args)
    catalog = scenario.catalog
    horizon, start, seed = _jump_inputs(args, scenario)
    path = simulate_tst(initial_tst(start, catalog), horizon, catalog, seed)
    records = path.to_records(catalog)
    if args.format == "csv":
        rows = []
        for rec in records:
            for x, p, m in zip(rec["ordered_traits"], rec["presence"], rec["masses"]):
                rows.append([rec["time"], str(rec["generation"]), x, str(p), m])
        run.write("tst.csv", csv_text(["time", "generation", "trait_id", "present", "mass"], rows))
    else:
        obj = {
            "end_reason": path.end_reason,
            "sources": [catalog.ids[x] for x in path.sources],
            "records": records,
        }
        run.write("tst.json", dump_json(obj))
    if path.end_reason == "frozen":
        run.warn("no present trait can mutate; the tree is frozen")
    run.events = {"jumps": len(path.jump_times) - 1}
    run.summary({"seed": seed, "horizon": horizon, "start": catalog.ids[start], "time_unit": "1/(K*sigma)"})
    return 0


def _read_tst_records(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    records = obj["records"] if isinstance(obj, dict) and "records" in obj else obj
    if not isinstance(records, list) or not records:
        raise GridMismatchError(f"{path}: expected a non-empty list of configuration records")
    for rec in records:
        if not isinstance(rec, dict) or not {"ordered_traits", "presence", "masses"} <= set(rec):
            raise GridMismatchError(f"{path}: records need ordered_traits, presence and masses")
    return records


def cmd_compare(args) -> int:
    left_path, right_path = Path(args.stochastic), Path(args.reference)
    traj = read_trajectory(left_path)
    epsilon = args.epsilon
    if epsilon is None and args.scenario:
        epsilon = load_scenario(args.scenario).regime.epsilon
    result: dict = {
        "inputs": {
            "stochastic": left_path.name,
            "reference": right_path.name,
            "delta": args.delta,
            "epsilon": epsilon,
        }
    }
    if right_path.suffix.lower() == ".json":
        records = _read_tst_records(right_path)
        index = {x: k for k, x in enumerate(traj.trait_ids)}
        targets = []
        for rec in records:
            dens = {}
            for x, p, m in zip(rec["ordered_traits"], rec["presence"], rec["masses"]):
                if x not in index:
                    raise GridMismatchError(f"trait {x!r} from {right_path.name} is not a column of {left_path.name}")
                if p:
                    dens[index[x]] = float(m)
            target = Configuration(dens)
            tv = tv_curve(traj, target)
            hits = np.flatnonzero(tv <= args.delta)
            fix = measure_fixation_time(traj, target, args.delta, epsilon)
            targets.append(
                {
                    "generation": rec.get("generation"),
                    "configuration": {traj.trait_ids[k]: v for k, v in sorted(dens.items())},
                    "min_tv": float(tv.min()),
                    "first_hit_time": float(traj.sample_times[hits[0]]) if hits.size else None,
                    "terminal_tv": total_variation_distance(traj.at(len(traj.sample_times) - 1), target),
                    "fixation": fix.to_dict(),
                }
            )
        result["targets"] = targets
    else:
        ref = read_trajectory(right_path)
        if ref.trait_ids != traj.trait_ids:
            raise GridMismatchError(f"trait columns differ: {traj.trait_ids} vs {ref.trait_ids}")
        if ref.states.shape != traj.states.shape or not np.allclose(ref.sample_times, traj.sample_times, rtol=0, atol=1e-12):
            raise GridMismatchError("sample grids differ")
        diff = np.abs(traj.states - ref.states)
        result["sup_gap"] = float(diff.max()) if diff.size else 0.0
        result["per_trait_sup_gap"] = {x: float(diff[:, k].max()) for k, x in enumerate(traj.trait_ids)}
        result["terminal_gap"] = float(diff[-1].max())
    text = dump_json(result)
    sys.stdout.write(text)
    out = args.out or os.environ.get(OUT_ENV)
    if out:
        atomic_write(Path(out) / f"{left_path.stem}_vs_{right_path.stem}.json", text)
    return 0


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="innovtree", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, sim=False, fmt_default="csv"):
        p.add_argument("scenario", help="scenario file (.toml or .json)")
        p.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or the scenario's outputs.dir)")
        p.add_argument("--format", choices=("csv", "json"), default=fmt_default)
        p.add_argument("--margin", metavar="RHO", type=float, default=0.2, help="ratio bound for a << b checks")
        p.add_argument("--horizon", type=float)
        if sim:
            p.add_argument("--seed", type=int)
            p.add_argument("--grid", help="number of grid points or comma-separated times")

    p = sub.add_parser("validate", help="check modelling assumptions and timescale separation")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="one stochastic path")
    common(p, sim=True)
    p.add_argument("--events", action="store_true", help="also write the event log")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="replicate statistics")
    common(p, sim=True)
    p.add_argument("--replicates", type=_positive_int)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("ode", help="deterministic limit")
    common(p)
    p.add_argument("--grid", help="number of grid points or comma-separated times")
    p.set_defaults(func=cmd_ode)

    for name, func, default in (("tss", cmd_tss, "csv"), ("tst", cmd_tst, "json")):
        p = sub.add_parser(name, help=f"{name.upper()} jump chain on the mutation timescale")
        common(p, fmt_default=default)
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="compare a stochastic CSV with an ODE CSV or a TST JSON")
    p.add_argument("stochastic", help="trajectory or ensemble CSV")
    p.add_argument("reference", help="ODE trajectory CSV or TST JSON")
    p.add_argument("--delta", type=float, default=1.0, help="TV radius for fixation")
    p.add_argument("--epsilon", type=float, help="epsilon for scaling fixation times")
    p.add_argument("--scenario", help="scenario to read epsilon from")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr
    )
    try:
        return args.func(args)
    except (ScenarioError, GridMismatchError, PreconditionError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except ModelError as exc:
        log.error("%s", exc)
        return 1
    except SimulationError as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
