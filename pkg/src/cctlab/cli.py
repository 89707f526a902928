"""Command-line entry point: simulate | dataset | select | bench.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cct import find_cct
from .config import ConfigError, RunConfig
from .grid import (
    CaseError,
    NonConvergence,
    ReductionError,
    init_machines,
    load_case,
    phase_networks,
    solve_power_flow,
)
from .regress.base import TrainingError
from .regress.evaluation import MODES, mode_columns, run_experiment
from .scenarios import Scenario, UncertaintySpec, build_dataset, read_table, summarize
from .selection import MicConfig, SelectionError, reduce_columns, select_features
from .tds import (
    SimulationSchedule,
    b_stability_index,
    build_swing_system,
    is_b_stable,
    simulate,
    write_trajectory_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
LABEL_FREE_MODELS = ("mlp", "grnn")

logger = logging.getLogger("cctlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _case(cfg: RunConfig):
    return load_case(cfg["case_path"])


def _settings(cfg: RunConfig) -> dict:
    s = cfg["schedule"]
    return {"beta": cfg["beta"], "bracket_max": cfg["bisection"]["bracket_max"],
            "tol": cfg["bisection"]["tol"], "step": s["step"], "t_fault": s["t_fault"],
            "horizon": s["horizon"]}


# -- subcommands -----------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    case = _case(cfg)
    cont = case.contingency(args.contingency)
    spec = UncertaintySpec.for_case(case)
    p_loads = tuple(args.load) if args.load else tuple(b.p_load for b in case.load_buses())
    inj = {i.id: i.p for i in case.injections}
    scenario = Scenario(p_loads,
                        inj.get("solar", 0.0) if args.solar is None else args.solar,
                        inj.get("wind", 0.0) if args.wind is None else args.wind)
    if len(p_loads) != len(spec.loads):
        raise UsageError(f"--load needs {len(spec.loads)} values")
    s = cfg["schedule"]
    pf = solve_power_flow(case, scenario)
    init = init_machines(pf)
    system = build_swing_system(pf, init, cont, phase_networks(pf, cont))
    schedule = SimulationSchedule.for_duration(args.duration, t_fault=s["t_fault"],
                                               step=s["step"], horizon=s["horizon"])
    traj = simulate(system, schedule)
    out = _out_dir(cfg) / f"trajectory_c{cont.number}_{args.duration:g}s.csv"
    write_trajectory_csv(traj, out)
    eta = b_stability_index(traj)
    stable = is_b_stable(traj, cfg["beta"])
    print(f"contingency {cont.number}  clearing duration {args.duration:g} s")
    print(f"eta = {eta:.3f} deg  (beta = {cfg['beta']:g})")
    if traj.diverged_at is not None:
        print(f"angle spread diverged at t = {traj.diverged_at:.3f} s")
    print(f"verdict: {'stable' if stable else 'unstable'}")
    if args.cct:
        res = find_cct(case, scenario, cont, **_settings(cfg))
        print(f"cct: {res.kind}" + (f" {res.value:.6f} s" if res.is_finite else ""))
    print(f"trajectory written to {out}")
    return EXIT_OK


def cmd_dataset(cfg: RunConfig, args) -> int:
    case = _case(cfg)
    spec = UncertaintySpec.for_case(case, **cfg["uncertainty"])
    ds = build_dataset(case, cfg["contingencies"], spec, cfg["n_per_contingency"], cfg["seed"],
                       workers=cfg["workers"], with_t1=cfg["with_t1"], **_settings(cfg))
    out = _out_dir(cfg)
    ds.write(out / "dataset.csv", out / "provenance.json")
    summary = summarize(ds)
    rows = [[n, repr(v["mean"]), repr(v["std"]), v["count"]]
            for n, v in summary["per_contingency"].items()]
    _write_csv(out / "summary.csv", ["cont_no", "mean_s", "std_s", "count"], rows)
    _write_json(out / "histogram.json", summary["histogram"])

    total = len(ds.provenance["contingencies"]) * cfg["n_per_contingency"]
    print(f"{'cont':>4} {'mean[s]':>9} {'std[s]':>9} {'count':>6}")
    for n, v in summary["per_contingency"].items():
        print(f"{n:>4} {v['mean']:>9.4f} {v['std']:>9.4f} {v['count']:>6}")
    for note in summary["notes"]:
        print(note)
    ex = ds.provenance["excluded"]
    print(f"retained {len(ds.rows)}/{total} rows (zero {ex['zero']}, infinite {ex['infinite']}, "
          f"non-converged {ex['nonconverged']})")
    print(f"wrote {out / 'dataset.csv'}")
    if total and len(ds.rows) < 0.5 * total:
        print("fewer than half of the rows were retained", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_select(cfg: RunConfig, args) -> int:
    names, X, y = read_table(args.dataset)
    pool = mode_columns(names, args.mode)
    Xp = reduce_columns(names, X, pool)
    sel = cfg["selection"]
    report = select_features(pool, Xp, y, sel["mic_floor"], sel["scc_threshold"],
                             MicConfig(exponent=sel["mic_exponent"]))
    out = _out_dir(cfg)
    tag = args.mode
    report.write_json(out / f"selection_{tag}.json")
    report.write_scc_csv(out / f"scc_{tag}.csv")
    Xk = reduce_columns(pool, Xp, report.kept)
    _write_csv(out / f"reduced_{tag}.csv", report.kept + ["cct"],
               [[repr(float(v)) for v in row] + [repr(float(t))] for row, t in zip(Xk, y)])
    print(f"{'feature':<12}{'MIC':>8}")
    for f, v in report.mic_ranking:
        print(f"{f:<12}{v:>8.3f}")
    for f, reason in report.dropped:
        print(f"dropped {f}: {reason}")
    print(f"kept {len(report.kept)}: {', '.join(report.kept)}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    names, X, y = read_table(args.dataset)
    if args.models:
        models = args.models.split(",")
    elif args.mode != "with-label":
        models = list(LABEL_FREE_MODELS)
    else:
        models = cfg.model_specs()
    sel = cfg["selection"]
    cv = cfg["cv"]
    seed = args.seed if args.seed is not None else cv["seed"]
    res = run_experiment(names, X, y, args.mode, models, k=cv["k"], seed=seed,
                         mic_floor=sel["mic_floor"], scc_threshold=sel["scc_threshold"],
                         mic_cfg=MicConfig(exponent=sel["mic_exponent"]))
    out = _out_dir(cfg)
    tag = args.mode
    (out / f"bench_{tag}.csv").write_text(res.csv_text())
    (out / f"clusters_{tag}.csv").write_text(res.cluster_csv_text())
    _write_json(out / f"bench_{tag}.json", res.to_dict())
    print(res.pretty())
    print()
    print(res.cluster_csv_text().rstrip())
    return EXIT_OK


# -- argument handling -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (defaults used if omitted)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cctlab", description="CCT datasets, feature selection and regression "
                "benchmarks for multi-machine transient stability.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="one fault-on simulation")
    s.add_argument("--contingency", type=int, required=True)
    s.add_argument("--duration", type=float, required=True,
                   help="fault duration in seconds (0 clears instantly)")
    s.add_argument("--load", type=float, nargs="+", help="active load per load bus, p.u.")
    s.add_argument("--solar", type=float)
    s.add_argument("--wind", type=float)
    s.add_argument("--cct", action="store_true", help="also bisect for the CCT")

    sub.add_parser("dataset", parents=[common], help="generate the CCT dataset")

    for name, helptext in (("select", "MIC+SCC feature selection"),
                           ("bench", "cross-validated model comparison")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("dataset", help="dataset CSV")
        q.add_argument("--mode", choices=MODES, default="with-label")
        if name == "bench":
            q.add_argument("--models", help="comma-separated model kinds")
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    if over:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **over})
    return cfg


COMMANDS = {"simulate": cmd_simulate, "dataset": cmd_dataset, "select": cmd_select,
            "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except (NonConvergence, ReductionError, TrainingError, SelectionError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        # checked first: several of these subclass ValueError
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CaseError, UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

if __name__ == "__main__":
    sys.exit(main())
