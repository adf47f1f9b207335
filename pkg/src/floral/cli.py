"""``floral`` command line: run, sweep, verify, gen-data.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, config_from_dict, config_to_dict, dump_yaml, env_overrides, load_yaml, merge
from .data import DataError, GeneratorConfig, generate_series
from .runtime import ExperimentError, detection_stats, run_experiment
from .stl import EvaluationError, ParseError, SchemaError, StlError, eval_robustness, max_channel, parse, step_satisfaction

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
SWEEP_AXES = ("epsilon", "defense", "aggregator", "arch", "attack")
DEFAULT_MAX_CELLS = 1000

log = logging.getLogger("floral")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _flag_overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "rounds", None) is not None:
        out["rounds"] = args.rounds
    if getattr(args, "defense", None) is not None:
        out["defense"] = {"name": args.defense}
    if getattr(args, "gamma", None) is not None:
        out.setdefault("defense", {})["gamma"] = args.gamma
    if getattr(args, "attack", None) is not None:
        out.setdefault("attack", {})["kind"] = args.attack
    if getattr(args, "epsilon", None) is not None:
        out.setdefault("attack", {})["epsilon"] = args.epsilon
    return out


def _merge_defense(doc: dict, over: dict) -> dict:
    # a new defense name drops parameters that belong to the old one
    if "defense" in over and "name" in over["defense"]:
        old = doc.get("defense")
        old_name = old if isinstance(old, str) else (old or {}).get("name")
        if old_name != over["defense"]["name"]:
            doc = {**doc, "defense": {"name": over["defense"]["name"]}}
    return merge(doc, over)


def _resolve_doc(args) -> dict:
    doc = load_yaml(args.config) if args.config else {}
    doc = _merge_defense(doc, env_overrides())
    return _merge_defense(doc, _flag_overrides(args))


def format_table(result) -> str:
    """Plain-text per-round table plus a final summary line."""
    cfg = result.config
    lines = [
        f"defense={cfg.defense} attack={cfg.attack.kind} epsilon={cfg.attack.epsilon:g} "
        f"aggregator={cfg.aggregator} arch={cfg.model.arch} seed={cfg.seed}",
        f"{'round':>5} {'MSE':>12} {'MAE':>12} {'kept':>6} {'attackers':>9}",
    ]
    for r in result.records:
        lines.append(
            f"{r.round:>5} {r.mse:>12.6f} {r.mae:>12.6f} {sum(r.mask):>3}/{len(r.mask):<2} {len(r.attackers):>9}"
        )
    stats = detection_stats(result)
    lines.append(
        f"final MSE {result.records[-1].mse:.6f}  MAE {result.records[-1].mae:.6f}  "
        f"(raw {result.records[-1].mse_raw:.6f} / {result.records[-1].mae_raw:.6f})"
    )
    if stats["attacker_appearances"]:
        lines.append(
            f"attacker masking recall {stats['recall']:.3f}  benign masking rate {stats['false_positive_rate']:.3f}"
        )
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    cfg = config_from_dict(_resolve_doc(args))
    if args.dry_run:
        sys.stdout.write(dump_yaml(cfg))
        return EXIT_OK
    out = Path(args.out_dir or f"runs/{cfg.defense}-{cfg.attack.kind}-seed{cfg.seed}")
    try:
        result = run_experiment(cfg)
    except (ExperimentError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    result.save(out)
    table = format_table(result)
    (out / "table.txt").write_text(table)
    sys.stdout.write(table)
    print(f"artifacts written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- sweeps


def load_sweep(path, base_overrides: dict | None = None):
    """Read a sweep file; returns ``(base_doc, axes, repetitions, seed_base, max_cells)``.

    Layout::

        base: {... experiment config ...}   # or base_config: path/to/run.yaml
        axes: {epsilon: [0.1, 0.3], defense: [none, floral]}
        repetitions: 3
        seed_base: 0
        max_cells: 1000
    """
    doc = load_yaml(path)
    unknown = set(doc) - {"base", "base_config", "axes", "repetitions", "seed_base", "max_cells"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    base = {}
    if "base_config" in doc:
        base = load_yaml(Path(path).parent / doc["base_config"])
    base = merge(base, doc.get("base") or {})
    base = _merge_defense(base, env_overrides())
    if base_overrides:
        base = _merge_defense(base, base_overrides)
    axes = doc.get("axes")
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("axes", "required field is missing or empty")
    for k, v in axes.items():
        if k not in SWEEP_AXES:
            raise ConfigError(f"axes.{k}", f"unknown axis; choose from {', '.join(SWEEP_AXES)}")
        if not isinstance(v, list) or not v:
            raise ConfigError(f"axes.{k}", "must be a non-empty list")
    reps = doc.get("repetitions", 1)
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise ConfigError("repetitions", "must be a positive integer")
    seed_base = doc.get("seed_base", base.get("seed", 0))
    if isinstance(seed_base, bool) or not isinstance(seed_base, int):
        raise ConfigError("seed_base", "must be an integer")
    cap = doc.get("max_cells", DEFAULT_MAX_CELLS)
    n_cells = int(np.prod([len(v) for v in axes.values()])) * reps
    if n_cells > cap:
        raise ConfigError("axes", f"grid has {n_cells} cells, above max_cells={cap}")
    return base, axes, reps, seed_base, cap


def sweep_cells(base: dict, axes: dict, reps: int, seed_base: int) -> list[dict]:
    """Expand the grid; seeds are ``seed_base + repetition`` so cells share seeds."""
    names = list(axes)
    cells = []
    for combo in itertools.product(*(axes[n] for n in names)):
        for rep in range(reps):
            doc = dict(base)
            over: dict = {"seed": seed_base + rep}
            for name, value in zip(names, combo):
                if name == "epsilon":
                    over.setdefault("attack", {})["epsilon"] = value
                elif name == "attack":
                    over.setdefault("attack", {})["kind"] = value
                elif name == "defense":
                    over["defense"] = {"name": value}
                elif name == "aggregator":
                    over["aggregator"] = value
                elif name == "arch":
                    over.setdefault("model", {})["arch"] = value
            doc = _merge_defense(doc, over)
            cells.append({"axes": dict(zip(names, combo)), "rep": rep, "doc": doc})
    return cells


def cell_hash(cfg) -> str:
    text = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _run_cell(doc: dict, out_dir: str) -> dict:
    cfg = config_from_dict(doc)
    result = run_experiment(cfg)
    result.save(out_dir)
    last = result.records[-1]
    status = {
        "status": "ok",
        "mse": last.mse,
        "mae": last.mae,
        "mse_raw": last.mse_raw,
        "mae_raw": last.mae_raw,
    }
    Path(out_dir, "status.json").write_text(json.dumps(status, sort_keys=True))
    return status


def _fmt(values) -> str:
    if not values:
        return "failed"
    mean = float(np.mean(values))
    if len(values) == 1:
        return f"{mean:.6g}"
    return f"{mean:.6g} ± {float(np.std(values, ddof=1)):.2g}"


def cmd_sweep(args) -> int:
    base, axes, reps, seed_base, _ = load_sweep(args.sweep, _flag_overrides(args))
    cells = sweep_cells(base, axes, reps, seed_base)
    out = Path(args.out_dir or "sweep")
    # validate every cell before running any
    cfgs = [config_from_dict(c["doc"]) for c in cells]
    jobs = []
    for cell, cfg in zip(cells, cfgs):
        cell["hash"] = cell_hash(cfg)
        cell["dir"] = str(out / "cells" / cell["hash"])
        status_file = Path(cell["dir"], "status.json")
        if args.resume and status_file.exists():
            prev = json.loads(status_file.read_text())
            if prev.get("status") == "ok":
                cell["result"] = prev
                continue
        jobs.append(cell)
    if args.dry_run:
        for cell in cells:
            state = "done" if "result" in cell else "pending"
            print(f"{cell['hash']} {state} {json.dumps(cell['axes'], sort_keys=True)} rep={cell['rep']}")
        return EXIT_OK

    def record(cell, status):
        cell["result"] = status
        print(f"[{cell['hash']}] {json.dumps(cell['axes'], sort_keys=True)} rep={cell['rep']}: "
              f"{status['status']}" + (f" mse={status['mse']:.6g}" if status["status"] == "ok" else ""))

    def failure(cell, exc):
        Path(cell["dir"]).mkdir(parents=True, exist_ok=True)
        status = {"status": "failed", "error": str(exc)}
        Path(cell["dir"], "status.json").write_text(json.dumps(status, sort_keys=True))
        return status

    if args.parallel and args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [(c, pool.submit(_run_cell, c["doc"], c["dir"])) for c in jobs]
            for cell, fut in futures:
                try:
                    record(cell, fut.result())
                except Exception as exc:
                    record(cell, failure(cell, exc))
    else:
        for cell in jobs:
            try:
                record(cell, _run_cell(cell["doc"], cell["dir"]))
            except Exception as exc:
                record(cell, failure(cell, exc))

    write_sweep_reports(cells, list(axes), out)
    n_failed = sum(c["result"]["status"] != "ok" for c in cells)
    print(f"{len(cells) - n_failed}/{len(cells)} cells ok; reports in {out}")
    return EXIT_RUNTIME if n_failed else EXIT_OK


def write_sweep_reports(cells, axis_names, out: Path) -> None:
    """``cells.csv`` (one row per run), ``results.csv`` (mean/sd per grid point), ``pivot.csv``."""
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", *axis_names, "rep", "status", "mse", "mae", "mse_raw", "mae_raw"])
        for c in cells:
            r = c["result"]
            w.writerow([c["hash"], *(c["axes"][a] for a in axis_names), c["rep"], r["status"],
                        *(r.get(k, "") for k in ("mse", "mae", "mse_raw", "mae_raw"))])

    groups: dict = {}
    for c in cells:
        key = tuple(c["axes"][a] for a in axis_names)
        groups.setdefault(key, []).append(c["result"])
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*axis_names, "runs", "failed", "mse_mean", "mse_sd", "mae_mean", "mae_sd"])
        for key, results in groups.items():
            ok = [r for r in results if r["status"] == "ok"]
            mse = [r["mse"] for r in ok]
            mae = [r["mae"] for r in ok]
            sd = (lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else "")
            w.writerow([*key, len(results), len(results) - len(ok),
                        float(np.mean(mse)) if mse else "", sd(mse),
                        float(np.mean(mae)) if mae else "", sd(mae)])

    # rows: every axis except epsilon; columns: epsilon (or a single "mse" column)
    row_axes = [a for a in axis_names if a != "epsilon"]
    cols = sorted({c["axes"]["epsilon"] for c in cells}) if "epsilon" in axis_names else [None]
    table: dict = {}
    for c in cells:
        rk = tuple(c["axes"][a] for a in row_axes)
        ck = c["axes"].get("epsilon")
        table.setdefault(rk, {}).setdefault(ck, [])
        if c["result"]["status"] == "ok":
            table[rk][ck].append(c["result"]["mse"])
    with open(out / "pivot.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*(row_axes or ["run"]), *(f"eps={e:g}" if e is not None else "mse" for e in cols)])
        for rk, row in table.items():
            w.writerow([*(rk or ("all",)), *(_fmt(row.get(e, [])) for e in cols)])


# ---------------------------------------------------------------- verify / gen-data


def read_trace_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty trace file")
    header = [h.strip() for h in rows[0]]
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if values.size == 0:
        raise DataError(f"{path}: trace has no rows")
    if values.ndim != 2 or values.shape[1] != len(header):
        raise DataError(f"{path}: every row needs {len(header)} values")
    return header, values


def cmd_verify(args) -> int:
    try:
        phi = parse(args.formula)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        print(f"  {args.formula}\n  {' ' * exc.position}^", file=sys.stderr)
        return EXIT_USAGE
    try:
        header, values = read_trace_csv(args.trace)
    except (OSError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if max_channel(phi) >= values.shape[1]:
        print(
            f"error: formula uses x{max_channel(phi) + 1} but the trace has {values.shape[1]} column(s)",
            file=sys.stderr,
        )
        return EXIT_USAGE
    try:
        verdict = step_satisfaction(phi, values)
    except (EvaluationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        rho = eval_robustness(phi, values, 0)
    except EvaluationError:
        rho = float("nan")
    report = {
        "channels": header,
        "steps": ["T" if v else "F" for v in verdict],
        "score": float(np.mean(verdict)),
        "robustness": rho,
    }
    if args.json:
        print(json.dumps(report))
    else:
        print("steps:      [" + ", ".join(report["steps"]) + "]")
        print(f"score:      {report['score']:g}")
        print(f"robustness: {rho:g}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    doc = load_yaml(args.config) if args.config else {}
    data = dict(doc.get("data") or {})
    model = doc.get("model") or {}
    for key in ("lookback", "horizon", "n_channels"):
        if key in model:
            data[key] = model[key]
    if "n_clients" in doc:
        data["n_clients"] = doc["n_clients"]
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    data["seed"] = seed
    try:
        gen = GeneratorConfig(**data)
    except (TypeError, DataError) as exc:
        raise ConfigError("data", str(exc)) from None
    series, _ = generate_series(gen)
    out = Path(args.out_dir or "data")
    out.mkdir(parents=True, exist_ok=True)
    header = [f"x{c + 1}" for c in range(gen.n_channels)]
    for i, s in enumerate(series):
        with open(out / f"client_{i:03d}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(float(v)) for v in row] for row in s])
    print(f"wrote {len(series)} client files with columns {header} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="floral", description="Federated forecasting with logic-guided defenses.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def experiment_flags(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--defense")
        sp.add_argument("--attack")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--rounds", type=int)
        sp.add_argument("--dry-run", action="store_true", help="validate and print, run nothing")

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="YAML experiment config")
    experiment_flags(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a grid of experiments")
    sweep.add_argument("sweep", metavar="SWEEP", nargs="?", help="YAML sweep file")
    sweep.add_argument("--config", dest="sweep_flag", help="same as the positional SWEEP")
    experiment_flags(sweep)
    sweep.add_argument("--parallel", type=int, default=1, help="worker processes")
    sweep.add_argument("--resume", action="store_true", help="skip cells that already finished")
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify", help="check a formula against a trace CSV")
    verify.add_argument("formula")
    verify.add_argument("trace")
    verify.add_argument("--json", action="store_true")
    verify.set_defaults(func=cmd_verify)

    gen = sub.add_parser("gen-data", help="write synthetic client series as CSV")
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out-dir")
    gen.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "sweep":
            args.sweep = args.sweep or args.sweep_flag
            if not args.sweep:
                raise UsageError("sweep needs a sweep file")
    except UsageError as exc:
        print(f"floral: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StlError, DataError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure contract
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
