"""Experiment driver: ``icpsim run | sweep | compare``.

Configs are INI files with sections ``[sim]``, ``[policy]``, ``[workload]``
and ``[output]``.  In a sweep, any comma-separated value becomes a grid
axis; ``run`` accepts single values only.  Per-node memory sizes are
written with semicolons (``node_memory = 300;1000``) so they never clash
with the list syntax.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import NetworkModel
from .engine import SimConfig, run as simulate
from .errors import ConfigError, IcpsError, SchemaMismatch
from .metrics import CSV_FIELDS, compute_report, rpd
from .scheduler import PolicyBundle, make_policy
from .workload import SyntheticParams, generate_synthetic, load_trace

log = logging.getLogger(__name__)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _memory(text: str):
    parts = [float(p) for p in text.split(";") if p.strip()]
    if not parts:
        raise ValueError("empty node_memory")
    return parts[0] if len(parts) == 1 else tuple(parts)


# key -> (section, parser)
SCHEMA = {
    "duration_ms": ("sim", float),
    "interval_ms": ("sim", float),
    "keep_alive_ms": ("sim", float),
    "network_delay": ("sim", float),
    "node_count": ("sim", int),
    "node_memory": ("sim", _memory),
    "allow_new_nodes": ("sim", _bool),
    "check_invariants": ("sim", _bool),
    "seed": ("sim", int),
    "repetitions": ("sim", int),
    "mode": ("policy", str),
    "prediction": ("policy", str),
    "placement": ("policy", str),
    "routing": ("policy", str),
    "pool_size": ("policy", int),
    "predictor": ("policy", str),
    "predictor_url": ("policy", str),
    "series_length": ("policy", int),
    "chscg_window": ("policy", int),
    "lstm_hidden": ("policy", int),
    "lstm_epochs": ("policy", int),
    "lstm_learning_rate": ("policy", float),
    "lstm_batch_size": ("policy", int),
    "lstm_train_fraction": ("policy", float),
    "trace": ("workload", str),
    "concurrency": ("workload", int),
    "depth": ("workload", int),
    "branch_factor": ("workload", int),
    "type_count": ("workload", int),
    "window_ms": ("workload", float),
    "exec_min_ms": ("workload", float),
    "exec_max_ms": ("workload", float),
    "memory_min_mb": ("workload", float),
    "memory_max_mb": ("workload", float),
    "cold_start_ms": ("workload", float),
    "arrival_pattern": ("workload", str),
    "burst_period_ms": ("workload", float),
    "burst_offset_ms": ("workload", float),
    "dir": ("output", str),
    "event_log": ("output", _bool),
}
SECTIONS = ("sim", "policy", "workload", "output")
# keys that cannot be swept
SCALAR_ONLY = {"repetitions", "seed", "dir", "event_log", "trace", "predictor_url"}
# keys that identify an algorithm rather than a grid point in compare
POLICY_KEYS = {k for k, (sec, _) in SCHEMA.items() if sec == "policy"} | {"keep_alive_ms"}
ROW_KEYS = ("policy", "seed", "repetition")
SERIES_AXES = ("concurrency", "depth", "node_memory", "node_count", "network_delay")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)  # key -> parsed scalar
    grid: dict = field(default_factory=dict)  # key -> list of parsed values
    base_dir: Path = Path(".")

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def repetitions(self) -> int:
        return self.values.get("repetitions", 1)

    def combinations(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


def parse_config(text: str, base_dir: Path | str = ".", allow_lists: bool = True) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("ini", str(exc).splitlines()[0]) from None
    cfg = ExperimentConfig(base_dir=Path(base_dir))
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section, expected one of {', '.join(SECTIONS)}")
        for key, raw in cp.items(section):
            if key not in SCHEMA:
                raise ConfigError(key, f"unknown key in [{section}]")
            want, parse = SCHEMA[key]
            if want != section:
                raise ConfigError(key, f"belongs in [{want}], found in [{section}]")
            parts = [p.strip() for p in raw.split(",")]
            try:
                parsed = [parse(p) for p in parts]
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
            if len(parsed) > 1:
                if not allow_lists:
                    raise ConfigError(key, "list values are only allowed in a sweep")
                if key in SCALAR_ONLY:
                    raise ConfigError(key, "cannot be swept")
                cfg.grid[key] = parsed
            else:
                cfg.values[key] = parsed[0]
    if cfg.repetitions < 1:
        raise ConfigError("repetitions", "must be >= 1")
    # validate every combination up front so errors surface before any run
    for combo in cfg.combinations():
        settings = {**cfg.values, **combo}
        build_sim_config(settings, 0)
        build_bundle(settings)
        if "trace" not in settings:
            build_params(settings, 0)
    return cfg


def load_config(path, allow_lists: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, allow_lists)


def build_sim_config(s: dict, seed: int) -> SimConfig:
    try:
        return SimConfig(
            duration=s.get("duration_ms", 800_000.0),
            interval=s.get("interval_ms", 60_000.0),
            keep_alive=s.get("keep_alive_ms", 10_000.0),
            network=NetworkModel(s.get("network_delay", 10.0)),
            node_count=s.get("node_count", 10),
            node_memory=s.get("node_memory", 1000.0),
            seed=seed,
            allow_new_nodes=s.get("allow_new_nodes", True),
            check_invariants=s.get("check_invariants", True),
        )
    except ValueError as exc:
        # SimConfig messages start with the field name
        field_name = str(exc).split()[0]
        key = {"duration": "duration_ms", "interval": "interval_ms", "keep_alive": "keep_alive_ms"}.get(
            field_name, field_name
        )
        raise ConfigError(key, str(exc)) from None


def build_bundle(s: dict) -> PolicyBundle:
    kwargs = {k: s[k] for k in SCHEMA if SCHEMA[k][0] == "policy" and k in s}
    return PolicyBundle(**kwargs)


def build_params(s: dict, seed: int) -> SyntheticParams:
    params = SyntheticParams(
        concurrency=s.get("concurrency", 500),
        depth=s.get("depth", 5),
        branch_factor=s.get("branch_factor", 2),
        type_count=s.get("type_count", 4),
        window_ms=s.get("window_ms", s.get("duration_ms", 800_000.0)),
        seed=seed,
        exec_range=(s.get("exec_min_ms", 10.0), s.get("exec_max_ms", 200.0)),
        memory_range=(s.get("memory_min_mb", 50.0), s.get("memory_max_mb", 200.0)),
        cold_start_ms=s.get("cold_start_ms", 500.0),
        arrival_pattern=s.get("arrival_pattern", "uniform"),
        burst_period_ms=s.get("burst_period_ms", 60_000.0),
        burst_offset_ms=s.get("burst_offset_ms", 1_000.0),
    )
    try:
        params.validate()
    except IcpsError as exc:
        raise ConfigError("workload", str(exc)) from None
    return params


def _workload(s: dict, seed: int, base_dir: Path):
    if "trace" in s:
        path = Path(s["trace"])
        if not path.is_absolute():
            path = base_dir / path
        try:
            with open(path, encoding="utf-8") as fh:
                app, types, requests = load_trace(fh)
        except OSError as exc:
            raise ConfigError("trace", f"cannot read {path}: {exc.strerror}") from None
        if app is None:
            raise ConfigError("trace", f"{path} holds no requests")
        return app, types, requests
    return generate_synthetic(build_params(s, seed))


def run_once(settings: dict, seed: int, base_dir: Path):
    """One simulation; returns (report, event log)."""
    config = build_sim_config(settings, seed)
    bundle = build_bundle(settings)
    app, types, requests = _workload(settings, seed, base_dir)
    policy = make_policy(bundle, config.keep_alive)
    evlog = simulate(config, policy, app, types, requests)
    return compute_report(evlog), evlog, bundle.label


def _job(args):
    settings, seed, base_dir = args
    report, _, label = run_once(settings, seed, Path(base_dir))
    return label, report.row()


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ";".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in columns})
    path.write_text(buf.getvalue(), encoding="utf-8")


def _seeds(cfg: ExperimentConfig, override: int | None) -> list[int]:
    base = override if override is not None else cfg.get("seed", 0)
    return [base + r for r in range(cfg.repetitions)]


def _out_dir(cfg: ExperimentConfig, override) -> Path:
    out = Path(override) if override else Path(cfg.get("dir", "results"))
    if not out.is_absolute() and not override:
        out = cfg.base_dir / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_experiment(cfg: ExperimentConfig, out=None, seed: int | None = None) -> Path:
    """Per-repetition report JSON, one aggregate CSV, event log of repetition 0."""
    if cfg.grid:
        raise ConfigError(next(iter(cfg.grid)), "list values are only allowed in a sweep")
    out = _out_dir(cfg, out)
    rows = []
    for rep, s in enumerate(_seeds(cfg, seed)):
        report, evlog, label = run_once(cfg.values, s, cfg.base_dir)
        (out / f"report_rep{rep}.json").write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
        if rep == 0 and cfg.get("event_log", True):
            evlog.write(out / "eventlog_rep0.ndjson")
        rows.append({"policy": label, "seed": s, "repetition": rep, **report.row()})
    _write_csv(out / "results.csv", list(ROW_KEYS) + list(CSV_FIELDS), rows)
    return out


def _workers(n_jobs: int) -> int:
    env = os.environ.get("ICPS_SIM_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError("ICPS_SIM_THREADS", f"not an integer: {env!r}") from None
        if cap < 1:
            raise ConfigError("ICPS_SIM_THREADS", "must be >= 1")
    return max(1, min(cap, n_jobs))


def sweep(cfg: ExperimentConfig, out=None, seed: int | None = None) -> Path:
    """One row per (combination, repetition) plus mean-η series per swept axis."""
    out = _out_dir(cfg, out)
    axes = list(cfg.grid)
    seeds = _seeds(cfg, seed)
    jobs, meta = [], []
    for combo in cfg.combinations():
        for rep, s in enumerate(seeds):
            jobs.append(({**cfg.values, **combo}, s, str(cfg.base_dir)))
            meta.append((combo, s, rep))
    workers = _workers(len(jobs))
    log.info("sweep: %d runs on %d workers", len(jobs), workers)
    if workers == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_job, jobs))
    rows = [
        {**combo, "policy": label, "seed": s, "repetition": rep, **metrics}
        for (combo, s, rep), (label, metrics) in zip(meta, results)
    ]
    _write_csv(out / "results.csv", axes + list(ROW_KEYS) + list(CSV_FIELDS), rows)
    for axis in axes:
        if axis in SERIES_AXES:
            _write_csv(out / f"series_{axis}.csv", *_series(rows, axis))
    return out


def _series(rows: list[dict], axis: str):
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r[axis], r["policy"]), []).append(r)
    out = []
    for (value, label), rs in groups.items():
        eta = np.array([r["eta"] for r in rs])
        out.append(
            {
                axis: value,
                "policy": label,
                "runs": len(rs),
                "eta_mean": float(eta.mean()),
                "eta_std": float(eta.std(ddof=1)) if len(rs) > 1 else 0.0,
                "phi_resp_mean": float(np.mean([r["phi_resp"] for r in rs])),
                "phi_resource_mean": float(np.mean([r["phi_resource"] for r in rs])),
            }
        )
    cols = [axis, "policy", "runs", "eta_mean", "eta_std", "phi_resp_mean", "phi_resource_mean"]
    return cols, out


def _read_results(path: Path) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            return list(reader.fieldnames or []), list(reader)
    except OSError as exc:
        raise SchemaMismatch(f"cannot read {path}: {exc.strerror}") from None


def compare(paths, convention: str = "literal") -> tuple[list[str], list[dict]]:
    """RPD of every algorithm's mean η per grid point.

    An algorithm is a distinct ``policy`` label within an input (suffixed
    by input position and file stem when several inputs share a label); grid columns are
    the non-metric, non-policy columns and must agree across inputs.
    """
    if convention not in ("literal", "positive"):
        raise ConfigError("rpd_convention", f"unknown convention {convention!r}")
    grid_cols = None
    table: dict[str, dict[tuple, list[float]]] = {}
    labels_seen: dict[str, int] = {}
    inputs = []
    for p in map(Path, paths):
        cols, rows = _read_results(p)
        for need in ("policy", "eta"):
            if need not in cols:
                raise SchemaMismatch(f"{p}: missing column {need!r}")
        gc = [c for c in cols if c not in CSV_FIELDS and c not in ROW_KEYS and c not in POLICY_KEYS]
        if grid_cols is None:
            grid_cols = gc
        elif sorted(gc) != sorted(grid_cols):
            raise SchemaMismatch(f"{p}: grid columns {gc} differ from {grid_cols}")
        inputs.append((p, rows))
        for label in {r["policy"] for r in rows}:
            labels_seen[label] = labels_seen.get(label, 0) + 1
    for i, (p, rows) in enumerate(inputs):
        for r in rows:
            name = r["policy"] if labels_seen[r["policy"]] == 1 else f"{r['policy']}@{i}:{p.stem}"
            point = tuple(r[c] for c in grid_cols)
            table.setdefault(name, {}).setdefault(point, []).append(float(r["eta"]))
    points = None
    for name, by_point in table.items():
        if points is None:
            points = set(by_point)
        elif set(by_point) != points:
            missing = sorted(points ^ set(by_point))
            raise SchemaMismatch(f"{name}: grid points differ, first mismatch {missing[0]}")
    out = []
    for point in sorted(points or ()):
        means = {name: float(np.mean(table[name][point])) for name in table}
        best = min(means.values())
        for name in sorted(means):
            out.append(
                {
                    **dict(zip(grid_cols, point)),
                    "algorithm": name,
                    "eta": means[name],
                    "eta_best": best,
                    "rpd": rpd(best, means[name], convention),
                }
            )
    return list(grid_cols or []) + ["algorithm", "eta", "eta_best", "rpd"], out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icpsim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
    p = sub.add_parser("compare")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out")
    p.add_argument("--rpd-convention", choices=("literal", "positive"), default="literal")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            out = run_experiment(load_config(args.config, allow_lists=False), args.out, args.seed)
            print(out / "results.csv")
        elif args.command == "sweep":
            out = sweep(load_config(args.config), args.out, args.seed)
            print(out / "results.csv")
        else:
            cols, rows = compare(args.csv, args.rpd_convention)
            if args.out:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                _write_csv(Path(args.out), cols, rows)
            else:
                buf = io.StringIO()
                w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
                w.writeheader()
                w.writerows({k: _fmt(r[k]) for k in cols} for r in rows)
                sys.stdout.write(buf.getvalue())
    except (IcpsError, ValueError) as exc:
        print(f"icpsim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
