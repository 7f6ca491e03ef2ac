"""Run experiments, write their artifact tree, and build comparison tables.

Layout of one experiment::

    <out>/<name>/spec.ini
    <out>/<name>/<seed>/{curve.csv, episode_0.csv, checkpoint, metrics.csv}
    <out>/<name>/summary.{csv,md}
    <out>/<name>/{trajectories,learning_curve}.png

Every number in ``summary.*`` and in comparison tables is recomputed from the
per-seed ``episode_0.csv`` it names.
"""
from __future__ import annotations

import configparser
import csv
import io
import logging
import statistics
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import baseline as bl
from . import ddpg, plotting
from .config import METHODS, SOLVER_LABEL, ExperimentSpec, parse_config, serialize
from .env import EpisodeLog, final_error, peak_rate, rollout, steady_state_error, undiscounted_return
from .errors import ConfigError, UsageError

log = logging.getLogger(__name__)

METRICS = ("steady_state_error", "final_error", "undiscounted_return", "peak_rate")
CONTROLS_MAGIC = "pirl-controls 1"


@dataclass(frozen=True)
class ResultRow:
    method: str
    solver: str
    plant: str
    seed: int
    steady_state_error: float
    final_error: float
    undiscounted_return: float
    peak_rate: float

    def __post_init__(self):
        if not self.undiscounted_return <= 0:
            raise ValueError(f"return must be <= 0, got {self.undiscounted_return}")
        if min(self.steady_state_error, self.final_error, self.peak_rate) < 0:
            raise ValueError("errors and rates must be non-negative")


ROW_FIELDS = [f.name for f in fields(ResultRow)]


def metrics_from_log(log_: EpisodeLog, window: int = 50) -> dict:
    window = min(window, len(log_))
    return {
        "steady_state_error": steady_state_error(log_, window),
        "final_error": final_error(log_),
        "undiscounted_return": undiscounted_return(log_),
        "peak_rate": peak_rate(log_),
    }


# -- controls checkpoint ------------------------------------------------------


def save_controls(path, controls) -> None:
    lines = [CONTROLS_MAGIC, str(len(controls))] + [float(u).hex() for u in controls]
    Path(path).write_text("\n".join(lines) + "\n")


def load_controls(path) -> np.ndarray:
    lines = Path(path).read_text().split()
    if not lines or " ".join(lines[:2]) != CONTROLS_MAGIC:
        raise ValueError(f"{path}: not a control-sequence checkpoint")
    n = int(lines[2])
    vals = [float.fromhex(x) for x in lines[3:]]
    if len(vals) != n:
        raise ValueError(f"{path}: expected {n} controls, found {len(vals)}")
    return np.array(vals)


def is_controls_file(path) -> bool:
    with open(path) as fh:
        return fh.readline().strip() == CONTROLS_MAGIC


# -- csv helpers -------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_rows(path, rows: Sequence[ResultRow]) -> None:
    _write_csv(path, ROW_FIELDS, [[getattr(r, f) for f in ROW_FIELDS] for r in rows])


def read_rows(path) -> list:
    """Per-seed rows of a ``metrics.csv`` or ``summary.csv`` (aggregate lines skipped)."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if not rec["seed"].lstrip("-").isdigit():
                continue
            kw = {k: rec[k] for k in ("method", "solver", "plant")}
            kw["seed"] = int(rec["seed"])
            kw.update({m: float(rec[m]) for m in METRICS})
            out.append(ResultRow(**kw))
    return out


# -- aggregation -------------------------------------------------------------


def aggregate(rows: Sequence[ResultRow]) -> dict:
    """metric -> (median, min, max) over seeds."""
    if not rows:
        raise UsageError("cannot aggregate an empty result set")
    out = {}
    for m in METRICS:
        vals = [getattr(r, m) for r in rows]
        out[m] = (statistics.median(vals), min(vals), max(vals))
    return out


def median_seed(rows: Sequence[ResultRow], metric: str = "steady_state_error") -> int:
    """Seed of the (lower) median run, used to pick representative trajectories."""
    ordered = sorted(rows, key=lambda r: (getattr(r, metric), r.seed))
    return ordered[(len(ordered) - 1) // 2].seed


def _sci(x: float) -> str:
    return f"{x:.3g}" if 1e-2 <= abs(x) < 1e4 or x == 0 else f"{x:.2e}"


def summary_tables(rows: Sequence[ResultRow]) -> tuple[str, str]:
    """Per-seed rows followed by median/min/max lines, as CSV and markdown."""
    agg = aggregate(rows)
    head = rows[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])
    for i, stat in enumerate(("median", "min", "max")):
        w.writerow([head.method, head.solver, head.plant, stat] + [_fmt(agg[m][i]) for m in METRICS])
    md = [
        f"### {head.method} ({head.solver}, {head.plant})",
        "",
        "| seed | steady-state error [m] | final error [m] | undiscounted return | peak rate |",
        "|---|---|---|---|---|",
    ]
    for r in rows:
        md.append(f"| {r.seed} | " + " | ".join(_sci(getattr(r, m)) for m in METRICS) + " |")
    for i, stat in enumerate(("median", "min", "max")):
        md.append(f"| {stat} | " + " | ".join(_sci(agg[m][i]) for m in METRICS) + " |")
    return buf.getvalue(), "\n".join(md) + "\n"


def compare(result_sets: Sequence[Sequence[ResultRow]]) -> tuple[str, str, str]:
    """Cross-method table plus pairwise median ratios.

    Returns ``(table_csv, table_md, ratios_csv)``. Ratios are
    ``median(numerator) / median(denominator)`` for steady-state error and
    peak rate over every ordered pair of methods.
    """
    sets = [list(s) for s in result_sets if s]
    if not sets:
        raise UsageError("compare needs at least one non-empty result set")
    plants = {r.plant for s in sets for r in s}
    if len(plants) != 1:
        raise ConfigError(f"cannot compare results from different plants: {sorted(plants)}")
    labels = [s[0].method for s in sets]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate methods in comparison: {labels}")
    aggs = [aggregate(s) for s in sets]

    header = ["method", "solver", "plant", "n_seeds"]
    for m in METRICS:
        header += [f"{m}_median", f"{m}_min", f"{m}_max"]
    header += ["steady_state_error_per_seed"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    md = [
        f"## {sets[0][0].plant} comparison (median over seeds, [min, max])",
        "",
        "| method | solver | steady-state error [m] | undiscounted return | peak rate |",
        "|---|---|---|---|---|",
    ]
    for s, a in zip(sets, aggs):
        r0 = s[0]
        row = [r0.method, r0.solver, r0.plant, len(s)]
        for m in METRICS:
            row += list(a[m])
        row.append(";".join(_fmt(r.steady_state_error) for r in sorted(s, key=lambda r: r.seed)))
        w.writerow([_fmt(v) for v in row])
        cells = [
            f"{_sci(a[m][0])} [{_sci(a[m][1])}, {_sci(a[m][2])}]"
            for m in ("steady_state_error", "undiscounted_return", "peak_rate")
        ]
        md.append(f"| {r0.method} | {r0.solver} | " + " | ".join(cells) + " |")

    rbuf = io.StringIO()
    rw = csv.writer(rbuf, lineterminator="\n")
    rw.writerow(["metric", "numerator", "denominator", "ratio"])
    md += ["", "Steady-state error ratio (row / column):", ""]
    md.append("| | " + " | ".join(labels) + " |")
    md.append("|---" * (len(labels) + 1) + "|")
    for metric in ("steady_state_error", "peak_rate"):
        for i, a in enumerate(aggs):
            cells = []
            for j, b in enumerate(aggs):
                ratio = _ratio(a[metric][0], b[metric][0])
                if i != j:
                    rw.writerow([metric, labels[i], labels[j], _fmt(ratio)])
                cells.append(_sci(ratio) if i != j else "-")
            if metric == "steady_state_error":
                md.append(f"| {labels[i]} | " + " | ".join(cells) + " |")
    return buf.getvalue(), "\n".join(md) + "\n", rbuf.getvalue()


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return float("inf") if num > 0 else float("nan")
    return num / den


# -- running -----------------------------------------------------------------


def _write_curve(path, curve) -> None:
    _write_csv(
        path,
        ["episode", "undiscounted_return", "steady_state_error", "noise_sigma"],
        [[c.episode, c.undiscounted_return, c.steady_state_error, c.noise_sigma] for c in curve],
    )


def _read_curve(path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in rec.items()} for rec in csv.DictReader(fh)]


def run_seed(spec: ExperimentSpec, seed: int, directory: Path, progress: Optional[Callable] = None,
             cache: Optional[dict] = None) -> ResultRow:
    """Train or optimize one seed and write its artifacts into ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    env_cfg = replace(spec.env, seed=seed)
    if spec.solver == "ddpg":
        res = ddpg.train(env_cfg, replace(spec.agent or ddpg.AgentConfig(), seed=seed), progress)
        _write_curve(directory / "curve.csv", res.curve)
        res.policy.save(directory / "checkpoint")
        logs, _ = ddpg.evaluate(res.policy, env_cfg)
        ep = logs[0]
    else:
        # the open-loop optimum does not depend on the seed; solve once per spec
        if cache is not None and "baseline" in cache:
            res = cache["baseline"]
        else:
            res = bl.optimize(np.zeros(env_cfg.episode_len), env_cfg, spec.baseline or bl.BaselineConfig())
            if cache is not None:
                cache["baseline"] = res
        _write_csv(directory / "curve.csv", ["iteration", "cost"], list(enumerate(res.cost_curve)))
        save_controls(directory / "checkpoint", res.controls)
        ep = rollout(env_cfg, res.controls)
    ep.to_csv(directory / "episode_0.csv")
    # recompute from disk so the table is traceable to the exported episode
    m = metrics_from_log(EpisodeLog.from_csv(directory / "episode_0.csv"))
    row = ResultRow(spec.method, SOLVER_LABEL[spec.solver], spec.plant, seed, **m)
    write_rows(directory / "metrics.csv", [row])
    return row


def experiment_dir(spec: ExperimentSpec) -> Path:
    return Path(spec.out) / spec.name


def run(spec: ExperimentSpec, progress: Optional[Callable] = None, figures: bool = True) -> list:
    """Run every seed of ``spec``; returns the per-seed ResultRows."""
    root = experiment_dir(spec)
    root.mkdir(parents=True, exist_ok=True)
    text = serialize(spec)
    spec_file = root / "spec.ini"
    if spec_file.exists() and spec_file.read_text() != text:
        raise ConfigError(f"{root} already holds a different experiment; pick another name or output directory")
    spec_file.write_text(text)

    rows: list = []
    cache: dict = {}
    try:
        for seed in spec.seeds:
            log.info("%s: seed %d", spec.name, seed)
            rows.append(run_seed(spec, seed, root / str(seed), progress, cache))
    finally:
        if rows:
            write_summary(root, rows)
    if figures:
        render_experiment(root, rows)
    return rows


def write_summary(root: Path, rows) -> None:
    csv_text, md = summary_tables(rows)
    (root / "summary.csv").write_text(csv_text)
    (root / "summary.md").write_text(md)


def render_experiment(root: Path, rows) -> list:
    seed = median_seed(rows)
    paths = [plotting.trajectories({f"{rows[0].method} seed {seed}": EpisodeLog.from_csv(root / str(seed) / "episode_0.csv")},
                                   root / "trajectories.png", title=rows[0].method)]
    if rows[0].solver == SOLVER_LABEL["ddpg"]:
        curves = {f"seed {r.seed}": _read_curve(root / str(r.seed) / "curve.csv") for r in rows}
        paths.append(plotting.learning_curves(curves, root / "learning_curve.png"))
    else:
        with open(root / str(seed) / "curve.csv", newline="") as fh:
            costs = [float(rec["cost"]) for rec in csv.DictReader(fh)]
        paths.append(plotting.cost_curve(costs, root / "cost_curve.png"))
    return paths


def load_experiment(root) -> list:
    root = Path(root)
    path = root / "summary.csv"
    if not path.exists():
        raise UsageError(f"{root} has no summary.csv; run the experiment first")
    return read_rows(path)


def report(roots: Iterable, out) -> dict:
    """Compare finished experiments; writes tables and figures into ``out``."""
    roots = [Path(r) for r in roots]
    sets = [load_experiment(r) for r in roots]
    table_csv, table_md, ratios = compare(sets)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(table_csv)
    (out / "compare.md").write_text(table_md)
    (out / "ratios.csv").write_text(ratios)
    logs, curves = {}, {}
    for root, rows in zip(roots, sets):
        seed = median_seed(rows)
        logs[rows[0].method] = EpisodeLog.from_csv(root / str(seed) / "episode_0.csv")
        if rows[0].solver == SOLVER_LABEL["ddpg"]:
            curves[rows[0].method] = _read_curve(root / str(seed) / "curve.csv")
    plotting.trajectories(logs, out / "trajectories.png", title=f"{sets[0][0].plant}: median-seed evaluation")
    plotting.tail_errors(logs, out / "tail_errors.png")
    if curves:
        plotting.learning_curves(curves, out / "learning_curves.png")
    return {"csv": table_csv, "md": table_md, "ratios": ratios, "out": out}


def spec_for_method(text: str, method: str, source: str = "<config>", name: Optional[str] = None) -> ExperimentSpec:
    """Re-parse a config with its method (and name) swapped, keeping other overrides."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not cp.has_section("experiment"):
        cp.add_section("experiment")
    plant = cp.get("experiment", "plant", fallback="acc")
    cp.set("experiment", "method", method)
    cp.set("experiment", "name", name or f"{plant}-{method}")
    buf = io.StringIO()
    cp.write(buf)
    return parse_config(buf.getvalue(), source)


def sweep(text: str, methods: Sequence[str] = tuple(METHODS), source: str = "<config>",
          progress: Optional[Callable] = None, overrides: Optional[Callable] = None) -> dict:
    """Run each method on the plant of ``text`` and compare them."""
    specs = [spec_for_method(text, m, source) for m in methods]
    if overrides is not None:
        specs = [overrides(s) for s in specs]
    for s in specs:
        run(s, progress)
    out = Path(specs[0].out) / f"{specs[0].plant}-compare"
    return report([experiment_dir(s) for s in specs], out)


def as_dicts(rows) -> list:
    return [asdict(r) for r in rows]
