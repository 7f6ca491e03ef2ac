"""Command line: ``python -m pirl <verb> [options]``.

Verbs
  train     DDPG on the configured plant and reward (one run per seed)
  baseline  open-loop gradient baseline on the configured cost
  eval      roll out a saved checkpoint without noise
  compare   tables and figures across finished experiment directories
  sweep     all six methods on one plant, then compare
  demo      tiny end-to-end smoke suite

Delimited results go to stdout; progress goes to stderr unless ``--quiet``.
Exit status: 0 success, 2 configuration or usage error, 3 numerical failure,
1 anything else.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness, mlp
from .config import METHODS, ExperimentSpec, parse_config
from .ddpg import evaluate
from .env import rollout
from .errors import ConfigError, DivergenceError, DomainError, UsageError

log = logging.getLogger("pirl")

DEMO_CONFIG = """\
[experiment]
plant = acc
seeds = 1

[env]
episode_len = 200

[reward]
t_threshold = 60

[agent]
episodes = 4
hidden = 16, 16
warmup_steps = 100
batch_size = 16

[baseline]
iterations = 60
"""


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="INI experiment file")
    p.add_argument("--seed", type=int, action="append", default=d(None),
                   help="seed to run (repeatable); overrides the config")
    p.add_argument("--out", default=d(None), help="output root (overrides the config)")
    p.add_argument("--quiet", action="store_true", default=d(False), help="no progress output")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pirl", description="Integral-reward control experiments.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    for name, help_ in (("train", "train DDPG"), ("baseline", "run the gradient baseline")):
        sp = verb(name, help_)
        sp.add_argument("--plant", choices=("acc", "lane"), help="plant when no config is given")
        sp.add_argument("--method", choices=list(METHODS), help="method label (overrides the config)")
        sp.add_argument("--name", help="experiment name (overrides the config)")
        sp.add_argument("--no-figures", action="store_true", help="skip PNG output")

    sp = verb("eval", "evaluate a checkpoint")
    sp.add_argument("checkpoint", help="policy or control-sequence checkpoint")
    sp.add_argument("--plant", choices=("acc", "lane"))
    sp.add_argument("--method", choices=list(METHODS))
    sp.add_argument("--csv", help="write the evaluation episode here")

    sp = verb("compare", "compare finished experiments")
    sp.add_argument("runs", nargs="+", help="experiment directories (each with summary.csv)")

    sp = verb("sweep", "run every method on one plant and compare")
    sp.add_argument("--plant", choices=("acc", "lane"))
    sp.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))

    verb("demo", "tiny smoke suite")
    return p


def _config_text(args, **experiment) -> tuple[str, str]:
    """Config file text (or empty) with ``[experiment]`` keys set when not None."""
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {args.config!r} not found")
        text, source = path.read_text(), str(path)
    else:
        text, source = "", "<defaults>"
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not cp.has_section("experiment"):
        cp.add_section("experiment")
    for key, value in experiment.items():
        if callable(value):
            value = value(cp["experiment"].get(key))
        if value is not None:
            cp.set("experiment", key, value)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue(), source


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    kw = {}
    if args.seed:
        kw["seeds"] = tuple(args.seed)
    if args.out:
        kw["out"] = args.out
    if getattr(args, "name", None):
        kw["name"] = args.name
    return dataclasses.replace(spec, **kw) if kw else spec


def _resolve_spec(args, default_method: str) -> ExperimentSpec:
    text, source = _config_text(
        args,
        plant=getattr(args, "plant", None),
        method=lambda cur: getattr(args, "method", None) or cur or default_method,
    )
    return _apply_overrides(parse_config(text, source), args)


def _print_rows(rows) -> None:
    out = sys.stdout
    out.write(",".join(harness.ROW_FIELDS) + "\n")
    for r in rows:
        out.write(",".join(harness._fmt(getattr(r, f)) for f in harness.ROW_FIELDS) + "\n")


def _progress(quiet: bool):
    if quiet:
        return None

    def show(row):
        log.info("episode %d return %.4g steady-state error %.3g", row.episode, row.undiscounted_return,
                 row.steady_state_error)

    return show


def cmd_run(args, solver: str) -> int:
    default = "DDPG-qua" if solver == "ddpg" else "IPO-qua"
    spec = _resolve_spec(args, default)
    if spec.solver != solver:
        raise UsageError(f"method {spec.method} is not a {args.verb} method")
    rows = harness.run(spec, _progress(args.quiet), figures=not args.no_figures)
    _print_rows(rows)
    log.info("wrote %s", harness.experiment_dir(spec))
    return 0


def cmd_eval(args) -> int:
    spec = _resolve_spec(args, "DDPG-qua")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"checkpoint {args.checkpoint!r} not found")
    env_cfg = dataclasses.replace(spec.env, seed=spec.seeds[0])
    if harness.is_controls_file(path):
        controls = harness.load_controls(path)
        if len(controls) != env_cfg.episode_len:
            raise UsageError(f"checkpoint holds {len(controls)} controls, episode needs {env_cfg.episode_len}")
        ep = rollout(env_cfg, controls)
    else:
        policy = mlp.MLP.load(path)
        if policy.sizes[0] != env_cfg.obs_dim:
            raise UsageError(f"policy expects {policy.sizes[0]} inputs, {env_cfg.plant} env gives {env_cfg.obs_dim}")
        ep = evaluate(policy, env_cfg)[0][0]
    if args.csv:
        ep.to_csv(args.csv)
    m = harness.metrics_from_log(ep)
    row = harness.ResultRow(spec.method, harness.SOLVER_LABEL[spec.solver], spec.plant, spec.seeds[0], **m)
    _print_rows([row])
    return 0


def cmd_compare(args) -> int:
    out = Path(args.out) if args.out else Path(args.runs[0]).parent / "compare"
    res = harness.report(args.runs, out)
    sys.stdout.write(res["csv"])
    log.info("wrote %s", out)
    return 0


def cmd_sweep(args) -> int:
    text, source = _config_text(args, plant=args.plant)
    res = harness.sweep(text, args.methods, source, _progress(args.quiet),
                        overrides=lambda s: _apply_overrides(s, args))
    sys.stdout.write(res["csv"])
    log.info("wrote %s", res["out"])
    return 0


def cmd_demo(args) -> int:
    text = DEMO_CONFIG
    if args.config:
        raise UsageError("demo uses its own configuration; drop --config")
    out = args.out or "runs-demo"
    res = harness.sweep(text, list(METHODS), "<demo>", None,
                        overrides=lambda s: dataclasses.replace(s, out=out, seeds=tuple(args.seed or (1,))))
    sys.stdout.write(res["csv"])
    log.info("wrote %s", res["out"])
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    handlers = {
        "train": lambda: cmd_run(args, "ddpg"),
        "baseline": lambda: cmd_run(args, "baseline"),
        "eval": lambda: cmd_eval(args),
        "compare": lambda: cmd_compare(args),
        "sweep": lambda: cmd_sweep(args),
        "demo": lambda: cmd_demo(args),
    }
    try:
        return handlers[args.verb]()
    except (ConfigError, UsageError) as exc:
        print(f"pirl {args.verb}: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, DomainError) as exc:
        print(f"pirl {args.verb}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"pirl {args.verb}: {exc}", file=sys.stderr)
        return 1
