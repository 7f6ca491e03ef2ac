"""Experiment configuration: INI text <-> ExperimentSpec.

Sections and keys (all optional; unset plant values take the reference
defaults for the chosen plant)::

    [experiment]  name, plant (acc|lane), method, seeds, out
    [plant]       acc: h, tau, u_max, u_min
                  lane: m, Iz, kf, kr, lf, lr, tau,
                        delta_max_deg, delta_min_deg (or *_rad)
    [env]         dt, episode_len, initial_state, observe_integral,
                  truncate_factor, init_jitter, obs_scale
    [reward]      err_nmax, c_nmax, w1, w2, w3, w4, t_threshold, kappa_a
    [agent]       any AgentConfig field
    [agent.<method>]  AgentConfig fields applied only when <method> is run
    [baseline]    any BaselineConfig field

Steering angles are read in degrees unless given with a ``_rad`` suffix.
``serialize`` always writes radians so that a round trip is exact.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

from .baseline import BaselineConfig
from .ddpg import AgentConfig
from .env import ACC, LANE, EnvConfig, acc_config, lane_config
from .errors import ConfigError
from .plants import AccParams, LaneParams
from .rewards import RewardKind, RewardWeights

# method label -> (solver, reward kind)
METHODS = {
    "IPO-qua": ("baseline", RewardKind.QUADRATIC),
    "DDPG-qua": ("ddpg", RewardKind.QUADRATIC),
    "DDPG-qua-pi1": ("ddpg", RewardKind.PI_METHOD1),
    "DDPG-qua-pi2": ("ddpg", RewardKind.PI_METHOD2),
    "IPO-abs": ("baseline", RewardKind.ABSOLUTE),
    "DDPG-abs": ("ddpg", RewardKind.ABSOLUTE),
}
SOLVER_LABEL = {"baseline": "baseline (gradient)", "ddpg": "DDPG"}
DEFAULT_SEEDS = (1, 2, 3)

_ACC_PLANT_KEYS = ("h", "tau", "u_max", "u_min")
_LANE_PLANT_KEYS = ("m", "Iz", "kf", "kr", "lf", "lr", "tau")
_ANGLE_KEYS = ("delta_max", "delta_min")
_ENV_KEYS = ("dt", "episode_len", "initial_state", "observe_integral", "truncate_factor", "init_jitter", "obs_scale")
_REWARD_KEYS = ("err_nmax", "c_nmax", "w1", "w2", "w3", "w4", "t_threshold", "kappa_a")
_UNSET = object()
_SECTIONS = ("experiment", "plant", "env", "reward", "agent", "baseline")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    env: EnvConfig
    method: str = "DDPG-qua"
    agent: Optional[AgentConfig] = None
    baseline: Optional[BaselineConfig] = None
    seeds: tuple = DEFAULT_SEEDS
    out: str = "runs"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not re.fullmatch(r"[A-Za-z0-9_.+-]+", self.name):
            raise ConfigError(f"experiment name {self.name!r} must be a plain file name")
        if self.env.reward.kind != self.kind:
            raise ConfigError(f"method {self.method} needs reward {self.kind.value}, env has {self.env.reward.kind.value}")

    @property
    def solver(self) -> str:
        return METHODS[self.method][0]

    @property
    def kind(self) -> RewardKind:
        return METHODS[self.method][1]

    @property
    def plant(self) -> str:
        return self.env.plant


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    """1-based line of a section header or a key inside it (0 if not found)."""
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if k.lower() == key.lower():
                return no
    return 0


class _Reader:
    """Typed access to one parsed file with key/line diagnostics."""

    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        # keep key case: Iz and iz must not collide silently
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        self.cp.optionxform = str
        try:
            self.cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None

    def where(self, section, key=None):
        line = _line_of(self.text, section, key)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def check_keys(self, section: str, allowed) -> None:
        if not self.cp.has_section(section):
            return
        for key in self.cp[section]:
            if key not in allowed:
                hint = ", ".join(sorted(allowed)) or "(none)"
                raise ConfigError(f"{self.where(section, key)}: unknown key (allowed: {hint})")

    def get(self, section, key, conv, default=None):
        if not self.cp.has_option(section, key):
            return default
        raw = self.cp.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.where(section, key)}: bad value {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(raw: str) -> tuple:
    return tuple(float(x) for x in raw.split(",") if x.strip())


def _ints(raw: str) -> tuple:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _optional_float(raw: str):
    return None if raw.lower() in ("none", "") else float(raw)


def _converter(ftype, default):
    if ftype in (bool, "bool"):
        return _bool
    if ftype in (int, "int"):
        return int
    if ftype in (float, "float"):
        return float
    if ftype in (Optional[float], "Optional[float]"):
        return _optional_float
    if isinstance(default, tuple):
        return _ints
    return str


def _dataclass_section(r: _Reader, section: str, cls, override: Optional[str] = None):
    """Build ``cls`` from ``section``; keys in the ``override`` section win."""
    specs = {f.name: f for f in fields(cls)}
    r.check_keys(section, specs)
    kw = {}
    for name, f in specs.items():
        conv = _converter(f.type, f.default)
        val = r.get(section, name, conv)
        if override is not None:
            val = r.get(override, name, conv, val)
        if val is not None:
            kw[name] = val
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        where = override if override is not None and r.cp.has_section(override) else section
        raise ConfigError(f"{r.where(where)}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    r = _Reader(text, source)
    agent_specs = {f.name for f in fields(AgentConfig)}
    for sec in r.cp.sections():
        if sec.startswith("agent."):
            if sec[len("agent."):] not in METHODS:
                raise ConfigError(f"{r.where(sec)}: unknown method in section name (choose from {', '.join(METHODS)})")
            r.check_keys(sec, agent_specs)
        elif sec not in _SECTIONS:
            raise ConfigError(f"{r.where(sec)}: unknown section (allowed: {', '.join(_SECTIONS)}, agent.<method>)")

    r.check_keys("experiment", ("name", "plant", "method", "seeds", "out"))
    plant = r.get("experiment", "plant", str, ACC).lower()
    if plant not in (ACC, LANE):
        raise ConfigError(f"{r.where('experiment', 'plant')}: plant must be acc or lane, got {plant!r}")
    method = r.get("experiment", "method", str, "DDPG-qua")
    if method not in METHODS:
        raise ConfigError(f"{r.where('experiment', 'method')}: unknown method {method!r} (choose from {', '.join(METHODS)})")
    solver, kind = METHODS[method]
    name = r.get("experiment", "name", str, f"{plant}-{method}")
    seeds = r.get("experiment", "seeds", _ints, DEFAULT_SEEDS)
    out = r.get("experiment", "out", str, "runs")

    # plant parameters
    if plant == ACC:
        r.check_keys("plant", _ACC_PLANT_KEYS)
        kw = {k: r.get("plant", k, float) for k in _ACC_PLANT_KEYS}
        cls = AccParams
    else:
        angle_keys = [a + s for a in _ANGLE_KEYS for s in ("_deg", "_rad")]
        r.check_keys("plant", _LANE_PLANT_KEYS + tuple(angle_keys))
        kw = {k: r.get("plant", k, float) for k in _LANE_PLANT_KEYS}
        for a in _ANGLE_KEYS:
            deg = r.get("plant", a + "_deg", float)
            rad = r.get("plant", a + "_rad", float)
            if deg is not None and rad is not None:
                raise ConfigError(f"{r.where('plant', a + '_rad')}: give {a} in degrees or radians, not both")
            kw[a] = rad if rad is not None else (math.radians(deg) if deg is not None else None)
        cls = LaneParams
    try:
        params = cls(**{k: v for k, v in kw.items() if v is not None})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{r.where('plant')}: {exc}") from None

    # reward
    r.check_keys("reward", _REWARD_KEYS)
    factory = acc_config if plant == ACC else lane_config
    base = factory(kind, params=params)
    rw = base.reward
    w = rw.weights
    try:
        weights = RewardWeights(*(r.get("reward", k, float, getattr(w, k)) for k in ("w1", "w2", "w3", "w4")))
        normalizers = replace(
            rw.normalizers,
            err_nmax=r.get("reward", "err_nmax", float, rw.normalizers.err_nmax),
            c_nmax=r.get("reward", "c_nmax", float, rw.normalizers.c_nmax),
        )
        reward = replace(
            rw,
            weights=weights,
            normalizers=normalizers,
            t_threshold=r.get("reward", "t_threshold", int, rw.t_threshold),
            kappa_a=r.get("reward", "kappa_a", float, rw.kappa_a),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{r.where('reward')}: {exc}") from None

    # env
    r.check_keys("env", _ENV_KEYS)
    env_kw = dict(
        dt=r.get("env", "dt", float),
        episode_len=r.get("env", "episode_len", int),
        initial_state=r.get("env", "initial_state", _floats),
        observe_integral=r.get("env", "observe_integral", _bool),
        truncate_factor=r.get("env", "truncate_factor", _optional_float, _UNSET),
        init_jitter=r.get("env", "init_jitter", float),
        obs_scale=r.get("env", "obs_scale", _floats),
    )
    env_kw = {k: v for k, v in env_kw.items() if v is not None and v is not _UNSET}
    try:
        env = factory(kind, params=params, reward=reward, **env_kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{r.where('env')}: {exc}") from None

    agent = _dataclass_section(r, "agent", AgentConfig, f"agent.{method}")
    bl = _dataclass_section(r, "baseline", BaselineConfig)
    return ExperimentSpec(name, env, method, agent, bl, seeds, out)


def load_config(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    return parse_config(path.read_text(), str(path))


def default_spec(plant: str = ACC, method: str = "DDPG-qua", **experiment) -> ExperimentSpec:
    """Spec with reference defaults, as produced by an otherwise empty config."""
    lines = ["[experiment]", f"plant = {plant}", f"method = {method}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in experiment.items()]
    return parse_config("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def serialize(spec: ExperimentSpec) -> str:
    """Canonical INI text; ``parse_config(serialize(s)) == s``."""
    env, rw = spec.env, spec.env.reward
    out = ["[experiment]"]
    out += [f"name = {spec.name}", f"plant = {env.plant}", f"method = {spec.method}"]
    out += [f"seeds = {_fmt(tuple(spec.seeds))}", f"out = {spec.out}", "", "[plant]"]
    p = env.params
    if env.plant == ACC:
        out += [f"{k} = {_fmt(float(getattr(p, k)))}" for k in _ACC_PLANT_KEYS]
    else:
        out += [f"{k} = {_fmt(float(getattr(p, k)))}" for k in _LANE_PLANT_KEYS]
        out += [f"{a}_rad = {_fmt(float(getattr(p, a)))}" for a in _ANGLE_KEYS]
    out += ["", "[env]"]
    out += [
        f"dt = {_fmt(float(env.dt))}",
        f"episode_len = {env.episode_len}",
        f"initial_state = {_fmt(tuple(float(x) for x in env.initial_state))}",
        f"observe_integral = {_fmt(env.observe_integral)}",
        f"truncate_factor = {_fmt(env.truncate_factor)}",
        f"init_jitter = {_fmt(float(env.init_jitter))}",
        f"obs_scale = {_fmt(tuple(float(x) for x in env.obs_scale))}",
    ]
    out += ["", "[reward]"]
    out += [
        f"err_nmax = {_fmt(float(rw.normalizers.err_nmax))}",
        f"c_nmax = {_fmt(float(rw.normalizers.c_nmax))}",
    ]
    out += [f"{k} = {_fmt(float(getattr(rw.weights, k)))}" for k in ("w1", "w2", "w3", "w4")]
    out += [f"t_threshold = {rw.t_threshold}", f"kappa_a = {_fmt(float(rw.kappa_a))}"]
    for section, obj in (("agent", spec.agent), ("baseline", spec.baseline)):
        if obj is None:
            continue
        out += ["", f"[{section}]"]
        out += [f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj)]
    return "\n".join(out) + "\n"


def with_seeds(spec: ExperimentSpec, seeds) -> ExperimentSpec:
    return dataclasses.replace(spec, seeds=tuple(seeds))
