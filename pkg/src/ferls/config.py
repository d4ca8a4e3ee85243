"""Experiment configuration: a TOML tree merged over built-in defaults.

The resolved tree (defaults + file + command-line overrides) is written next
to every result so a run can be repeated from its output directory alone.
"""
import copy
from pathlib import Path

import tomli
import tomli_w

from .errors import InvalidConfig

DEFAULTS = {
    "experiment": {
        "env": "terrain",  # "vdp" or "terrain"
        "schedule": "0:1.0,20:0.0",
        "model": "fe-rls",
        "seeds": [0],
        "out": "runs/default",
        "dt": 0.1,
    },
    "data": {
        "worlds": [],  # empty: the environment's default training family
        "duration": 300.0,
        "episode_length": 10.0,
        "seed": 0,
        "datasets": [],  # empty: every *.jsonl under <out>/data
    },
    "fe": {"k": 8, "hidden": [64, 64], "epochs": 300, "lr": 3e-3, "lr_final_frac": 0.05,
           "lam": 1e-3, "seed": 0, "batch_size": 256, "quadrature": "rk4", "loss_per_dt": False},
    "node": {"hidden": [64, 64], "epochs": 3000, "lr": 3e-3, "lr_final_frac": 0.05,
             "batch_size": 256, "seed": 0},
    "maml": {"hidden": [64, 64], "epochs": 1000, "lr": 3e-3, "lr_final_frac": 0.05,
             "batch_size": 256, "seed": 0, "inner_steps": 5, "inner_lr": 1e-2,
             "buffer_size": 1, "eval_inner_steps": 5},
    "rls": {"lam": 1e-3, "gamma": 0.99, "q": 1e-4},
    "checkpoints": {"fe": "", "node": "", "maml": ""},  # empty: <out>/<name>.json
    "stream": {"duration": 40.0, "horizon": 15, "kstep": True, "starts": 1},
    "mppi": {"horizon": 25, "num_rollouts": 100, "sigma": 0.5, "temperature": 1.0,
             "control_cost": 0.0, "smoothing_window": 5},
    "autonomy": {"duration": 15.0, "course": "wall", "stop_at_goal": False},
    "bench": {"ks": [4, 8, 16, 32], "n": 5, "updates": 2000, "lengths": [100, 1000, 10000]},
}

WORLD_FAMILIES = {
    "vdp": [0.5, 1.0, 1.5, 2.0, 2.5],
    "terrain": [i / 7 for i in range(8)],
}


def merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise InvalidConfig(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise InvalidConfig(f"{where!r} must be a table")
            out[key] = merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def load(path=None, overrides=None):
    tree = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InvalidConfig(f"config file not found: {p}")
        try:
            tree = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfig(f"{p}: {exc}") from None
    cfg = merge(DEFAULTS, tree)
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        sect, key = dotted.split(".")
        cfg[sect][key] = val
    validate(cfg)
    return cfg


def validate(cfg):
    exp = cfg["experiment"]
    if exp["env"] not in WORLD_FAMILIES:
        raise InvalidConfig(f"experiment.env must be one of {sorted(WORLD_FAMILIES)}")
    if not exp["seeds"]:
        raise InvalidConfig("experiment.seeds must be nonempty")
    if not exp["dt"] > 0:
        raise InvalidConfig("experiment.dt must be positive")
    if cfg["stream"]["horizon"] < 1 or cfg["stream"]["starts"] < 1:
        raise InvalidConfig("stream.horizon and stream.starts must be at least 1")
    if cfg["fe"]["k"] < 1:
        raise InvalidConfig("fe.k must be at least 1")
    if cfg["autonomy"]["course"] not in COURSES:
        raise InvalidConfig(f"autonomy.course must be one of {COURSES}")


COURSES = ("wall", "posts", "open")


def dump(cfg, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(tomli_w.dumps(cfg))


def worlds(cfg):
    return cfg["data"]["worlds"] or WORLD_FAMILIES[cfg["experiment"]["env"]]
