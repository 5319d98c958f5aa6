"""
    Run configuration: one JSON document holding every setting of an
    experiment, resolved against the defaults and written next to the
    outputs it produced.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

from ..agents.stack import StackConfig
from ..agents.training import TrainConfig
from ..gridworld import EnvConfig
from ..oracle import CalibrationConfig
from .verify import VerifyConfig

__all__ = ["RunConfig", "VARIANTS", "load_run_config", "from_dict", "to_dict"]

VARIANTS = ("riiu", "no_meta", "gru", "mlp")


@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment command needs.

    Parameters
    ----------
    env, stack, train, calibrate, verify
        Section configs; their defaults reproduce the reference setup.
    seeds : tuple of int, default (1, 2, 3, 4, 5)
    variant : str, default 'riiu'
        Agent trained by ``train``.
    buffers : tuple of int, default (8, 32, 64)
        Window lengths compared by ``ablate-buffer``.
    bonus_weights : tuple of float, default (0.0, 0.01, 0.02, 0.05)
        Weights compared by ``sweep-bonus``.
    n_jobs : int, default 1
        Parallel seeds (joblib).
    out : str, default 'runs'
    """

    env: EnvConfig = field(default_factory=EnvConfig)
    stack: StackConfig = field(default_factory=StackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibrate: CalibrationConfig = field(default_factory=CalibrationConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    variant: str = "riiu"
    buffers: Tuple[int, ...] = (8, 32, 64)
    bonus_weights: Tuple[float, ...] = (0.0, 0.01, 0.02, 0.05)
    n_jobs: int = 1
    out: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "buffers", tuple(int(b) for b in self.buffers))
        object.__setattr__(self, "bonus_weights", tuple(float(w) for w in self.bonus_weights))
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError("variant must be one of %s, got %r" % (VARIANTS, self.variant))
        if any(b < 2 for b in self.buffers):
            raise ValueError("buffer lengths must be at least 2")
        if any(w < 0 for w in self.bonus_weights):
            raise ValueError("bonus weights must be non-negative")
        if self.n_jobs == 0:
            raise ValueError("n_jobs must be non-zero")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValueError("%s must be a JSON object" % path)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError("unknown key(s) in %s: %s" % (path, ", ".join(unknown)))
    kwargs = {}
    for name, value in data.items():
        default = known[name].default
        if default is dataclasses.MISSING and known[name].default_factory is not dataclasses.MISSING:
            default = known[name].default_factory()
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, "%s.%s" % (path, name))
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError("%s: %s" % (path, exc))


def from_dict(data):
    """Resolve a (possibly partial) nested mapping against the defaults."""
    return _build(RunConfig, data, "config")


def to_dict(cfg):
    """Plain nested mapping of a :class:`RunConfig`, ready for JSON."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def load_run_config(path=None, **overrides):
    """Read a run configuration file and apply command-line overrides.

    Parameters
    ----------
    path : str or pathlib.Path, optional
        JSON file; missing keys take their defaults, unknown keys raise
        ``ValueError``.
    **overrides
        ``seeds``, ``out``, ``n_jobs``, ``variant`` replace top-level values;
        ``episodes`` replaces ``train.episodes``. None values are ignored.

    Returns
    -------
    RunConfig
    """
    data = {}
    if path is not None:
        with open(Path(path)) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValueError("%s is not valid JSON: %s" % (path, exc))
    cfg = from_dict(data)
    top = {k: v for k, v in overrides.items() if k != "episodes" and v is not None}
    if top:
        cfg = dataclasses.replace(cfg, **top)
    if overrides.get("episodes") is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, episodes=overrides["episodes"]))
    return cfg
