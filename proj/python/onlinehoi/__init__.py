"""Online human-object interaction generation and perception.

The compiled core lives in ``onlinehoi._core``; the helpers here accept run
configs as dicts and return reports as dicts.
"""

import json as _json
import os as _os

from . import _core
from ._core import (
    ConfigError,
    DiffusionSchedule,
    Error,
    IndexError,
    InvalidParameter,
    InvalidState,
    NumericalError,
    ShapeError,
    ShortTermMemory,
    discretize,
    div,
    edit_score,
    f1_at_k,
    fid,
    framewise_acc,
    make_schedule,
    ml_consolidate,
    q_sample,
    q_step,
    ssm_kernel,
    ssm_kernel_apply,
    ssm_scan,
)

__version__ = _core.__version__


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def parse_config(config):
    """Validate a run config and return it with every default filled in."""
    return _json.loads(_core.parse_config(_text(config)))


def config_hash(config):
    return _core.config_hash(_text(config))


def train(config, seed, out_dir, resume=None):
    """Train one seed; returns {"losses", "checkpoint", "parameter_count"}."""
    losses, checkpoint, count = _core.train(_text(config), seed, _os.fspath(out_dir), _os.fspath(resume or ""))
    return {"losses": losses, "checkpoint": checkpoint, "parameter_count": count}


def evaluate(config, seed, checkpoint):
    return _json.loads(_core.evaluate(_text(config), seed, _os.fspath(checkpoint)))


def evaluate_ground_truth(config):
    return _json.loads(_core.evaluate_ground_truth(_text(config)))


def datagen(config, out_dir):
    _core.datagen(_text(config), _os.fspath(out_dir))
