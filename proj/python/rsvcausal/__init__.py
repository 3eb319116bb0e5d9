"""Treatment effects from experiments with remotely sensed outcome proxies."""

import json as _json

from . import _rsvcausal as _core
from ._rsvcausal import Dataset, RsvError, from_columns, load_csv

__all__ = [
    "Dataset",
    "RsvError",
    "adversarial_oracle",
    "estimate",
    "from_columns",
    "generate",
    "load_csv",
    "relevance",
    "specification",
    "stability",
]


def _dump(config):
    return _json.dumps(config or {})


def generate(**spec):
    """Simulate a dataset. Returns (Dataset, info) where info holds the truth and full labels."""
    data, info = _core.generate(_dump(spec))
    return data, _json.loads(info)


def estimate(data, **config):
    """Cross-fitted estimate of the ATE (LATE in iv mode, ATT in did mode)."""
    return _json.loads(_core.estimate(data, _dump(config)))


def relevance(data, **config):
    return _json.loads(_core.relevance(data, _dump(config)))


def specification(data, rep_a="learned", rep_b="pred_y", **config):
    return _json.loads(_core.specification(data, _dump(config), rep_a, rep_b))


def stability(data, seed=0):
    return _json.loads(_core.stability(data, seed))


def adversarial_oracle(a, b):
    return _json.loads(_core.adversarial_oracle(a, b))
