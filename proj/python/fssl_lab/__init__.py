"""Python front end for the fssl_lab simulator."""

import csv
import io
import json

from ._fssl import (
    FsslError,
    cosine_sim,
    default_config,
    dirichlet_chi2,
    foolsgold,
    gradcheck,
    krum,
)
from ._fssl import load_config as _load_config
from ._fssl import run as _run

__all__ = [
    "FsslError",
    "cosine_sim",
    "default_config",
    "dirichlet_chi2",
    "foolsgold",
    "gradcheck",
    "krum",
    "load_config",
    "run",
]


def load_config(path):
    """Resolved config of a JSON file, as a dict."""
    return json.loads(_load_config(str(path)))


def run(config, overrides=(), threads=1):
    """Run one experiment. `config` is a dict or a path to a config file.

    Returns (rows, summary): the per-round metrics as a list of dicts with
    numeric values, and the summary dict.
    """
    if not isinstance(config, dict):
        config = load_config(config)
    text, summary = _run(json.dumps(config), list(overrides), threads)
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({k: _number(v) for k, v in row.items()})
    return rows, json.loads(summary)


def _number(v):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v
