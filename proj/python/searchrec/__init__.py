"""Python interface to the searchrec C++ library."""

import json
import os

from ._searchrec import (
    ConsumerPolicy,
    ConvergenceError,
    Error,
    RecState,
    StageError,
    StateSpace,
    ValidationError,
    cluster_sweep,
    enumerate_actions,
    estimate_policy,
    generate_sessions,
    load_policy,
    render_report,
    run_scenarios,
    scenario_names,
    sha256_hex,
    silhouette,
    solve_first_best,
    status_quo_matrix,
    summarize_sessions,
    update_freq,
)
from . import _searchrec

STAGES = ("cluster", "recode", "estimate", "select", "solve", "counterfactual")


def default_config():
    return json.loads(_searchrec._default_config())


def validate_config(config):
    _searchrec._validate_config(json.dumps(config))


def truth_policy(k, horizon, params=None):
    """Utility-based consumer model; calibrated parameters when params is None."""
    return _searchrec._truth_policy(k, horizon, json.dumps(params) if params else "")


def calibrated_params(k):
    return json.loads(_searchrec._calibrated_params(k))


def policy_to_dict(policy):
    return json.loads(policy._to_json())


def policy_from_dict(data):
    return _searchrec._policy_from_json(json.dumps(data))


def run_pipeline(config, out_dir, stages=None, resume=True, rerun_from=None, log=None):
    """Runs pipeline stages into out_dir and returns the manifest as a dict.

    config is a partial configuration merged over the defaults.
    """
    text = _searchrec._run_stages(
        json.dumps(config or {}), os.fspath(out_dir), list(stages or []), resume, rerun_from, log
    )
    return json.loads(text)


def diagonal_matrix(k, diagonal):
    """Status-quo style matrix with `diagonal` on the diagonal and the rest spread evenly."""
    off = (1.0 - diagonal) / (k - 1)
    return [[diagonal if i == j else off for j in range(k)] for i in range(k)]


__all__ = [name for name in dir() if not name.startswith("_")]
