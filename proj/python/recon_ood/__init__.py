"""Reconstruction-based out-of-distribution detection on synthetic images."""

import json as _json

from ._core import (
    CLASS_NAMES,
    OOD_FAMILIES,
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    Encoder,
    IoError,
    MissingStageError,
    NoiseSchedule,
    ParseError,
    TrainingFailure,
    auroc,
    calibrate_threshold,
    forward_noise,
    fpr_at_tpr,
    is_ood,
    pr_curve,
    render_class,
    render_ood,
    sha256_hex,
)
from . import _core


def default_config():
    """Default run configuration as a dict."""
    return _json.loads(_core.default_config_json())


def _dump(config):
    return _json.dumps(config if config is not None else default_config())


def config_digest(config=None):
    return _core.config_digest(_dump(config))


def run_dir(config=None):
    return _core.run_dir(_dump(config))


def gen_data(config=None):
    return _core.gen_data(_dump(config))


def train(config=None):
    return _core.train(_dump(config))


def evaluate(config=None):
    return _core.evaluate(_dump(config))


def run_all(config=None):
    return _core.run_all(_dump(config))


def report(report_json, out_dir):
    return _core.report(report_json, out_dir)


def load_report(config=None):
    with open(run_dir(config) / "report.json", encoding="utf-8") as fh:
        return _json.load(fh)
