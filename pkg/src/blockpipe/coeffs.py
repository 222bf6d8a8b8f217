"""Load time-model coefficients: a user file or the committed calibration."""
from __future__ import annotations

from importlib import resources

from .timemodel import TimeModel

DEFAULT_RESOURCE = "default_coeffs.json"


def load_model(path: str | None = None) -> TimeModel:
    if path is not None:
        with open(path) as fh:
            return TimeModel.from_json(fh.read())
    ref = resources.files("blockpipe").joinpath("data").joinpath(DEFAULT_RESOURCE)
    return TimeModel.from_json(ref.read_text())
