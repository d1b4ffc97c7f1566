"""Estimator configuration, JSON round-tripping and a stable digest.

The defaults below are the frozen output of ``drape tune`` on the simulated
settings (see ``tuned.json`` next to this module); they apply whenever a
field is not overridden by a config file or command-line flag.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

from .regression import GBTSpec
from .score import ScoreSpec


def _tuned() -> dict:
    text = resources.files("drape").joinpath("tuned.json").read_text()
    return json.loads(text)


_TUNED = _tuned()


@dataclass(frozen=True)
class EstimatorConfig:
    """Every tunable used by the estimators.

    ``regression`` fits ``E[Y | X, Z]``; ``score`` fits the location–scale
    score of each exposure; ``plr_outcome`` fits ``E[Y | Z]`` for the
    partially linear comparator and ``basis_lambda`` is the lasso penalty of
    the quadratic-basis score.
    """

    regression: GBTSpec = field(default_factory=lambda: GBTSpec(**_TUNED["regression"]))
    score: ScoreSpec = field(default_factory=lambda: _score_spec(_TUNED["score"]))
    plr_outcome: GBTSpec = field(default_factory=lambda: GBTSpec(**_TUNED["plr_outcome"]))
    basis_lambda: float = _TUNED["basis_lambda"]
    folds: int = 5
    tol: float = 2.0
    grid_size: int = 101
    grid_span: float = 5.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        """Build from a possibly partial mapping; missing keys keep defaults."""
        base = cls()
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key, value in d.items():
            if key in ("regression", "plr_outcome"):
                kw[key] = getattr(base, key).replace(**value)
            elif key == "score":
                merged = {**asdict(base.score), **value}
                kw[key] = _score_spec(merged)
            else:
                kw[key] = type(getattr(base, key))(value)
        return replace(base, **kw)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def _score_spec(d: dict) -> ScoreSpec:
    d = dict(d)
    location = d.pop("location", {})
    return ScoreSpec(location=GBTSpec(**location), **d)


def config_digest(obj) -> str:
    """SHA-256 of the canonical JSON encoding, truncated to 16 hex digits."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data
