"""Client-side fuzzy decision making.

The client agent turns an offer into four crisp ratios, fuzzifies them,
evaluates a Mamdani rule base (min for AND, clipping for implication, max
for aggregation) and defuzzifies the aggregate by its centroid to obtain a
tendency score in ``[0, 100]``. The offer is acceptable when the score
reaches the threshold.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .exceptions import DegenerateTriangleError, NoRuleFiredWarning
from .tariff import RESOURCES, Tariff

INPUT_VARIABLES = ("VUPR", "RUPR", "SUPR", "TPR")
UNIT_LABELS = ("cheap", "medium", "expensive")
# TPR labels name the level of the current total price, so "high" sits at
# small ratios and "low" at ratios near 1.
TOTAL_LABELS = ("high", "medium", "low")
TENDENCY_LABELS = ("low", "medium", "high")
OUTPUT_UNIVERSE = (0.0, 100.0)


class CrispInputs(NamedTuple):
    vupr: float
    rupr: float
    supr: float
    tpr: float


@dataclass(frozen=True)
class Triangular:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.a <= self.b <= self.c:
            raise ValueError(f"triangle breakpoints must satisfy a <= b <= c, got {self.params}")

    @property
    def params(self):
        return (self.a, self.b, self.c)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.params
        left = np.ones_like(x) if b == a else (x - a) / (b - a)
        right = np.ones_like(x) if c == b else (c - x) / (c - b)
        y = np.where(x <= b, left, right)
        y = np.where((x < a) | (x > c), 0.0, y)
        y = np.clip(y, 0.0, 1.0)
        return float(y) if y.ndim == 0 else y

    def to_dict(self):
        return {"tri": list(self.params)}


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("gaussian sigma must be positive")

    @property
    def params(self):
        return (self.mean, self.sigma)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        y = np.exp(-((x - self.mean) ** 2) / (2.0 * self.sigma**2))
        return float(y) if y.ndim == 0 else y

    def to_dict(self):
        return {"gauss": list(self.params)}


def to_gaussian(tri: Triangular) -> Gaussian:
    """Convert a triangle to a Gaussian with the 3-sigma rule (m=b, sigma=(c-a)/6)."""
    if tri.a == tri.c:
        raise DegenerateTriangleError(f"cannot convert zero-width triangle {tri.params}")
    return Gaussian(tri.b, (tri.c - tri.a) / 6.0)


def fuzzify(mf, x):
    """Membership degree of ``x`` under ``mf``."""
    return mf(x)


def _mf_from_dict(d):
    if "tri" in d:
        return Triangular(*map(float, d["tri"]))
    if "gauss" in d:
        return Gaussian(*map(float, d["gauss"]))
    raise ValueError(f"unknown membership function spec: {d!r}")


@dataclass(frozen=True)
class FuzzyRule:
    """``if`` clauses keyed by input variable; absent variables are wildcards."""

    antecedent: tuple
    consequent: str

    def __post_init__(self):
        ante = tuple(sorted(dict(self.antecedent).items()))
        if not ante:
            raise ValueError("a rule needs at least one antecedent")
        unknown = {v for v, _ in ante} - set(INPUT_VARIABLES)
        if unknown:
            raise ValueError(f"unknown input variables in rule: {sorted(unknown)}")
        object.__setattr__(self, "antecedent", ante)

    @classmethod
    def make(cls, consequent, **clauses):
        return cls(tuple(clauses.items()), consequent)

    def to_dict(self):
        return {"if": dict(self.antecedent), "then": self.consequent}


SEVEN_RULES = (
    FuzzyRule.make("low", TPR="high"),
    FuzzyRule.make("medium", TPR="medium"),
    FuzzyRule.make("high", TPR="low"),
    FuzzyRule.make("high", VUPR="cheap", RUPR="cheap", SUPR="cheap"),
    FuzzyRule.make("medium", VUPR="expensive"),
    FuzzyRule.make("medium", RUPR="expensive"),
    FuzzyRule.make("medium", SUPR="expensive"),
)

# Triangular breakpoints found by ``experiments.calibrate_membership`` with a
# monotonicity penalty. They reproduce the reference (50.37), worst-case
# (14.78) and best-case (61.63) anchor scores. The output sets are shaped so
# the score never drops when a ratio gets cheaper: "medium" nests under
# "low" at the bottom of the universe and "high" is symmetric.
CALIBRATED_PARAMS = {
    "UPR": {
        "cheap": (0.2, 0.2, 0.6),
        "medium": (0.4, 0.625, 0.85),
        "expensive": (0.4, 1.0, 1.0),
    },
    "TPR": {
        "high": (0.0, 0.0, 0.85),
        "medium": (0.0, 0.0, 0.3),
        "low": (0.2, 1.0, 1.0),
    },
    "tendency": {
        "low": (0.0, 0.0, 44.4),
        "medium": (0.0, 0.0, 6.25),
        "high": (48.0, 61.63, 75.26),
    },
}


@dataclass(frozen=True)
class FuzzySystem:
    """Membership functions, rule base and defuzzification settings.

    ``unit_ratio`` is shared by VUPR, RUPR and SUPR. Instances are
    immutable; :meth:`score` is pure.
    """

    unit_ratio: Mapping
    total_ratio: Mapping
    tendency: Mapping
    rules: tuple = SEVEN_RULES
    resolution: float = 0.1
    threshold: float = 50.0
    _grid: np.ndarray = field(init=False, repr=False, compare=False)
    _out: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        for name, mfs, labels in (
            ("UPR", self.unit_ratio, UNIT_LABELS),
            ("TPR", self.total_ratio, TOTAL_LABELS),
            ("tendency", self.tendency, TENDENCY_LABELS),
        ):
            if set(mfs) != set(labels):
                raise ValueError(f"{name} labels must be {labels}, got {sorted(mfs)}")
        kinds = {type(mf) for m in (self.unit_ratio, self.total_ratio, self.tendency) for mf in m.values()}
        if len(kinds) != 1:
            raise ValueError("membership functions of one system must all share a type")
        for rule in self.rules:
            if rule.consequent not in TENDENCY_LABELS:
                raise ValueError(f"unknown tendency label {rule.consequent!r}")
            for var, label in rule.antecedent:
                pool = self.total_ratio if var == "TPR" else self.unit_ratio
                if label not in pool:
                    raise ValueError(f"rule references unknown label {var}={label!r}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        lo, hi = OUTPUT_UNIVERSE
        n = int(round((hi - lo) / self.resolution)) + 1
        grid = np.linspace(lo, hi, n)
        out = np.vstack([np.asarray(self.tendency[label](grid)) for label in TENDENCY_LABELS])
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_out", out)

    @property
    def mf_kind(self) -> str:
        mf = next(iter(self.unit_ratio.values()))
        return "gaussian" if isinstance(mf, Gaussian) else "triangular"

    # -- inference ----------------------------------------------------------

    def firing_strengths(self, inputs) -> np.ndarray:
        """Per-tendency-label activation for one or many input quadruples.

        Returns an array of shape ``(n, 3)`` ordered as ``TENDENCY_LABELS``.
        """
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        columns = dict(zip(INPUT_VARIABLES, x.T))
        degrees = {}
        strengths = np.zeros((x.shape[0], len(TENDENCY_LABELS)))
        for rule in self.rules:
            s = None
            for var, label in rule.antecedent:
                key = (var, label)
                if key not in degrees:
                    pool = self.total_ratio if var == "TPR" else self.unit_ratio
                    degrees[key] = np.atleast_1d(pool[label](columns[var]))
                s = degrees[key] if s is None else np.minimum(s, degrees[key])
            j = TENDENCY_LABELS.index(rule.consequent)
            strengths[:, j] = np.maximum(strengths[:, j], s)
        return strengths

    def aggregate(self, inputs) -> np.ndarray:
        strengths = self.firing_strengths(inputs)
        clipped = np.minimum(self._out[None, :, :], strengths[:, :, None])
        return clipped.max(axis=1)

    def scores(self, inputs) -> np.ndarray:
        """Vectorised tendency scores; rows without any fired rule score 50."""
        agg = self.aggregate(inputs)
        mass = agg.sum(axis=1)
        dead = mass <= 0.0
        if dead.any():
            warnings.warn("no rule fired; score set to the output midpoint", NoRuleFiredWarning, stacklevel=2)
        safe = np.where(dead, 1.0, mass)
        # row-wise sums keep each score bit-identical whatever the batch size
        centroid = (agg * self._grid).sum(axis=1) / safe
        return np.where(dead, 0.5 * sum(OUTPUT_UNIVERSE), centroid)

    def score(self, inputs) -> float:
        return float(self.scores([tuple(inputs)])[0])

    def accepts(self, inputs) -> bool:
        return accept(self.score(inputs), self.threshold)

    # -- construction -------------------------------------------------------

    def to_gaussian(self) -> "FuzzySystem":
        """Same system with every triangle replaced by its 3-sigma Gaussian."""
        if self.mf_kind == "gaussian":
            return self

        def conv(m):
            return {k: to_gaussian(v) for k, v in m.items()}

        return FuzzySystem(
            conv(self.unit_ratio),
            conv(self.total_ratio),
            conv(self.tendency),
            self.rules,
            self.resolution,
            self.threshold,
        )

    def with_rules(self, rules) -> "FuzzySystem":
        return FuzzySystem(self.unit_ratio, self.total_ratio, self.tendency, tuple(rules), self.resolution, self.threshold)

    def with_threshold(self, threshold) -> "FuzzySystem":
        return FuzzySystem(self.unit_ratio, self.total_ratio, self.tendency, self.rules, self.resolution, float(threshold))

    @classmethod
    def from_params(cls, params=None, rules=SEVEN_RULES, mf_kind="triangular", **kwargs) -> "FuzzySystem":
        """Build from nested ``{variable: {label: (a, b, c)}}`` triangle breakpoints."""
        params = CALIBRATED_PARAMS if params is None else params

        def tri(m):
            return {k: Triangular(*map(float, v)) for k, v in m.items()}

        system = cls(tri(params["UPR"]), tri(params["TPR"]), tri(params["tendency"]), rules, **kwargs)
        return system.to_gaussian() if mf_kind == "gaussian" else system

    def params(self) -> dict:
        return {
            "UPR": {k: mf.params for k, mf in self.unit_ratio.items()},
            "TPR": {k: mf.params for k, mf in self.total_ratio.items()},
            "tendency": {k: mf.params for k, mf in self.tendency.items()},
        }

    def to_dict(self) -> dict:
        def dump(m):
            return {k: mf.to_dict() for k, mf in m.items()}

        return {
            "variables": {
                "UPR": dump(self.unit_ratio),
                "TPR": dump(self.total_ratio),
                "tendency": dump(self.tendency),
            },
            "rules": [r.to_dict() for r in self.rules],
            "threshold": self.threshold,
            "resolution": self.resolution,
            "mf_kind": self.mf_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FuzzySystem":
        """Load the rule-set/membership document.

        When ``mf_kind`` is ``"gaussian"`` and the variables are given as
        triangles, the Gaussians are derived with :func:`to_gaussian`.
        """
        defaults = default_system()
        variables = d.get("variables")
        if variables:
            maps = [{k: _mf_from_dict(v) for k, v in variables[name].items()} for name in ("UPR", "TPR", "tendency")]
        else:
            maps = [defaults.unit_ratio, defaults.total_ratio, defaults.tendency]
        rules = d.get("rules")
        rules = SEVEN_RULES if rules is None else tuple(FuzzyRule(tuple(r["if"].items()), r["then"]) for r in rules)
        system = cls(
            *maps,
            rules=rules,
            resolution=float(d.get("resolution", 0.1)),
            threshold=float(d.get("threshold", 50.0)),
        )
        kind = d.get("mf_kind", system.mf_kind)
        if kind not in ("triangular", "gaussian"):
            raise ValueError(f"mf_kind must be 'triangular' or 'gaussian', got {kind!r}")
        if kind == "gaussian":
            system = system.to_gaussian()
        elif system.mf_kind != kind:
            raise ValueError("gaussian membership functions cannot be turned back into triangles")
        return system

    @classmethod
    def from_json(cls, path) -> "FuzzySystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_system(mf_kind="triangular") -> FuzzySystem:
    """Calibrated 7-rule system with threshold 50."""
    return FuzzySystem.from_params(CALIBRATED_PARAMS, SEVEN_RULES, mf_kind=mf_kind)


def crisp_inputs(original, offer, tariff: Tariff) -> CrispInputs:
    """Unit-price ratios (current/original) and total-price ratio (original/current).

    Under flat pricing an enlarged offer can cost less than the original;
    the total ratio is then capped at 1, the edge of its universe.
    """
    ratios = [tariff.unit_price(k, offer[k]) / tariff.unit_price(k, original[k]) for k in RESOURCES]
    tpr = min(1.0, tariff.total_price(original) / tariff.total_price(offer))
    return CrispInputs(*ratios, tpr)


def tendency_score(system: FuzzySystem, inputs) -> float:
    return system.score(inputs)


def accept(score: float, threshold: float) -> bool:
    """Inclusive comparison so the reference point itself passes."""
    return score >= threshold
