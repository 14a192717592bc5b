"""Tiered daily rental prices for VCPU, RAM and storage."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .exceptions import OutOfRangeError


class ResourceKind(enum.IntEnum):
    VCPU = 0
    RAM = 1
    STORAGE = 2

    @property
    def key(self) -> str:
        return self.name.lower()


RESOURCES = tuple(ResourceKind)


class Bundle(NamedTuple):
    """Quantities of the three resources (VCPU count, RAM GB, storage GB)."""

    vcpu: int
    ram: int
    storage: int

    def replace(self, kind: ResourceKind, qty: int) -> "Bundle":
        values = list(self)
        values[int(kind)] = qty
        return Bundle(*values)


class PricingMode(str, enum.Enum):
    FLAT = "flat"
    PROGRESSIVE = "progressive"


DEFAULT_TIERS = {
    ResourceKind.VCPU: ((10, 0.2), (30, 0.1), (90, 0.05)),
    ResourceKind.RAM: ((20, 0.1), (60, 0.05), (180, 0.025)),
    ResourceKind.STORAGE: ((100, 0.02), (300, 0.01), (900, 0.005)),
}


def _validate_tiers(kind, tiers):
    if len(tiers) != 3:
        raise ValueError(f"{kind.key}: expected 3 tiers, got {len(tiers)}")
    bounds = [b for b, _ in tiers]
    prices = [p for _, p in tiers]
    if any(b <= 0 for b in bounds) or any(p <= 0 for p in prices):
        raise ValueError(f"{kind.key}: bounds and prices must be positive")
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError(f"{kind.key}: tier bounds must be strictly increasing")
    if any(p2 >= p1 for p1, p2 in zip(prices, prices[1:])):
        raise ValueError(f"{kind.key}: unit prices must be strictly decreasing")


@dataclass(frozen=True)
class Tariff:
    """Three price tiers per resource plus the pricing mode.

    Each tier is ``(upper_bound, unit_price)``; tier ``i`` covers quantities
    in ``(bound[i-1], bound[i]]`` with an implicit lower bound of 0.

    In ``flat`` mode the price of the tier containing the quantity applies
    to every unit. In ``progressive`` mode each unit is charged at the price
    of the tier it falls into, so the unit price is a blend.
    """

    tiers: dict = field(default_factory=lambda: dict(DEFAULT_TIERS))
    mode: PricingMode = PricingMode.FLAT

    def __post_init__(self):
        tiers = {ResourceKind(k): tuple((int(b), float(p)) for b, p in v) for k, v in self.tiers.items()}
        if set(tiers) != set(RESOURCES):
            raise ValueError("tariff must define tiers for vcpu, ram and storage")
        for kind, t in tiers.items():
            _validate_tiers(kind, t)
        object.__setattr__(self, "tiers", tiers)
        object.__setattr__(self, "mode", PricingMode(self.mode))

    def __hash__(self):
        return hash((tuple(self.tiers[k] for k in RESOURCES), self.mode))

    def with_mode(self, mode) -> "Tariff":
        return Tariff(self.tiers, PricingMode(mode))

    def bounds(self, kind: ResourceKind) -> tuple:
        return tuple(b for b, _ in self.tiers[kind])

    def top(self, kind: ResourceKind) -> int:
        return self.tiers[kind][-1][0]

    def tier_of(self, kind: ResourceKind, qty) -> int:
        """Return the 1-based tier index whose range contains ``qty``."""
        kind = ResourceKind(kind)
        if qty < 1 or qty > self.top(kind):
            raise OutOfRangeError(f"{kind.key} quantity {qty} outside [1, {self.top(kind)}]")
        for index, (bound, _) in enumerate(self.tiers[kind], start=1):
            if qty <= bound:
                return index
        raise AssertionError("unreachable")  # pragma: no cover

    def unit_price(self, kind: ResourceKind, qty) -> float:
        kind = ResourceKind(kind)
        tier = self.tier_of(kind, qty)
        tiers = self.tiers[kind]
        if self.mode is PricingMode.FLAT:
            return tiers[tier - 1][1]
        return self._progressive_cost(kind, qty) / qty

    def _progressive_cost(self, kind, qty) -> float:
        cost = 0.0
        lower = 0
        for bound, price in self.tiers[kind]:
            if qty <= lower:
                break
            cost += (min(qty, bound) - lower) * price
            lower = bound
        return cost

    def cost(self, kind: ResourceKind, qty) -> float:
        """Price of ``qty`` units of one resource."""
        return qty * self.unit_price(kind, qty)

    def total_price(self, bundle) -> float:
        return sum(self.cost(kind, bundle[kind]) for kind in RESOURCES)

    def check_bundle(self, bundle) -> Bundle:
        """Validate quantities and return them as a :class:`Bundle`."""
        bundle = Bundle(*(int(q) for q in bundle))
        for kind in RESOURCES:
            self.tier_of(kind, bundle[kind])
        return bundle

    def to_dict(self) -> dict:
        d = {kind.key: [list(t) for t in self.tiers[kind]] for kind in RESOURCES}
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Tariff":
        missing = [k.key for k in RESOURCES if k.key not in d]
        if missing:
            raise ValueError(f"tariff document lacks tiers for {missing}")
        return cls({kind: d[kind.key] for kind in RESOURCES}, PricingMode(d.get("mode", "flat")))

    @classmethod
    def from_json(cls, path) -> "Tariff":
        return cls.from_dict(json.loads(Path(path).read_text()))


def tier_of(kind, qty, tariff: Tariff | None = None) -> int:
    return (tariff or Tariff()).tier_of(kind, qty)


def unit_price(kind, qty, tariff: Tariff | None = None) -> float:
    return (tariff or Tariff()).unit_price(kind, qty)


def total_price(bundle, tariff: Tariff | None = None) -> float:
    return (tariff or Tariff()).total_price(bundle)
