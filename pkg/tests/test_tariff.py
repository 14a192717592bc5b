import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fuzzneg.exceptions import OutOfRangeError
from fuzzneg.tariff import (
    DEFAULT_TIERS,
    RESOURCES,
    Bundle,
    PricingMode,
    ResourceKind,
    Tariff,
    tier_of,
    total_price,
    unit_price,
)

V, R, S = ResourceKind.VCPU, ResourceKind.RAM, ResourceKind.STORAGE


@pytest.mark.parametrize("kind,qty,tier", [(V, 5, 1), (V, 10, 1), (V, 11, 2), (V, 30, 2), (V, 31, 3), (S, 900, 3), (R, 1, 1)])
def test_tier_of(kind, qty, tier):
    assert tier_of(kind, qty) == tier


@pytest.mark.parametrize("qty", [0, -3, 91])
def test_tier_of_rejects_out_of_range(qty):
    with pytest.raises(OutOfRangeError):
        tier_of(V, qty)


def test_flat_unit_prices(flat):
    assert flat.unit_price(V, 15) == 0.1
    assert flat.unit_price(R, 1) == 0.1
    assert flat.unit_price(S, 301) == 0.005


def test_progressive_blend_at_top(progressive):
    assert progressive.unit_price(V, 90) == pytest.approx(7 / 90, abs=1e-12)
    for kind in RESOURCES:
        ratio = progressive.unit_price(kind, progressive.top(kind)) / progressive.unit_price(kind, 1)
        assert ratio == pytest.approx(0.389, abs=1e-3)


@pytest.mark.parametrize("bundle,total", [((10, 20, 200), 6.0), ((90, 180, 900), 13.5), ((1, 1, 1), 0.32)])
def test_flat_totals(bundle, total):
    assert total_price(bundle) == pytest.approx(total, abs=1e-9)


def test_flat_cost_drops_across_tier_boundary(flat):
    assert flat.cost(V, 10) == pytest.approx(2.0)
    assert flat.cost(V, 11) == pytest.approx(1.1)


def test_progressive_has_no_jump_at_bounds(progressive, flat):
    # one extra unit moves a blended price by at most p / (n + 1); flat prices halve
    for kind in RESOURCES:
        for bound in progressive.bounds(kind)[:2]:
            p = progressive.unit_price(kind, bound)
            step = p - progressive.unit_price(kind, bound + 1)
            assert 0 <= step <= p / (bound + 1)
            assert flat.unit_price(kind, bound) - flat.unit_price(kind, bound + 1) >= 0.5 * flat.unit_price(kind, bound) - 1e-12


@given(st.sampled_from(RESOURCES), st.integers(1, 899), st.sampled_from(list(PricingMode)))
def test_unit_price_non_increasing(kind, qty, mode):
    t = Tariff(mode=mode)
    qty = min(qty, t.top(kind) - 1)
    assert t.unit_price(kind, qty + 1) <= t.unit_price(kind, qty) + 1e-15


@given(st.sampled_from(RESOURCES), st.integers(1, 899))
def test_progressive_cost_strictly_increasing(kind, qty):
    t = Tariff(mode=PricingMode.PROGRESSIVE)
    qty = min(qty, t.top(kind) - 1)
    assert t.cost(kind, qty + 1) > t.cost(kind, qty)


def test_defaults_match_price_table(flat):
    assert flat.mode is PricingMode.FLAT
    assert flat.tiers[V] == ((10, 0.2), (30, 0.1), (90, 0.05))
    assert flat.tiers[R] == ((20, 0.1), (60, 0.05), (180, 0.025))
    assert flat.tiers[S] == ((100, 0.02), (300, 0.01), (900, 0.005))


@pytest.mark.parametrize(
    "tiers",
    [
        {V: ((10, 0.2), (30, 0.1)), R: DEFAULT_TIERS[R], S: DEFAULT_TIERS[S]},
        {V: ((10, 0.2), (10, 0.1), (90, 0.05)), R: DEFAULT_TIERS[R], S: DEFAULT_TIERS[S]},
        {V: ((10, 0.2), (30, 0.3), (90, 0.05)), R: DEFAULT_TIERS[R], S: DEFAULT_TIERS[S]},
        {V: DEFAULT_TIERS[V], R: DEFAULT_TIERS[R]},
    ],
)
def test_invalid_tables_rejected(tiers):
    with pytest.raises(ValueError):
        Tariff(tiers)


def test_json_round_trip(tmp_path):
    t = Tariff(mode=PricingMode.PROGRESSIVE)
    path = tmp_path / "tariff.json"
    path.write_text(json.dumps(t.to_dict()))
    assert Tariff.from_json(path) == t
    assert json.loads(path.read_text())["vcpu"] == [[10, 0.2], [30, 0.1], [90, 0.05]]


def test_from_dict_requires_all_resources():
    with pytest.raises(ValueError, match="storage"):
        Tariff.from_dict({"vcpu": [[10, 0.2], [30, 0.1], [90, 0.05]], "ram": [[20, 0.1], [60, 0.05], [180, 0.025]]})


def test_check_bundle_and_replace(flat):
    b = flat.check_bundle([10.0, 20, 200])
    assert b == Bundle(10, 20, 200)
    assert b.replace(R, 40) == Bundle(10, 40, 200)
    with pytest.raises(OutOfRangeError):
        flat.check_bundle((10, 20, 901))
