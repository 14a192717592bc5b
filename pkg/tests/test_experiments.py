import json
import math
import warnings

import numpy as np
import pytest

from fuzzneg.exceptions import BudgetExhausted, ExhaustedError, SchemaError
from fuzzneg.experiments import (
    REFERENCE_ANCHORS,
    Dataset,
    calibrate_membership,
    export_dataset,
    export_pairs,
    export_report,
    generate_dataset,
    import_dataset,
    import_pairs,
    is_negotiable,
    monotonicity_penalty,
    run_batch,
    single_record,
)
from fuzzneg.fuzzy import CALIBRATED_PARAMS, default_system
from fuzzneg.negotiation import NegotiationConfig
from fuzzneg.tariff import Bundle, Tariff


@pytest.fixture(scope="module")
def small_report():
    return run_batch(generate_dataset(40, seed=3), config=NegotiationConfig(case=1, seed=5))


def test_generated_dataset_sorted_and_distinct(flat):
    ds = generate_dataset(200, seed=42)
    assert len(ds) == 200 and len(set(ds)) == 200
    totals = [round(flat.total_price(b), 9) for b in ds]
    assert totals == sorted(totals)
    assert all(b.storage % 10 == 0 for b in ds)
    assert generate_dataset(200, seed=42) == ds


def test_exclusion_gives_disjoint_sets():
    test = generate_dataset(200, seed=42)
    train = generate_dataset(10_000, seed=43, exclude=test)
    assert len(train) == 10_000
    assert not set(train) & set(test)


def test_exhausted_when_space_too_small():
    with pytest.raises(ExhaustedError):
        generate_dataset(90 * 180 * 90 + 1)
    with pytest.raises(ValueError):
        generate_dataset(0)


def test_single_record():
    assert single_record().records == (Bundle(10, 20, 200),)


def test_csv_round_trip(tmp_path):
    ds = generate_dataset(50, seed=1)
    path = tmp_path / "ds.csv"
    export_dataset(ds, path)
    assert import_dataset(path) == ds


def test_schema_error_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("vcpu,ram_gb,storage_gb\n10,20,200\n0,20,200\n")
    with pytest.raises(SchemaError, match="row 3"):
        import_dataset(path)
    path.write_text("cpu,ram,disk\n1,1,10\n")
    with pytest.raises(SchemaError, match="header"):
        import_dataset(path)


def test_pairs_round_trip(tmp_path):
    X = np.array([[10, 20, 200], [1, 1, 10]])
    Y = np.array([[12, 30, 300], [1, 2, 20]])
    export_pairs(X, Y, tmp_path / "p.csv")
    got_x, got_y = import_pairs(tmp_path / "p.csv")
    assert np.array_equal(got_x, X) and np.array_equal(got_y, Y)


def test_negotiable_definition(progressive):
    assert is_negotiable((10, 200 // 2, 900), progressive)
    assert not is_negotiable((40, 100, 400), progressive)


def test_tier3_only_batch():
    report = run_batch(Dataset((Bundle(40, 100, 400),)))
    assert report.success_rate == 0.0 and report.avg_fee_ratio == 1.0
    assert report.negotiable_count == 0 and report.aggregate()["success_rate_negotiable"] is None


def test_batch_invariants(small_report):
    r = small_report
    assert r.count == 40 and r.error_count == 0
    assert r.negotiable_count <= r.count
    assert r.avg_fee_ratio >= 1.0
    assert r.avg_fee_ratio_negotiable >= r.avg_fee_ratio
    assert r.success_rate == pytest.approx(r.success_rate_negotiable * r.negotiable_count / r.count)
    assert all(not s.success for s in r.records if not s.negotiable)


def test_fee_ratio_column_recomputes(small_report, progressive):
    for s in small_report.records:
        expected = progressive.total_price(s.final) / progressive.total_price(s.original)
        assert s.fee_ratio == pytest.approx(expected, rel=1e-12)


def test_report_bytes_deterministic(tmp_path, small_report):
    again = run_batch(generate_dataset(40, seed=3), config=NegotiationConfig(case=1, seed=5))
    export_report(small_report, tmp_path / "a.csv")
    export_report(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    agg = json.loads((tmp_path / "a.json").read_text())
    assert set(agg) >= {"success_rate", "avg_fee_ratio", "negotiable_count", "avg_fee_ratio_negotiable", "success_rate_negotiable"}


def test_parallel_matches_serial(small_report):
    parallel = run_batch(generate_dataset(40, seed=3), config=NegotiationConfig(case=1, seed=5), workers=2)
    assert parallel.records == small_report.records


def test_per_record_errors_are_recorded():
    bad = Dataset((Bundle(10, 20, 200), Bundle(10, 20, 9000)))
    report = run_batch(bad)
    assert report.error_count == 1 and report.records[1].error
    assert not math.isnan(report.success_rate)


def test_calibration_zero_budget_returns_start():
    with pytest.warns(BudgetExhausted):
        result = calibrate_membership(REFERENCE_ANCHORS[:1], budget=0, start=CALIBRATED_PARAMS)
    assert result.evaluations == 0
    assert result.system().params() == default_system().params()


def test_calibration_inverted_anchors_do_not_crash():
    inverted = [((1, 1, 1, 0.0238), 90.0), ((0.389, 0.389, 0.389, 1), 5.0)]
    with pytest.warns(BudgetExhausted):
        result = calibrate_membership(inverted, budget=200, seed=1)
    assert result.exhausted and max(abs(r) for r in result.residuals) > 10


def test_calibration_keeps_defaults_near_anchors():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExhausted)
        result = calibrate_membership(budget=50, seed=0)
    assert all(abs(r) <= 2.0 for r in result.residuals)


def test_monotonicity_penalty(system):
    assert monotonicity_penalty(system) == 0.0
    assert monotonicity_penalty(default_system("gaussian")) > 0.0


def test_default_tariff_is_progressive(small_report):
    assert small_report.config["tariff"]["mode"] == Tariff(mode="progressive").mode.value
