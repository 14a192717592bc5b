"""Datasets, batch runs, aggregate metrics and membership calibration."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import BudgetExhausted, ExhaustedError, OutOfRangeError, SchemaError
from .fuzzy import CALIBRATED_PARAMS, SEVEN_RULES, FuzzySystem
from .negotiation import NegotiationConfig, Outcome, derive_seed, negotiate
from .tariff import RESOURCES, Bundle, PricingMode, Tariff

DATASET_HEADER = ("vcpu", "ram_gb", "storage_gb")
LABEL_HEADER = ("final_vcpu", "final_ram_gb", "final_storage_gb")
STORAGE_GRID = 10


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    records: tuple
    provenance: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_array(self) -> np.ndarray:
        return np.asarray(self.records, dtype=np.int64).reshape(-1, 3)


def _flat_sort_key(tariff):
    flat = tariff.with_mode(PricingMode.FLAT)
    return lambda b: (round(flat.total_price(b), 9), tuple(b))


def single_record(bundle=(10, 20, 200), tariff: Tariff | None = None) -> Dataset:
    """One-record dataset, the default being the (10, 20, 200) showcase input."""
    tariff = tariff or Tariff()
    return Dataset((tariff.check_bundle(bundle),), {"kind": "fixed"})


def generate_dataset(n: int, seed: int = 0, tariff: Tariff | None = None, exclude=()) -> Dataset:
    """Sample ``n`` distinct requirements, sorted by flat total price.

    VCPU and RAM are uniform over ``1..top``; storage is uniform over the
    10-GB grid ``10..top``. Bundles in ``exclude`` are never drawn, which is
    how a training set is kept disjoint from a test set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tariff = tariff or Tariff()
    tops = [tariff.top(k) for k in RESOURCES]
    excluded = {tuple(int(q) for q in b) for b in exclude}
    space = tops[0] * tops[1] * (tops[2] // STORAGE_GRID)
    available = space - sum(1 for b in excluded if b[2] % STORAGE_GRID == 0)
    if n > available:
        raise ExhaustedError(f"only {available} distinct bundles available, {n} requested")

    rng = np.random.default_rng(seed)
    seen: dict = {}
    while len(seen) < n:
        m = max(2 * (n - len(seen)), 64)
        draws = np.column_stack(
            [
                rng.integers(1, tops[0] + 1, m),
                rng.integers(1, tops[1] + 1, m),
                rng.integers(1, tops[2] // STORAGE_GRID + 1, m) * STORAGE_GRID,
            ]
        )
        for row in draws:
            key = (int(row[0]), int(row[1]), int(row[2]))
            if key in excluded or key in seen:
                continue
            seen[key] = None
            if len(seen) == n:
                break
    records = sorted((Bundle(*b) for b in seen), key=_flat_sort_key(tariff))
    return Dataset(tuple(records), {"kind": "generated", "seed": seed, "size": n})


def export_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        writer.writerows(dataset.records)


def _parse_row(row, lineno, width, tariff=None):
    if len(row) != width:
        raise SchemaError(f"row {lineno}: expected {width} columns, got {len(row)}")
    try:
        values = [int(v) for v in row]
    except ValueError:
        raise SchemaError(f"row {lineno}: non-integer value in {row}") from None
    if tariff is not None:
        for start in range(0, width, 3):
            try:
                tariff.check_bundle(values[start : start + 3])
            except OutOfRangeError as exc:
                raise SchemaError(f"row {lineno}: {exc}") from None
    return values


def import_dataset(path, tariff: Tariff | None = None) -> Dataset:
    """Read a ``vcpu,ram_gb,storage_gb`` CSV; row numbers in errors count the header as row 1."""
    tariff = tariff or Tariff()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATASET_HEADER:
            raise SchemaError(f"{path}: header must be {','.join(DATASET_HEADER)}")
        records = [Bundle(*_parse_row(row, i, 3, tariff)) for i, row in enumerate(reader, start=2) if row]
    return Dataset(tuple(records), {"kind": "loaded", "path": str(path)})


def export_pairs(features, labels, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER + LABEL_HEADER)
        for x, y in zip(np.asarray(features).tolist(), np.asarray(labels).tolist()):
            writer.writerow([*x, *y])


def import_pairs(path, tariff: Tariff | None = None):
    """Read a 6-column feature/label CSV into two ``(n, 3)`` integer arrays."""
    tariff = tariff or Tariff()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATASET_HEADER + LABEL_HEADER:
            raise SchemaError(f"{path}: header must be {','.join(DATASET_HEADER + LABEL_HEADER)}")
        rows = [_parse_row(row, i, 6, tariff) for i, row in enumerate(reader, start=2) if row]
    if not rows:
        raise SchemaError(f"{path}: no rows")
    arr = np.asarray(rows, dtype=np.int64)
    return arr[:, :3], arr[:, 3:]


# -- batch runs ---------------------------------------------------------------


def is_negotiable(bundle, tariff: Tariff) -> bool:
    """True when some resource sits at or below its tier-2 bound."""
    return any(bundle[k] <= tariff.bounds(k)[1] for k in RESOURCES)


@dataclass(frozen=True)
class RecordSummary:
    index: int
    original: Bundle
    final: Bundle
    rounds: int
    accepted: bool
    success: bool
    fee_ratio: float
    score: float
    negotiable: bool
    error: Optional[str] = None


@dataclass(frozen=True)
class BatchReport:
    records: tuple
    config: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.records)

    def _ok(self, negotiable_only=False):
        return [r for r in self.records if r.error is None and (r.negotiable or not negotiable_only)]

    @property
    def negotiable_count(self) -> int:
        return sum(r.negotiable for r in self.records)

    @staticmethod
    def _mean(values):
        values = list(values)
        return math.fsum(values) / len(values) if values else float("nan")

    @property
    def success_rate(self) -> float:
        return self._mean(float(r.success) for r in self._ok())

    @property
    def avg_fee_ratio(self) -> float:
        return self._mean(r.fee_ratio for r in self._ok())

    @property
    def success_rate_negotiable(self) -> float:
        return self._mean(float(r.success) for r in self._ok(True))

    @property
    def avg_fee_ratio_negotiable(self) -> float:
        return self._mean(r.fee_ratio for r in self._ok(True))

    @property
    def error_count(self) -> int:
        return sum(r.error is not None for r in self.records)

    def aggregate(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "records": self.count,
            "success_rate": clean(self.success_rate),
            "avg_fee_ratio": clean(self.avg_fee_ratio),
            "negotiable_count": self.negotiable_count,
            "success_rate_negotiable": clean(self.success_rate_negotiable),
            "avg_fee_ratio_negotiable": clean(self.avg_fee_ratio_negotiable),
            "errors": self.error_count,
            "config": self.config,
        }

    def finals(self) -> np.ndarray:
        return np.asarray([r.final for r in self.records], dtype=np.int64).reshape(-1, 3)


def _summarise(index, bundle, tariff, system, config) -> RecordSummary:
    negotiable = is_negotiable(bundle, tariff)
    try:
        out: Outcome = negotiate(bundle, tariff, system, replace(config, seed=derive_seed(config.seed, index)))
    except ValueError as exc:
        return RecordSummary(index, Bundle(*bundle), Bundle(*bundle), 0, False, False, 1.0, float("nan"), negotiable, str(exc))
    return RecordSummary(
        index, out.original, out.final, out.rounds, out.accepted, out.success, out.fee_ratio, out.score, negotiable
    )


def _run_chunk(args):
    items, tariff, system, config = args
    return [_summarise(i, b, tariff, system, config) for i, b in items]


def run_batch(
    dataset,
    tariff: Tariff | None = None,
    fuzzy_system: FuzzySystem | None = None,
    config: NegotiationConfig | None = None,
    workers: int = 1,
) -> BatchReport:
    """Negotiate every record with a per-record seed derived from ``config.seed``.

    Failures inside one record are kept in its summary instead of aborting
    the batch.
    """
    tariff = tariff or Tariff(mode=PricingMode.PROGRESSIVE)
    system = fuzzy_system or FuzzySystem.from_params()
    config = config or NegotiationConfig()
    items = list(enumerate(dataset))
    if workers <= 1 or len(items) < 2:
        summaries = _run_chunk((items, tariff, system, config))
    else:
        chunks = [items[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(c, tariff, system, config) for c in chunks])
            summaries = [s for part in parts for s in part]
    summaries.sort(key=lambda s: s.index)
    meta = {"tariff": tariff.to_dict(), "negotiation": config.to_dict(), "mf_kind": system.mf_kind}
    return BatchReport(tuple(summaries), meta)


REPORT_HEADER = (
    "index",
    "vcpu",
    "ram_gb",
    "storage_gb",
    "final_vcpu",
    "final_ram_gb",
    "final_storage_gb",
    "rounds",
    "accepted",
    "success",
    "negotiable",
    "fee_ratio",
    "score",
    "error",
)


def export_report(report: BatchReport, path) -> Path:
    """Write the per-record CSV and a ``.json`` aggregate sidecar; returns the sidecar path."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in report.records:
            writer.writerow(
                [
                    r.index,
                    *r.original,
                    *r.final,
                    r.rounds,
                    int(r.accepted),
                    int(r.success),
                    int(r.negotiable),
                    repr(r.fee_ratio),
                    repr(r.score),
                    r.error or "",
                ]
            )
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(report.aggregate(), indent=2, sort_keys=True) + "\n")
    return sidecar


# -- calibration --------------------------------------------------------------

REFERENCE_ANCHORS = (
    ((1.0, 1.0, 1.0, 1.0), 50.00),
    ((1.0, 1.0, 1.0, 0.0238), 14.79),
    ((0.389, 0.389, 0.389, 1.0), 61.63),
)

_UNIVERSES = {"UPR": (0.2, 1.0), "TPR": (0.0, 1.0), "tendency": (0.0, 100.0)}
_LABEL_ORDER = {
    "UPR": ("cheap", "medium", "expensive"),
    "TPR": ("high", "medium", "low"),
    "tendency": ("low", "medium", "high"),
}


def _flatten(params) -> np.ndarray:
    return np.array([v for var in _LABEL_ORDER for label in _LABEL_ORDER[var] for v in params[var][label]], dtype=float)


def _unflatten(vec) -> dict:
    out, i = {}, 0
    for var, labels in _LABEL_ORDER.items():
        out[var] = {}
        for label in labels:
            out[var][label] = tuple(float(v) for v in vec[i : i + 3])
            i += 3
    return out


def _repair(vec) -> np.ndarray:
    """Clip to universes, sort breakpoints and keep label peaks ordered."""
    vec = vec.copy()
    i = 0
    for var, labels in _LABEL_ORDER.items():
        lo, hi = _UNIVERSES[var]
        for _ in labels:
            vec[i : i + 3] = np.sort(np.clip(vec[i : i + 3], lo, hi))
            i += 3
        peaks = vec[i - 8 : i : 3]
        vec[i - 8 : i : 3] = np.maximum.accumulate(peaks)
        for j in range(i - 9, i, 3):
            vec[j : j + 3] = np.sort(vec[j : j + 3])
    return vec


def _valid(vec) -> bool:
    i = 0
    for var, labels in _LABEL_ORDER.items():
        lo, hi = _UNIVERSES[var]
        for _ in labels:
            a, b, c = vec[i : i + 3]
            if not (lo <= a <= b <= c <= hi) or c - a <= 1e-6 * (hi - lo):
                return False
            i += 3
        peaks = vec[i - 8 : i : 3]
        if np.any(np.diff(peaks) < 0):
            return False
    return True


def monotonicity_penalty(system: FuzzySystem, n: int = 150, delta: float = 0.02, seed: int = 0) -> float:
    """Squared score drops when one input moves toward "cheaper", summed over a random grid.

    Zero means the system is monotone on the grid. Pass as ``penalty`` to
    :func:`calibrate_membership`.
    """
    rng = np.random.default_rng(seed)
    grid = np.column_stack([rng.uniform(0.389, 1.0, (n, 3)), rng.uniform(0.0238, 1.0, n)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = system.scores(grid)
        total = 0.0
        for j in range(4):
            moved = grid.copy()
            moved[:, j] = np.maximum(moved[:, j] - delta, 0.2) if j < 3 else np.minimum(moved[:, j] + delta, 1.0)
            total += float(np.sum(np.maximum(base - system.scores(moved), 0.0) ** 2))
    return 100.0 * total


@dataclass
class CalibrationResult:
    params: dict
    residuals: tuple
    loss: float
    evaluations: int
    exhausted: bool

    def system(self, **kwargs) -> FuzzySystem:
        return FuzzySystem.from_params(self.params, **kwargs)


def calibrate_membership(
    anchors: Sequence = REFERENCE_ANCHORS,
    budget: int = 4000,
    seed: int = 0,
    start: Optional[dict] = None,
    rules=SEVEN_RULES,
    tolerance: float = 0.05,
    penalty=None,
) -> CalibrationResult:
    """Randomised search over triangle breakpoints.

    Minimises the squared error between the system's score and each
    anchor's target score. The search alternates global resampling with
    shrinking local perturbations around the incumbent. ``penalty`` is an
    optional callable ``FuzzySystem -> float`` added to the loss.

    Stops as soon as every residual is within ``tolerance``; otherwise
    warns :class:`BudgetExhausted` and returns the best parameters seen.
    """
    anchors = [(tuple(map(float, x)), float(y)) for x, y in anchors]
    if not anchors:
        raise ValueError("need at least one anchor")
    inputs = np.array([x for x, _ in anchors])
    targets = np.array([y for _, y in anchors])
    rng = np.random.default_rng(seed)
    scale = np.array([_UNIVERSES[var][1] - _UNIVERSES[var][0] for var in _LABEL_ORDER for _ in range(9)])

    def evaluate(vec):
        try:
            system = FuzzySystem.from_params(_unflatten(vec), rules)
        except ValueError:
            return math.inf, None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = system.scores(inputs) - targets
        loss = float(np.sum(res**2))
        if penalty is not None:
            loss += float(penalty(system))
        return loss, res

    best = _flatten(start if start is not None else CALIBRATED_PARAMS)
    best_loss, best_res = evaluate(best)
    evals = 0
    step = 0.15
    stall = 0
    while evals < budget and not (best_res is not None and np.all(np.abs(best_res) <= tolerance) and penalty is None):
        if rng.random() < 0.1:
            cand = rng.uniform(0, 1, best.size) * scale + np.repeat([_UNIVERSES[v][0] for v in _LABEL_ORDER], 9)
        else:
            mask = rng.random(best.size) < 0.3
            cand = best + mask * rng.normal(0, step, best.size) * scale
        cand = _repair(cand)
        evals += 1
        if not _valid(cand):
            continue
        loss, res = evaluate(cand)
        if loss < best_loss:
            best, best_loss, best_res = cand, loss, res
            stall = 0
        else:
            stall += 1
            if stall > 200:
                step = max(step * 0.5, 1e-3)
                stall = 0
    residuals = tuple(float(r) for r in (best_res if best_res is not None else np.full(len(anchors), np.nan)))
    converged = all(abs(r) <= tolerance for r in residuals)
    if not converged:
        warnings.warn(
            f"calibration budget of {budget} exhausted; best residuals {residuals}", BudgetExhausted, stacklevel=2
        )
    return CalibrationResult(_unflatten(best), residuals, best_loss, evals, not converged)
