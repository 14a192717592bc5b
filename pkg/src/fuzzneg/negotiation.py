"""One-to-one negotiation between the provider agent and the client agent.

The provider opens with an enlarged offer that drops every resource it can
into a cheaper price tier, then concedes one resource step per round. The
client scores each offer with its fuzzy system and, depending on the case,
also advises which resource to cut and states per-resource priorities.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigMismatchError
from .fuzzy import FuzzySystem, accept, crisp_inputs, default_system
from .tariff import RESOURCES, Bundle, PricingMode, ResourceKind, Tariff


class Case(enum.IntEnum):
    """How much the client tells the provider.

    1: accept/reject only. 2: plus advice on what to reduce.
    3: plus up-front priorities.
    """

    CASE1 = 1
    CASE2 = 2
    CASE3 = 3


@dataclass(frozen=True)
class Advice:
    """Client hint; ``resource is None`` means the provider may pick at random."""

    resource: Optional[ResourceKind] = None

    @property
    def is_random(self) -> bool:
        return self.resource is None

    def __str__(self):
        return "random" if self.resource is None else self.resource.key


RANDOM = Advice()

DEFAULT_STEPS = (1, 1, 10)


@dataclass(frozen=True)
class NegotiationConfig:
    case: Case = Case.CASE2
    d_max: float = 1.5
    steps: tuple = DEFAULT_STEPS
    priorities: Optional[tuple] = None
    threshold: Optional[float] = None
    max_rounds: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "case", Case(self.case))
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if len(self.steps) != 3 or min(self.steps) < 1:
            raise ValueError(f"steps must be three integers >= 1, got {self.steps}")
        if not self.d_max > 1:
            raise ValueError(f"d_max must exceed 1, got {self.d_max}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.priorities is not None:
            if self.case is not Case.CASE3:
                raise ConfigMismatchError(f"priorities are only used in case 3, not case {int(self.case)}")
            pr = tuple(float(p) for p in self.priorities)
            if len(pr) != 3 or min(pr) < 1:
                raise ValueError(f"priorities must be three values >= 1, got {self.priorities}")
            object.__setattr__(self, "priorities", pr)

    def effective_priorities(self):
        if self.case is Case.CASE3:
            return self.priorities or (1.0, 1.0, 1.0)
        return None

    def to_dict(self) -> dict:
        return {
            "case": int(self.case),
            "d_max": self.d_max,
            "steps": list(self.steps),
            "priorities": None if self.priorities is None else list(self.priorities),
            "threshold": self.threshold,
            "max_rounds": self.max_rounds,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NegotiationConfig":
        known = {"case", "d_max", "steps", "priorities", "threshold", "max_rounds", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown negotiation options: {sorted(unknown)}")
        return cls(**d)


class TraceRow(NamedTuple):
    round: int
    offer: Bundle
    score: float
    advice: Optional[Advice]


@dataclass(frozen=True)
class Outcome:
    original: Bundle
    final: Bundle
    accepted: bool
    trace: tuple = field(repr=False)
    fee_ratio: float = 1.0

    @property
    def rounds(self) -> int:
        """Number of offers the client evaluated."""
        return len(self.trace)

    @property
    def success(self) -> bool:
        return self.accepted and self.fee_ratio > 1.0

    @property
    def score(self) -> float:
        return self.trace[-1].score if self.trace else float("nan")


def first_offer(original, tariff: Tariff) -> Bundle:
    """Move every resource below the top tier into a cheaper tier.

    A quantity in tier 1 is raised by the tier-1 bound, one in tier 2 by the
    tier-2 bound; tier-3 quantities are left alone.
    """
    original = tariff.check_bundle(original)
    quantities = []
    for kind in RESOURCES:
        n0 = original[kind]
        t12, t23 = tariff.bounds(kind)[:2]
        if 0 < n0 <= t12:
            quantities.append(n0 + t12)
        elif t12 < n0 <= t23:
            quantities.append(n0 + t23)
        else:
            quantities.append(n0)
    return tariff.check_bundle(quantities)


def advise(original, current, d_max: float) -> Advice:
    """Ask for a cut of the most inflated resource once proportions drift.

    Ties go to the first resource in VCPU, RAM, storage order.
    """
    ratios = np.asarray(current, dtype=float) / np.asarray(original, dtype=float)
    deviation = ratios.max() / ratios.min()
    if deviation < d_max:
        return RANDOM
    return Advice(ResourceKind(int(np.argmax(ratios))))


def reduction_probabilities(original, steps=DEFAULT_STEPS, priorities=None) -> np.ndarray:
    """Probability of picking each resource, proportional to rounds needed.

    Rounds needed is ``n0 / step``, divided by the priority when given.
    """
    rounds = np.asarray(original, dtype=float) / np.asarray(steps, dtype=float)
    if priorities is not None:
        rounds = rounds / np.asarray(priorities, dtype=float)
    return rounds / rounds.sum()


def select_reduction(advice: Optional[Advice], probabilities, rng: np.random.Generator) -> ResourceKind:
    if advice is not None and not advice.is_random:
        return advice.resource
    p = np.asarray(probabilities, dtype=float)
    return ResourceKind(int(rng.choice(len(p), p=p / p.sum())))


def _reduced(offer: Bundle, original: Bundle, kind: ResourceKind, step: int) -> Bundle:
    return offer.replace(kind, max(original[kind], offer[kind] - step))


def negotiate(
    original,
    tariff: Tariff | None = None,
    fuzzy_system: FuzzySystem | None = None,
    config: NegotiationConfig | None = None,
) -> Outcome:
    """Run one negotiation to agreement or failure.

    Defaults: the calibrated seven-rule system, a progressive tariff and a
    Case 2 configuration.

    The provider never reduces a resource below the original requirement
    and never proposes an offer cheaper in total than the original, so a
    reduction is only possible when both floors hold. A resource that
    cannot be reduced is dropped from the draw (or from the advice). The
    negotiation fails when the offer falls back to the original, when no
    resource can be reduced, or after ``max_rounds`` offers; the client then
    keeps its original requirement.
    """
    tariff = tariff or Tariff(mode=PricingMode.PROGRESSIVE)
    system = fuzzy_system or default_system()
    config = config or NegotiationConfig()
    threshold = system.threshold if config.threshold is None else config.threshold
    original = tariff.check_bundle(original)
    original_total = tariff.total_price(original)
    rng = np.random.default_rng(config.seed)
    probabilities = reduction_probabilities(original, config.steps, config.effective_priorities())

    offer = first_offer(original, tariff)
    trace = []
    accepted = False
    for rnd in range(config.max_rounds):
        score = system.score(crisp_inputs(original, offer, tariff))
        if offer == original:
            trace.append(TraceRow(rnd, offer, score, None))
            break
        if accept(score, threshold):
            trace.append(TraceRow(rnd, offer, score, None))
            accepted = True
            break
        advice = advise(original, offer, config.d_max) if config.case >= Case.CASE2 else None
        trace.append(TraceRow(rnd, offer, score, advice))

        candidates = {}
        for kind in RESOURCES:
            nxt = _reduced(offer, original, kind, config.steps[kind])
            if nxt != offer and tariff.total_price(nxt) >= original_total - 1e-12:
                candidates[kind] = nxt
        if not candidates:
            break
        if advice is not None and advice.resource is not None and advice.resource not in candidates:
            advice = RANDOM
        mask = np.array([k in candidates for k in RESOURCES], dtype=float)
        kind = select_reduction(advice, probabilities * mask, rng)
        offer = candidates[kind]

    final = offer if accepted else original
    fee_ratio = tariff.total_price(final) / original_total
    return Outcome(original, final, accepted, tuple(trace), fee_ratio)


def derive_seed(seed: int, index: int) -> int:
    """Stable 64-bit seed for the ``index``-th negotiation of a run."""
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


class NegotiationEngine(BaseEstimator):
    """Estimator view of the negotiation: requirement rows in, final offers out.

    There is nothing to learn, so ``fit`` only validates the hyper-parameters
    and freezes the tariff, fuzzy system and configuration. Row ``i`` of
    ``predict`` is negotiated with ``derive_seed(random_state, i)``, the same
    seeding :func:`fuzzneg.experiments.run_batch` uses.
    """

    def __init__(
        self,
        case=2,
        d_max=1.5,
        steps=DEFAULT_STEPS,
        priorities=None,
        threshold=None,
        max_rounds=10_000,
        tariff=None,
        fuzzy_system=None,
        random_state=0,
    ):
        self.case = case
        self.d_max = d_max
        self.steps = steps
        self.priorities = priorities
        self.threshold = threshold
        self.max_rounds = max_rounds
        self.tariff = tariff
        self.fuzzy_system = fuzzy_system
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.config_ = NegotiationConfig(
            case=self.case,
            d_max=self.d_max,
            steps=self.steps,
            priorities=self.priorities,
            threshold=self.threshold,
            max_rounds=self.max_rounds,
            seed=self.random_state,
        )
        self.tariff_ = self.tariff if self.tariff is not None else Tariff(mode=PricingMode.PROGRESSIVE)
        self.system_ = self.fuzzy_system if self.fuzzy_system is not None else default_system()
        self.n_features_in_ = 3
        return self

    def negotiate(self, original, seed=None) -> Outcome:
        check_is_fitted(self, "config_")
        config = self.config_ if seed is None else _with_seed(self.config_, seed)
        return negotiate(original, self.tariff_, self.system_, config)

    def outcomes(self, X) -> list:
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 columns (vcpu, ram, storage), got {X.shape[1]}")
        return [self.negotiate(row, derive_seed(self.random_state, i)) for i, row in enumerate(X)]

    def predict(self, X) -> np.ndarray:
        """Final offer per row; the original requirement where negotiation failed."""
        return np.asarray([o.final for o in self.outcomes(X)], dtype=np.int64).reshape(-1, 3)


def _with_seed(config: NegotiationConfig, seed: int) -> NegotiationConfig:
    return replace(config, seed=seed)
