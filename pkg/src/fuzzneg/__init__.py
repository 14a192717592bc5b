"""Fuzzy-logic negotiation of cloud resource bundles under tiered pricing."""

from .experiments import generate_dataset, run_batch
from .fuzzy import CrispInputs, FuzzySystem, crisp_inputs, default_system, tendency_score
from .negotiation import Case, NegotiationConfig, NegotiationEngine, Outcome, negotiate
from .surrogate import SurrogateRegressor
from .tariff import Bundle, PricingMode, ResourceKind, Tariff

__version__ = "0.1.0"

__all__ = [
    "Bundle",
    "Case",
    "CrispInputs",
    "FuzzySystem",
    "NegotiationConfig",
    "NegotiationEngine",
    "Outcome",
    "PricingMode",
    "ResourceKind",
    "SurrogateRegressor",
    "Tariff",
    "crisp_inputs",
    "default_system",
    "generate_dataset",
    "negotiate",
    "run_batch",
    "tendency_score",
]
