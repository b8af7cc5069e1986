"""Context generation and handling: pub/sub bus, fact generation, ECA inference, northbound exposure."""

from .bus import Bus, Envelope, TopicPattern
from .facts import Fact, FactGenerator, Sample, Storage, aggregate
from .inference import Context, KnowledgeBase, run_cycle
from .node import CGHF, RuleLoadError, StepResult

__version__ = "0.1.0"

__all__ = [
    "Bus",
    "CGHF",
    "Context",
    "Envelope",
    "Fact",
    "FactGenerator",
    "KnowledgeBase",
    "RuleLoadError",
    "Sample",
    "StepResult",
    "Storage",
    "TopicPattern",
    "aggregate",
    "run_cycle",
]
