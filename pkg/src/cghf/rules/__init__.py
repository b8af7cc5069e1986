"""Context model and Event-Condition-Action rule language."""

from pathlib import Path

from . import ast
from .ast import RuleSet
from .parser import ParseError, RuleSyntaxError, parse, parse_file
from .printer import pretty_print
from .validate import ContextModel, ValidationError, validate

SHIPPED_DIR = Path(__file__).resolve().parent.parent / "data" / "rules"
SCENARIO_FILES = ("congestion.rules", "anchor.rules", "service_point.rules", "multi_access.rules")


def shipped(name: str) -> Path:
    return SHIPPED_DIR / name


def shipped_model() -> ContextModel:
    return ContextModel.from_file(shipped("model.rules"))


__all__ = [
    "ContextModel",
    "ParseError",
    "RuleSet",
    "RuleSyntaxError",
    "ValidationError",
    "ast",
    "parse",
    "parse_file",
    "pretty_print",
    "shipped",
    "shipped_model",
    "validate",
]
