"""Syntax tree for the rule language.

Every node carries an optional ``pos`` (line, column) that is excluded from
equality, so a pretty-printed and re-parsed tree compares equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


def _pos():
    return field(default=None, compare=False, repr=False)


# -- expressions ----------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Str:
    value: str
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Bool:
    value: bool
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class ValueRef:
    """The aggregate value inside a factdef classifier."""

    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class AliasAttr:
    alias: str
    attr: str
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    pos: tuple[int, int] | None = _pos()


Expr = Union[Num, Str, Bool, Var, ValueRef, AliasAttr, Unary, Binary]
Term = Union[Num, Str, Bool, Var]

ALIAS_ATTRS = ("subject", "value", "asserted_at", "ttl")
COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")
ARITH = ("+", "-", "*", "/")


def iter_vars(expr) -> list[Var]:
    out: list[Var] = []
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.append(node)
        elif isinstance(node, Unary):
            stack.append(node.operand)
        elif isinstance(node, Binary):
            stack.extend((node.right, node.left))
    return out


def iter_nodes(expr):
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Unary):
            stack.append(node.operand)
        elif isinstance(node, Binary):
            stack.extend((node.right, node.left))


# -- rules ----------------------------------------------------------------


@dataclass(frozen=True)
class FactPattern:
    subject: Term
    attribute: str
    value: Term
    alias: str | None = None
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class PublishAction:
    """Publish a context on ``context/<segments...>``; segments are str or Var."""

    segments: tuple
    fields: tuple[tuple[str, Expr], ...]
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class AssertAction:
    subject: Expr
    attribute: str
    value: Expr
    ttl_ms: int
    pos: tuple[int, int] | None = _pos()


Action = Union[PublishAction, AssertAction]


@dataclass(frozen=True)
class Rule:
    name: str
    priority: int
    ttl_ms: int
    patterns: tuple[FactPattern, ...]
    condition: Expr | None
    actions: tuple[Action, ...]
    pos: tuple[int, int] | None = _pos()


# -- fact definitions -----------------------------------------------------

AGGREGATES = ("mean", "rate_of_change", "trend_slope", "forecast")


@dataclass(frozen=True)
class Emit:
    subject: str
    attribute: str
    value: Expr
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class ClassifierEntry:
    predicate: Expr | None  # None means "otherwise"
    emit: Emit
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class FactDef:
    name: str
    stream: str
    function: str
    window_ms: int
    horizon_ms: int | None
    ttl_ms: int
    reemit_ms: int | None
    classifier: tuple[ClassifierEntry, ...]
    pos: tuple[int, int] | None = _pos()

    @property
    def reemit_interval(self) -> int:
        return self.window_ms if self.reemit_ms is None else self.reemit_ms


# -- context model --------------------------------------------------------

ATTR_TYPES = ("number", "string", "boolean", "ref")


@dataclass(frozen=True)
class AttrDecl:
    name: str
    type: str
    unit: str | None
    static: bool
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class EntityDecl:
    name: str
    attrs: tuple[AttrDecl, ...]
    pos: tuple[int, int] | None = _pos()


@dataclass(frozen=True)
class RuleSet:
    entities: tuple[EntityDecl, ...] = ()
    factdefs: tuple[FactDef, ...] = ()
    rules: tuple[Rule, ...] = ()

    def __len__(self) -> int:
        return len(self.entities) + len(self.factdefs) + len(self.rules)

    def merged(self, other: "RuleSet") -> "RuleSet":
        return RuleSet(
            self.entities + other.entities,
            self.factdefs + other.factdefs,
            self.rules + other.rules,
        )
