"""Expression evaluation shared by factdef classifiers and rule conditions."""

from __future__ import annotations

import operator
from typing import Any, Mapping

from . import ast as A


class EvalError(Exception):
    pass


def is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def values_equal(a: Any, b: Any) -> bool:
    """Equality that never conflates booleans with numbers."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if is_number(a) and is_number(b):
        return a == b
    return type(a) is type(b) and a == b


_ORDER = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


def evaluate(
    node,
    bindings: Mapping[str, Any] | None = None,
    aliases: Mapping[str, Any] | None = None,
    value: Any = None,
) -> Any:
    if isinstance(node, (A.Num, A.Str, A.Bool)):
        return node.value
    if isinstance(node, A.Var):
        try:
            return bindings[node.name]
        except (KeyError, TypeError):
            raise EvalError(f"unbound variable ${node.name}") from None
    if isinstance(node, A.ValueRef):
        if value is None:
            raise EvalError("'value' is only defined inside a factdef classifier")
        return value
    if isinstance(node, A.AliasAttr):
        try:
            fact = aliases[node.alias]
        except (KeyError, TypeError):
            raise EvalError(f"unknown alias {node.alias}") from None
        return getattr(fact, node.attr)
    if isinstance(node, A.Unary):
        x = evaluate(node.operand, bindings, aliases, value)
        if node.op == "not":
            if not isinstance(x, bool):
                raise EvalError(f"'not' needs a boolean, got {x!r}")
            return not x
        if not is_number(x):
            raise EvalError(f"unary '-' needs a number, got {x!r}")
        return -x
    if isinstance(node, A.Binary):
        op = node.op
        if op in ("and", "or"):
            left = evaluate(node.left, bindings, aliases, value)
            if not isinstance(left, bool):
                raise EvalError(f"'{op}' needs booleans, got {left!r}")
            if (op == "and" and not left) or (op == "or" and left):
                return left
            right = evaluate(node.right, bindings, aliases, value)
            if not isinstance(right, bool):
                raise EvalError(f"'{op}' needs booleans, got {right!r}")
            return right
        left = evaluate(node.left, bindings, aliases, value)
        right = evaluate(node.right, bindings, aliases, value)
        if op == "==":
            return values_equal(left, right)
        if op == "!=":
            return not values_equal(left, right)
        if op in _ORDER:
            if is_number(left) and is_number(right):
                return _ORDER[op](left, right)
            if isinstance(left, str) and isinstance(right, str):
                return _ORDER[op](left, right)
            raise EvalError(f"cannot order {left!r} and {right!r}")
        if not (is_number(left) and is_number(right)):
            raise EvalError(f"'{op}' needs numbers, got {left!r} and {right!r}")
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op == "/":
            if right == 0:
                raise EvalError("division by zero")
            return left / right
    raise EvalError(f"cannot evaluate {node!r}")


def truthy(node, bindings=None, aliases=None, value=None) -> bool:
    result = evaluate(node, bindings, aliases, value)
    if not isinstance(result, bool):
        raise EvalError(f"condition evaluated to non-boolean {result!r}")
    return result
