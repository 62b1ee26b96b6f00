"""Small arithmetic expression grammar for coefficient and metric formulas.

Supported: numbers, ``+ - * / ^`` (``**`` also accepted), parentheses,
``abs exp sin cos sqrt log``, coordinates ``x1 x2 x3`` and the constants
``pi`` and ``e``. Expressions are evaluated elementwise on numpy arrays.
"""

from __future__ import annotations

import ast
from functools import lru_cache

import numpy as np

from .exceptions import ValidationError

_FUNCS = {
    "abs": np.abs,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "log": np.log,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.true_divide,
    ast.Pow: np.power,
}


@lru_cache(maxsize=256)
def _parse(text: str) -> ast.Expression:
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse formula {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            if isinstance(node, ast.operator) and type(node) not in _BINOPS:
                raise ValidationError(f"operator {type(node).__name__} not allowed in {text!r}")
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id in _CONSTS or node.id in ("x1", "x2", "x3")):
            continue
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            if node.keywords or len(node.args) != 1:
                raise ValidationError(f"{node.func.id} takes exactly one argument")
            continue
        if isinstance(node, ast.Name) and node.id in _FUNCS:
            continue
        raise ValidationError(f"unsupported element {ast.dump(node)[:40]} in {text!r}")
    return tree


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        if node.id not in env:
            raise ValidationError(f"coordinate {node.id} not available in {len(env)}D")
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        val = _eval(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else +val
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](_eval(node.args[0], env))
    raise ValidationError("malformed expression")


def evaluate(formula, coords) -> np.ndarray:
    """Evaluate a formula (string, number or callable) at coordinate arrays ``coords = (x1, x2[, x3])``."""
    shape = np.shape(coords[0])
    if callable(formula):
        out = formula(*coords)
    elif isinstance(formula, (int, float)):
        out = float(formula)
    else:
        env = {f"x{k + 1}": np.asarray(c, dtype=float) for k, c in enumerate(coords)}
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = _eval(_parse(str(formula).strip()), env)
    return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
