"""Small arithmetic expression language for coefficient descriptors.

Grammar (Python syntax subset)::

    expr   := number | name | call | expr op expr | ('+'|'-') expr | '(' expr ')'
    op     := '+' | '-' | '*' | '/' | '**'
    name   := 'x1' | 'x2' | 'pi' | 'e'
    call   := fn '(' expr [',' expr] ')'
    fn     := 'sin' | 'cos' | 'abs' | 'pow' | 'exp' | 'sqrt'

``pow(a, b)`` and ``a ** b`` are equivalent. Anything else is rejected.
"""
from __future__ import annotations

import ast
from functools import lru_cache

import sympy as sp

from .exceptions import DescriptorError

X1, X2 = sp.symbols("x1 x2", real=True)
SYMBOLS = (X1, X2)

_FUNCS = {
    "sin": (1, sp.sin),
    "cos": (1, sp.cos),
    "abs": (1, sp.Abs),
    "exp": (1, sp.exp),
    "sqrt": (1, sp.sqrt),
    "pow": (2, lambda a, b: a**b),
}
_NAMES = {"x1": X1, "x2": X2, "pi": sp.pi, "e": sp.E}


def _convert(node, dim):
    if isinstance(node, ast.Expression):
        return _convert(node.body, dim)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in _NAMES:
            raise DescriptorError(f"unknown name {node.id!r}", name=node.id)
        if node.id == "x2" and dim < 2:
            raise DescriptorError("x2 used in a 1-d descriptor", name=node.id)
        return _NAMES[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        val = _convert(node.operand, dim)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp):
        a, b = _convert(node.left, dim), _convert(node.right, dim)
        op = type(node.op)
        if op is ast.Add:
            return a + b
        if op is ast.Sub:
            return a - b
        if op is ast.Mult:
            return a * b
        if op is ast.Div:
            return a / b
        if op is ast.Pow:
            return a**b
        raise DescriptorError(f"operator {op.__name__} not allowed")
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id not in _FUNCS or node.keywords:
            raise DescriptorError(f"function {node.func.id!r} not allowed", name=node.func.id)
        arity, fn = _FUNCS[node.func.id]
        if len(node.args) != arity:
            raise DescriptorError(f"{node.func.id} takes {arity} argument(s)")
        return fn(*[_convert(a, dim) for a in node.args])
    raise DescriptorError(f"unsupported syntax: {ast.dump(node)[:60]}")


@lru_cache(maxsize=512)
def parse(text: str, dim: int = 2) -> sp.Expr:
    """Parse ``text`` into a sympy expression over ``x1, x2``."""
    if not isinstance(text, str):
        text = repr(float(text))
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise DescriptorError(f"cannot parse expression {text!r}", expression=text) from exc
    return _convert(tree, dim)


def compile_many(exprs, dim: int):
    """Vectorized evaluator for a list of sympy expressions.

    Returns ``f(points) -> array of shape (len(exprs),) + points.shape[:-1]``.
    """
    syms = SYMBOLS[:dim]
    fns = [sp.lambdify(syms, e, modules="numpy") for e in exprs]
    consts = [float(e) if not e.free_symbols else None for e in exprs]

    def evaluate(points):
        import numpy as np

        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        out = np.empty((len(exprs),) + shape)
        cols = [pts[..., k] for k in range(dim)]
        for m, (fn, c) in enumerate(zip(fns, consts)):
            out[m] = c if c is not None else fn(*cols)
        return out

    return evaluate
