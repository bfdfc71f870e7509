"""Tiny arithmetic expression language for coefficients in config files.

Grammar: +, -, *, / over floating literals, the variables t, x[i], z[j], u[k],
the constants pi and e, and the unary functions sin, cos, exp, arctan, tanh.
Expressions are parsed with the ast module against a strict whitelist and then
evaluated through numpy, so a compiled expression broadcasts over any leading
batch axes of its array arguments (the trailing axis is the coordinate axis).
"""

from __future__ import annotations

import ast
import math

import numpy as np

from .errors import ConfigError

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "arctan": np.arctan, "tanh": np.tanh}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("t", "x", "z", "u")
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_UNARYOPS = (ast.USub, ast.UAdd)


class _CoordView:
    """Presents array[..., i] under plain integer indexing for eval."""

    __slots__ = ("arr",)

    def __init__(self, arr):
        self.arr = np.asarray(arr, dtype=float)

    def __getitem__(self, index):
        return self.arr[..., index]


def _validate(node: ast.AST, source: str) -> None:
    if isinstance(node, ast.Expression):
        _validate(node.body, source)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _validate(node.left, source)
        _validate(node.right, source)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARYOPS):
        _validate(node.operand, source)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"unknown function in expression {source!r}")
        if len(node.args) != 1 or node.keywords:
            raise ConfigError(f"functions take exactly one argument: {source!r}")
        _validate(node.args[0], source)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ConfigError(f"only numeric literals allowed: {source!r}")
    elif isinstance(node, ast.Name):
        if node.id not in _CONSTS and node.id != "t":
            raise ConfigError(f"unknown name {node.id!r} in expression {source!r}")
    elif isinstance(node, ast.Subscript):
        if not (isinstance(node.value, ast.Name) and node.value.id in ("x", "z", "u")):
            raise ConfigError(f"only x[i], z[j], u[k] may be indexed: {source!r}")
        idx = node.slice
        if not (isinstance(idx, ast.Constant) and isinstance(idx.value, int)):
            raise ConfigError(f"indices must be integer literals: {source!r}")
    else:
        raise ConfigError(f"disallowed construct {type(node).__name__} in expression {source!r}")


class Expr:
    """A validated, compiled coefficient expression.

    Call with keyword arrays, e.g. ``expr(x=x, z=z, t=0.3)``; variables the
    expression does not mention may be omitted.
    """

    def __init__(self, source: str):
        if not isinstance(source, str):
            raise ConfigError(f"expression must be a string, got {type(source).__name__}")
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"unparseable expression {source!r}: {exc}") from exc
        _validate(tree, source)
        self._code = compile(tree, f"<expr {source!r}>", "eval")
        names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
        self.variables = frozenset(names & set(_VARS))

    def __call__(self, *, t=None, x=None, z=None, u=None):
        scope = dict(_FUNCS)
        scope.update(_CONSTS)
        if t is not None:
            scope["t"] = t
        if x is not None:
            scope["x"] = _CoordView(x)
        if z is not None:
            scope["z"] = _CoordView(z)
        if u is not None:
            scope["u"] = _CoordView(u)
        missing = self.variables - set(k for k in ("t", "x", "z", "u") if scope.get(k) is not None)
        if missing:
            raise ValueError(f"expression {self.source!r} needs {sorted(missing)}")
        return eval(self._code, {"__builtins__": {}}, scope)  # noqa: S307 - whitelisted AST

    def __repr__(self):
        return f"Expr({self.source!r})"


def _batch_shape(kwargs) -> tuple:
    """Common leading-axes shape of the call arguments (t has no coord axis)."""
    shapes = []
    for name, val in kwargs.items():
        if val is None:
            continue
        arr = np.asarray(val)
        shapes.append(arr.shape if name == "t" else arr.shape[:-1])
    return np.broadcast_shapes(*shapes) if shapes else ()


def vector_field(components: list[str], argnames: tuple[str, ...]):
    """Compile a list of component expressions into fn(*arrays) -> (..., len)."""
    exprs = [Expr(src) for src in components]
    for expr in exprs:
        extra = expr.variables - set(argnames)
        if extra:
            raise ConfigError(
                f"expression {expr.source!r} uses {sorted(extra)} but only {argnames} are available"
            )

    def fn(*args):
        kwargs = dict(zip(argnames, args))
        batch = _batch_shape(kwargs)
        parts = [
            np.broadcast_to(np.asarray(e(**kwargs), dtype=float), batch) for e in exprs
        ]
        return np.stack(parts, axis=-1)

    fn.sources = list(components)
    fn.argnames = argnames
    return fn


def matrix_field(rows: list[list[str]], argnames: tuple[str, ...]):
    """Compile a nested list of expressions into fn(*arrays) -> (..., r, c)."""
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ConfigError("matrix coefficient must be a non-empty rectangular list of lists")
    exprs = [[Expr(src) for src in row] for row in rows]
    for row in exprs:
        for expr in row:
            extra = expr.variables - set(argnames)
            if extra:
                raise ConfigError(
                    f"expression {expr.source!r} uses {sorted(extra)} but only {argnames} are available"
                )

    def fn(*args):
        kwargs = dict(zip(argnames, args))
        batch = _batch_shape(kwargs)
        out = np.empty(batch + (len(rows), len(rows[0])), dtype=float)
        for i, row in enumerate(exprs):
            for j, e in enumerate(row):
                out[..., i, j] = np.asarray(e(**kwargs), dtype=float)
        return out

    fn.sources = [list(row) for row in rows]
    fn.argnames = argnames
    return fn
