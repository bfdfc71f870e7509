import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levyfilter.exprs import Expr, matrix_field, vector_field


def test_expr_scalar_eval():
    e = Expr("sin(z[0]) + 2*t")
    assert e(t=0.5, z=np.array([0.0])) == pytest.approx(1.0)
    assert e(t=0.0, z=np.array([math.pi / 2])) == pytest.approx(1.0)


def test_expr_constants_and_unary():
    assert Expr("-pi/2")() == pytest.approx(-math.pi / 2)
    assert Expr("exp(1.0) - e")() == pytest.approx(0.0)


def test_expr_batch_broadcast():
    e = Expr("x[0] * z[0]")
    x = np.array([[1.0], [2.0], [3.0]])
    z = np.array([[4.0], [5.0], [6.0]])
    np.testing.assert_allclose(e(x=x, z=z), [4.0, 10.0, 18.0])


def test_expr_rejects_non_whitelisted():
    for bad in [
        "__import__('os')",
        "x[0] ** 2",
        "foo(x[0])",
        "x[i]",
        "x[0]; x[1]",
        "lambda v: v",
        "y[0]",
    ]:
        with pytest.raises(ValueError):
            Expr(bad)


def test_expr_missing_variable_at_call():
    e = Expr("x[0] + z[0]")
    with pytest.raises(ValueError):
        e(x=np.array([1.0]))


def test_expr_variables_tracked():
    assert Expr("sin(x[0]) + t").variables == frozenset({"x", "t"})


@given(
    c0=st.floats(-10, 10, allow_nan=False),
    c1=st.floats(-10, 10, allow_nan=False),
    v=st.floats(-100, 100, allow_nan=False),
)
def test_expr_affine_matches_python(c0, c1, v):
    e = Expr(f"{c0!r} + {c1!r}*x[0]")
    got = float(e(x=np.array([v])))
    assert got == pytest.approx(c0 + c1 * v, rel=1e-12, abs=1e-12)


def test_vector_field_broadcasts_constant_components():
    f = vector_field(["1.0", "x[0]"], ("x", "z"))
    x = np.arange(8.0).reshape(4, 2)
    z = np.zeros((4, 1))
    out = f(x, z)
    assert out.shape == (4, 2)
    np.testing.assert_allclose(out[:, 0], 1.0)
    np.testing.assert_allclose(out[:, 1], x[:, 0])


def test_vector_field_multi_axis_batch():
    f = vector_field(["sin(z[0])"], ("x", "z"))
    z = np.zeros((3, 5, 1))
    out = f(np.zeros((3, 5, 1)), z)
    assert out.shape == (3, 5, 1)


def test_matrix_field_shape_and_values():
    g = matrix_field([["1.0", "0.0"], ["x[0]", "2.0"]], ("x", "z"))
    out = g(np.array([[3.0]]), np.zeros((1, 1)))
    assert out.shape == (1, 2, 2)
    np.testing.assert_allclose(out[0], [[1.0, 0.0], [3.0, 2.0]])


def test_matrix_field_rejects_ragged_rows():
    with pytest.raises(ValueError):
        matrix_field([["1.0", "0.0"], ["x[0]"]], ("x", "z"))
