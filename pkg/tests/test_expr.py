import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from pwsgrazing import expr as ex

X, Y = sympy.symbols("x y")


def to_sympy(e):
    if isinstance(e, ex.Num):
        return sympy.Float(e.value) if e.value != int(e.value) else sympy.Integer(int(e.value))
    if isinstance(e, ex.Var):
        return X if e.name == "x" else Y
    if isinstance(e, ex.Neg):
        return -to_sympy(e.arg)
    if isinstance(e, ex.Pow):
        return to_sympy(e.base) ** e.exponent
    if isinstance(e, ex.Func):
        return getattr(sympy, e.name)(to_sympy(e.arg))
    a, b = to_sympy(e.left), to_sympy(e.right)
    return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[e.op]


leaves = st.one_of(
    st.sampled_from(["x", "y"]),
    st.integers(0, 9).map(str),
    st.sampled_from(["0.5", "1.25", "2e-1"]),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda t: f"({t[0]}{t[1]}{t[2]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(st.sampled_from(ex.FUNCTIONS), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"-{c}"),
    )


exprs = st.recursive(leaves, _combine, max_leaves=8)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@pytest.mark.parametrize(
    "text, x, y, value",
    [
        ("1+2*3", 0, 0, 7.0),
        ("(1+2)*3", 0, 0, 9.0),
        ("x^3 - y", 2, 1, 7.0),
        ("-x^2", 2, 0, 4.0),  # unary minus binds tighter than ^
        ("-(x^2)", 2, 0, -4.0),
        ("8/4/2", 0, 0, 1.0),
        ("2-3-4", 0, 0, -5.0),
        ("exp(0)+sin(0)+cos(0)", 0, 0, 2.0),
        ("1.5e1", 0, 0, 15.0),
        ("x*y^0", 3, 0, 3.0),
    ],
)
def test_evaluate_table(text, x, y, value):
    assert ex.evaluate(ex.parse(text), x, y) == value


@pytest.mark.parametrize("text", ["1+", "(x", "x)", "foo(x)", "x^-1", "x^1.5", "2 3", "", "sin x", "z"])
def test_syntax_errors(text):
    with pytest.raises(ex.ExprSyntaxError) as err:
        ex.parse(text)
    assert err.value.offset >= 0


def test_eval_error_names_node():
    with pytest.raises(ex.ExprEvalError) as err:
        ex.evaluate(ex.parse("1/(x-1)"), 1.0, 0.0)
    assert "x" in str(err.value)


@settings(max_examples=150, deadline=None)
@given(exprs, points)
def test_print_parse_roundtrip(text, p):
    e = ex.parse(text)
    again = ex.parse(ex.to_string(e))
    try:
        a = ex.evaluate(e, *p)
    except ex.ExprEvalError:
        return
    b = ex.evaluate(again, *p)
    assert close(a, b, 1e-12)
    assert ex.to_string(again) == ex.to_string(e)


@settings(max_examples=120, deadline=None)
@given(exprs, points)
def test_evaluate_matches_sympy(text, p):
    e = ex.parse(text)
    try:
        a = ex.evaluate(e, *p)
    except ex.ExprEvalError:
        return
    b = float(to_sympy(e).subs({X: p[0], Y: p[1]}).evalf(30))
    assert close(a, b, 1e-10)


@settings(max_examples=60, deadline=None)
@given(exprs, points, st.integers(0, 5))
def test_jet_matches_sympy_derivatives(text, p, order):
    e = ex.parse(text)
    try:
        jt = ex.jet(e, p[0], p[1], order)
    except ex.ExprEvalError:
        return
    s = to_sympy(e)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            want = float(sympy.diff(s, X, i, Y, j).subs({X: p[0], Y: p[1]}).evalf(30)) if i + j else float(
                s.subs({X: p[0], Y: p[1]}).evalf(30)
            )
            assert close(jt.partial(i, j), want, 1e-7)


@settings(max_examples=80, deadline=None)
@given(exprs, points)
def test_compiled_matches_tree(text, p):
    e = ex.parse(text)
    try:
        a = ex.evaluate(e, *p)
    except ex.ExprEvalError:
        return
    try:
        b = ex.compile_scalar(e)(*p)
    except (ZeroDivisionError, OverflowError, ValueError):
        return
    assert close(a, b, 1e-12)


def test_substitute_and_constants():
    e = ex.parse("x*y+1")
    s = ex.substitute(e, y=ex.parse("x+1"))
    assert ex.evaluate(s, 2.0, 99.0) == 7.0
    assert ex.is_constant_in(ex.parse("y^2+3"), "x")
    assert not ex.is_constant_in(ex.parse("sin(x)"), "x")


def test_polynomial_jet_exact_high_order():
    jt = ex.jet(ex.parse("(x-0.5)^6"), 0.5, 0.0, 8)
    d = jt.x_derivatives()
    assert np.all(d[:6] == 0.0)
    assert math.isclose(d[6], 720.0)
    assert d[7] == 0.0
