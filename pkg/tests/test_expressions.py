import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algsode.errors import EvalError, ExpressionError, ParseError
from algsode import expressions as ex
from algsode.expressions import ScalarField


def test_parse_number_and_symbol():
    assert ex.parse("2.5") == ex.Num(2.5)
    assert ex.parse("q1") == ex.Sym("q1")
    assert ex.parse("1e-3") == ex.Num(1e-3)


def test_precedence_and_associativity():
    assert ex.parse("1+2*3") == ex.Bin("+", ex.Num(1), ex.Bin("*", ex.Num(2), ex.Num(3)))
    # '-' is left associative
    assert ex.parse("1-2-3") == ex.Bin("-", ex.Bin("-", ex.Num(1), ex.Num(2)), ex.Num(3))
    # '^' is right associative
    assert ex.parse("2^3^2") == ex.Bin("^", ex.Num(2), ex.Bin("^", ex.Num(3), ex.Num(2)))


def test_unary_minus_binds_tighter_than_power():
    # -q1^2 == (-q1)^2 per the grammar
    node = ex.parse("-q1^2")
    assert node == ex.Bin("^", ex.Neg(ex.Sym("q1")), ex.Num(2))
    f = ex.compile_fn(node, ("q1",), {})
    assert f([3.0]) == 9.0


def test_function_call_and_unknown_function():
    assert ex.parse("sin(q1)") == ex.Call("sin", ex.Sym("q1"))
    with pytest.raises(ParseError) as err:
        ex.parse("tan(q1)")
    assert err.value.token == "tan"
    assert err.value.line == 1


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as err:
        ex.parse("1 +\n2 * $")
    assert err.value.line == 2
    assert err.value.col == 5
    assert err.value.token == "$"


def test_trailing_input_rejected():
    with pytest.raises(ParseError):
        ex.parse("1 2")
    with pytest.raises(ParseError):
        ex.parse("(1+2")


def test_guarded_evaluation():
    f = ScalarField.parse("1/q1", ("q1",))
    with pytest.raises(EvalError):
        f([0.0])
    g = ScalarField.parse("sqrt(q1)", ("q1",))
    with pytest.raises(EvalError):
        g([-1.0])
    assert g([4.0]) == 2.0


def test_parameters_bound_at_build_time():
    f = ScalarField.parse("omega^2 * q1", ("q1",), {"omega": 3.0})
    assert f([2.0]) == 18.0
    with pytest.raises(ExpressionError):
        ScalarField.parse("mystery * q1", ("q1",))


def test_pythagoras_on_samples():
    f = ScalarField.parse("sin(q1)^2 + cos(q1)^2", ("q1",))
    for i in range(100):
        x = -5.0 + 0.1 * i
        assert abs(f([x]) - 1.0) <= 1e-14


# --- printer round trip ------------------------------------------------------

_names = st.sampled_from(["q1", "q2", "y1", "y2", "w"])


def _asts():
    leaves = st.one_of(
        st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(ex.Num),
        _names.map(ex.Sym),
    )

    def extend(children):
        return st.one_of(
            children.map(ex.Neg),
            st.tuples(st.sampled_from("+-*/^"), children, children).map(
                lambda t: ex.Bin(t[0], t[1], t[2])),
            st.tuples(st.sampled_from(ex.FUNCTIONS), children).map(
                lambda t: ex.Call(t[0], t[1])),
        )

    return st.recursive(leaves, extend, max_leaves=25)


@settings(max_examples=300, deadline=None)
@given(_asts())
def test_print_parse_round_trip(ast):
    printed = ex.to_str(ast)
    reparsed = ex.parse(printed)
    assert reparsed == ast
    # idempotent on the printed form
    assert ex.to_str(reparsed) == printed


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="q1y2+-*/^(). snicoexpqrt_", max_size=30))
def test_parser_total_on_junk(text):
    # must either parse or raise ParseError, never crash differently
    try:
        ex.parse(text)
    except ParseError:
        pass


# --- symbolic differentiation -------------------------------------------------

@pytest.mark.parametrize("src,wrt,at,expected", [
    ("q1^2", "q1", [3.0], 6.0),
    ("sin(q1)", "q1", [0.7], math.cos(0.7)),
    ("cos(q1)", "q1", [0.7], -math.sin(0.7)),
    ("exp(2*q1)", "q1", [0.3], 2 * math.exp(0.6)),
    ("sqrt(q1)", "q1", [4.0], 0.25),
    ("q1/q2", "q2", [1.0, 2.0], -0.25),
    ("q1*q2 + q2^3", "q2", [2.0, 3.0], 2.0 + 27.0),
    ("q1^2", "q2", [5.0, 1.0], 0.0),
])
def test_derivative_matches_hand_values(src, wrt, at, expected):
    f = ScalarField.parse(src, ("q1", "q2")[: len(at)])
    df = f.derivative(wrt)
    assert df is not None
    assert df(at) == pytest.approx(expected, abs=1e-12)


def test_derivative_falls_back_on_symbolic_exponent():
    f = ScalarField.parse("q1^q2", ("q1", "q2"))
    assert f.derivative("q1") is None
    # but a power not involving the variable is just a constant
    g = ScalarField.parse("q2^q2 + q1", ("q1", "q2"))
    dg = g.derivative("q1")
    assert dg is not None and dg([1.0, 2.0]) == 1.0


@settings(max_examples=150, deadline=None)
@given(_asts())
def test_derivative_agrees_with_finite_differences(ast):
    names = ("q1", "q2", "y1", "y2", "w")
    f = ScalarField(ast, names)
    df = f.derivative("q1")
    if df is None:
        return
    x = [0.7, 0.3, 0.2, -0.4, 1.1]
    h = 1e-6
    xp, xm = list(x), list(x)
    xp[0] += h
    xm[0] -= h
    try:
        fd = (f(xp) - f(xm)) / (2 * h)
        analytic = df(x)
    except (EvalError, OverflowError):
        return
    if not (math.isfinite(fd) and math.isfinite(analytic)):
        return
    scale = max(1.0, abs(f(x)), abs(analytic))
    assert abs(fd - analytic) <= 1e-4 * scale
