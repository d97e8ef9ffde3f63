"""Parser, evaluator and model-file validation."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from finslerlab import expr
from finslerlab.errors import EvalError, ModelSyntaxError, ModelValidationError
from finslerlab.expr import Bin, Call, Num, Var

EXAMPLE_F = "sqrt(x3^2*((x1^2*y2^2 + 2*y1*y2)/y1)^2 + y3^2)"

MINI_MODEL = """
# comment line
name = mini
dim = 2
F = sqrt(y1^2 + y2^2)
phi1 = -x1
phi2 = -x2
domain = y1^2 + y2^2
param scale = 1.5
"""


def test_parse_euclid_norm_structure():
    ast = expr.parse_expression("sqrt(y1^2 + y2^2)")
    assert isinstance(ast, Call) and ast.fn == "sqrt"
    assert isinstance(ast.a, Bin) and ast.a.op == "+"
    assert ast.a.a == Bin("^", Var("y", 1), Num(2.0))
    # homogeneity of degree one in y
    v1 = expr.evaluate(ast, [0.0, 0.0], [0.6, 0.8])
    v2 = expr.evaluate(ast, [0.0, 0.0], [1.2, 1.6])
    assert v2 == pytest.approx(2 * v1, rel=1e-15)


def test_precedence_and_unary_minus():
    assert expr.evaluate(expr.parse_expression("-y1^2"), [], [3.0]) == -9.0
    assert expr.evaluate(expr.parse_expression("2^-2"), [], []) == 0.25
    assert expr.evaluate(expr.parse_expression("2*y1^2 + 1"), [], [2.0]) == 9.0
    assert expr.evaluate(expr.parse_expression("2^3^1"), [], []) == 8.0
    assert expr.evaluate(expr.parse_expression("6/3/2"), [], []) == 1.0


def test_evaluate_example_metric_at_p0():
    ast = expr.parse_expression(EXAMPLE_F)
    got = expr.evaluate(ast, [1.0, 0.0, 1.0], [1.0, 1.0, 1.0])
    assert got == pytest.approx(math.sqrt(10), rel=1e-15)


def test_evaluate_pairing_expression_at_p0():
    ast = expr.parse_expression("x3*y3")
    assert expr.evaluate(ast, [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]) == 1.0


def test_eval_errors():
    with pytest.raises(EvalError):
        expr.evaluate(expr.parse_expression("sqrt(0 - 1)"), [], [])
    with pytest.raises(EvalError):
        expr.evaluate(expr.parse_expression("1/(y1 - y1)"), [], [1.0])
    with pytest.raises(EvalError):
        expr.evaluate(expr.parse_expression("0^(0-2)"), [], [])
    with pytest.raises(EvalError):
        expr.evaluate(expr.parse_expression("(0-2)^0.5"), [], [])


def test_syntax_error_positions():
    with pytest.raises(ModelSyntaxError) as ei:
        expr.parse_expression("y1 + * 2")
    assert ei.value.col == 6
    with pytest.raises(ModelSyntaxError):
        expr.parse_expression("sqrt(y1")
    with pytest.raises(ModelSyntaxError) as ei:
        expr.parse_expression("foo(y1)")
    assert "unknown function" in str(ei.value)
    with pytest.raises(ModelSyntaxError):
        expr.parse_expression("y1 y2")


def test_model_file_parses_and_validates():
    m = expr.parse(MINI_MODEL)
    assert m.name == "mini" and m.dim == 2
    assert len(m.phi) == 2 and len(m.domain) == 1
    assert m.params == {"scale": 1.5}
    assert m.in_domain([0.0, 0.0], [1.0, 0.0])
    assert not m.in_domain([0.0, 0.0], [0.0, 0.0])


def test_model_file_shipped_example_constraints():
    from finslerlab import models
    m = models.builtin_model("matsumoto_example")
    assert m.dim == 3
    assert len(m.domain) == 4
    assert m.in_domain([1.0, 0.0, 1.0], [1.0, 1.0, 1.0])
    assert not m.in_domain([0.0, 0.0, 1.0], [1.0, 1.0, 1.0])   # x1 = 0
    assert not m.in_domain([1.0, 0.0, 1.0], [1.0, 0.0, 1.0])   # y2 = 0


def test_phi_must_not_depend_on_directions():
    bad = MINI_MODEL.replace("phi2 = -x2", "phi2 = y1")
    with pytest.raises(ModelValidationError) as ei:
        expr.parse(bad)
    assert "y1" in str(ei.value)


def test_dim_must_match_highest_variable():
    bad = MINI_MODEL.replace("dim = 2", "dim = 3").replace("phi2 = -x2",
                                                           "phi2 = -x2\nphi3 = 0")
    with pytest.raises(ModelValidationError) as ei:
        expr.parse(bad)
    assert "highest variable index" in str(ei.value)

    bad = MINI_MODEL.replace("F = sqrt(y1^2 + y2^2)", "F = sqrt(y1^2 + y3^2)")
    with pytest.raises(ModelValidationError):
        expr.parse(bad)


def test_missing_sections_rejected():
    with pytest.raises(ModelValidationError):
        expr.parse("name = x\ndim = 2\nphi1 = 0\nphi2 = 0\n")  # no F
    with pytest.raises(ModelValidationError):
        expr.parse("name = x\ndim = 2\nF = sqrt(y1^2 + y2^2)\nphi1 = 0\n")


def test_undeclared_parameter_rejected():
    bad = MINI_MODEL.replace("param scale = 1.5", "")
    bad = bad.replace("F = sqrt(y1^2 + y2^2)", "F = scale*sqrt(y1^2 + y2^2)")
    with pytest.raises(ModelValidationError) as ei:
        expr.parse(bad)
    assert "scale" in str(ei.value)


def test_duplicate_phi_rejected():
    bad = MINI_MODEL + "\nphi1 = 0\n"
    with pytest.raises(ModelSyntaxError):
        expr.parse(bad)


def test_print_parse_round_trip_on_example():
    ast = expr.parse_expression(EXAMPLE_F)
    printed = expr.to_source(ast)
    assert expr.parse_expression(printed) == ast
    assert expr.to_source(expr.parse_expression(printed)) == printed


# -- random AST round trips --------------------------------------------------

def _asts(depth):
    leaf = st.one_of(
        st.floats(0.0, 9.0).map(lambda v: Num(round(v, 2))),
        st.sampled_from([Var("x", 1), Var("y", 1), Var("y", 2)]),
    )
    if depth == 0:
        return leaf
    sub = _asts(depth - 1)
    return st.one_of(
        leaf,
        st.tuples(st.sampled_from("+-*/^"), sub, sub).map(lambda t: Bin(*t)),
        sub.map(lambda a: expr.Neg(a)),
        sub.map(lambda a: Call("sqrt", a)),
    )


@settings(max_examples=300, deadline=None)
@given(_asts(3))
def test_print_parse_round_trip_random(ast):
    printed = expr.to_source(ast)
    assert expr.parse_expression(printed) == ast


@settings(max_examples=100, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.3, 2.0), st.floats(0.3, 2.0))
def test_real_and_jet_evaluation_agree(x1, y1, y2):
    """Value slot of a jet evaluation equals plain float evaluation."""
    from finslerlab.numkit import lift
    ast = expr.parse_expression("sqrt(x1^2*y1^2 + y2^2) + x1*y2/y1")
    fval = expr.evaluate(ast, [x1, 0.0], [y1, y2])
    coords = lift([x1, 0.0], [y1, y2], order=2)
    jval = expr.evaluate(ast, coords[:2], coords[2:]).value
    assert abs(jval - fval) <= 1e-14 * max(1.0, abs(fval))
