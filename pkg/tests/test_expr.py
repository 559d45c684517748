"""Expression engine: tokenizer, parser, evaluator, printer."""

import math

import numpy as np
import pytest

from charstoch import (
    ArityMismatch,
    EvalDomainError,
    ExprSyntaxError,
    IllegalCharacter,
    UnknownFunction,
    UnknownVariable,
    eval_expr,
    expr_to_str,
    numeric_partial,
    parse,
    variables,
)
from charstoch.expr import BinOp, Call, Const, Neg, Var, tokenize

XU = frozenset({"x1", "x2", "t", "u"})


def ev(src, **bindings):
    return eval_expr(parse(src, XU), bindings)


def test_number_token_forms():
    for src, want in [("3", 3.0), ("3.5", 3.5), (".5", 0.5), ("2.", 2.0),
                      ("1e3", 1000.0), ("2.5E-2", 0.025), ("1.e2", 100.0)]:
        assert ev(src) == want


def test_token_positions_are_byte_offsets():
    toks = tokenize("x1 + sin(t)")
    assert [(t.text, t.pos) for t in toks] == [
        ("x1", 0), ("+", 3), ("sin", 5), ("(", 8), ("t", 9), (")", 10)]


def test_operator_precedence_and_associativity():
    assert ev("1+2*3") == 7.0
    assert ev("2*3^2") == 18.0
    assert ev("2^3^2") == 512.0  # right-associative power
    assert ev("10-3-2") == 5.0   # left-associative subtraction
    assert ev("12/3/2") == 2.0
    assert ev("(1+2)*3") == 9.0


def test_unary_minus_binds_looser_than_power():
    assert ev("-2^2") == -4.0
    assert ev("(-2)^2") == 4.0
    assert ev("-x1^2", x1=3.0) == -9.0
    assert ev("2^-1") == 0.5


def test_functions_evaluate():
    assert ev("sin(0)") == 0.0
    assert ev("cos(0)") == 1.0
    assert ev("exp(1)") == pytest.approx(math.e, rel=1e-15)
    assert ev("log(exp(2))") == pytest.approx(2.0, rel=1e-15)
    assert ev("tanh(100)") == pytest.approx(1.0)
    assert ev("sqrt(2)") == pytest.approx(math.sqrt(2), rel=1e-15)
    assert ev("abs(-3.5)") == 3.5


def test_vectorized_evaluation_broadcasts():
    e = parse("u*sin(x1)", XU)
    x = np.linspace(-1, 1, 7)
    got = eval_expr(e, {"x1": x, "u": 2.0})
    np.testing.assert_allclose(got, 2.0 * np.sin(x), rtol=1e-15)


def test_illegal_character_reports_offset():
    with pytest.raises(IllegalCharacter) as ei:
        parse("x1 @ 2", XU)
    assert "offset 3" in str(ei.value)


def test_double_dot_number_is_rejected():
    # "3..5" lexes as the number "3." followed by an illegal bare dot
    with pytest.raises(IllegalCharacter) as ei:
        parse("3..5", XU)
    assert "offset 2" in str(ei.value)


def test_syntax_errors():
    for bad in ["", "1+", "(1+2", "1 2", "*3", "sin 2", "()"]:
        with pytest.raises(ExprSyntaxError):
            parse(bad, XU)


def test_unknown_variable_mentions_name_and_offset():
    with pytest.raises(UnknownVariable) as ei:
        parse("x1 + y", XU)
    msg = str(ei.value)
    assert "y" in msg and "offset 5" in msg


def test_variable_not_allowed_in_context():
    # x1 is a space variable; velocity expressions only see t and u
    with pytest.raises(UnknownVariable):
        parse("x1", frozenset({"t", "u"}))


def test_unknown_function():
    with pytest.raises(UnknownFunction):
        parse("sinh(x1)", XU)


def test_function_arity():
    with pytest.raises(ArityMismatch):
        parse("sin(x1, x2)", XU)


def test_eval_domain_errors():
    for bad in ["1/0", "log(0)", "log(-1)", "sqrt(-1)", "0^-1", "(0-2)^0.5"]:
        with pytest.raises(EvalDomainError):
            ev(bad)


def test_domain_error_on_any_array_element():
    e = parse("log(x1)", XU)
    with pytest.raises(EvalDomainError):
        eval_expr(e, {"x1": np.array([1.0, -1.0, 2.0])})


def test_variables_reports_free_names():
    assert variables(parse("u*sin(x1)+t", XU)) == frozenset({"u", "x1", "t"})
    assert variables(parse("1+2", XU)) == frozenset()


def test_printer_output_reparses_to_same_ast():
    cases = ["-x1^2", "2^3^2", "1-(2-3)", "x1*(x2+1)", "-(x1+1)",
             "sin(x1)^2+cos(x1)^2", "2^-x1", "(x1/x2)/t", "x1-x2-t"]
    for src in cases:
        e = parse(src, XU)
        assert parse(expr_to_str(e), XU) == e


def _random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return Const(float(rng.integers(1, 5)) + round(rng.random(), 3))
        return Var(rng.choice(["x1", "x2", "t", "u"]))
    r = rng.random()
    if r < 0.15:
        return Neg(_random_expr(rng, depth - 1))
    if r < 0.35:
        fn = rng.choice(["sin", "cos", "exp", "tanh", "abs"])
        return Call(fn, _random_expr(rng, depth - 1))
    op = rng.choice(["+", "-", "*", "/"])
    return BinOp(op, _random_expr(rng, depth - 1), _random_expr(rng, depth - 1))


def test_print_parse_round_trip_is_value_exact():
    """1000 random trees: the printed form evaluates identically."""
    rng = np.random.default_rng(20240811)
    for _ in range(1000):
        e = _random_expr(rng, 4)
        back = parse(expr_to_str(e), XU)
        for _ in range(10):
            env = {v: float(rng.uniform(0.1, 3.0)) for v in ("x1", "x2", "t", "u")}
            try:
                want = eval_expr(e, env)
            except EvalDomainError:
                continue
            got = eval_expr(back, env)
            assert got == pytest.approx(want, rel=1e-12)


def test_numeric_partial_matches_analytic():
    e = parse("u^2*sin(x1)", XU)
    env = {"u": 1.3, "x1": 0.7}
    du = numeric_partial(e, "u", env)
    dx = numeric_partial(e, "x1", env)
    assert du == pytest.approx(2 * 1.3 * math.sin(0.7), rel=1e-8)
    assert dx == pytest.approx(1.3 ** 2 * math.cos(0.7), rel=1e-8)
