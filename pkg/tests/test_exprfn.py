"""Expression language: parsing, evaluation, printing, and error surfaces."""

import math

import numpy as np
import pytest

from agechemo.exprfn import (
    BinOp,
    Call,
    ExprDomainError,
    ExprError,
    ExprSyntaxError,
    Neg,
    Num,
    Var,
    compile_fn,
    evaluate,
    parse,
    pretty,
)


def test_literal_and_variable():
    assert compile_fn("2.5")(0.0) == 2.5
    assert compile_fn("a")(1.25) == 1.25


def test_coefficient_strings_of_the_reference_model():
    mu = compile_fn("1/(20 - 5*a)")
    assert mu(0.0) == pytest.approx(1 / 20)
    assert mu(2.0) == pytest.approx(1 / 10)
    p = compile_fn("1 + a^2/10")
    assert p(2.0) == pytest.approx(1.4)


def test_precedence_and_associativity():
    assert compile_fn("2 + 3*4")(0) == 14
    assert compile_fn("2*3^2")(0) == 18
    assert compile_fn("(2 + 3)*4")(0) == 20
    assert compile_fn("6/3/2")(0) == 1.0
    assert compile_fn("2 - 3 - 4")(0) == -5
    assert compile_fn("2^3^2")(0) == 512  # right associative
    assert compile_fn("-a^2")(3) == -9  # power binds tighter than unary minus
    assert compile_fn("2^-1")(0) == 0.5


def test_functions_match_math_module():
    for name, fn in (("sin", math.sin), ("cos", math.cos), ("exp", math.exp)):
        got = compile_fn(f"{name}(a)")(0.7)
        assert got == pytest.approx(fn(0.7), rel=1e-15)
    assert compile_fn("ln(a)")(2.0) == pytest.approx(math.log(2.0))
    assert compile_fn("sqrt(a)")(2.25) == 1.5
    assert compile_fn("abs(-a)")(3.0) == 3.0


@pytest.mark.parametrize(
    "text",
    ["", "2 *", "sin()", "sin(a, a)", "foo(a)", "b + 1", "(2 + 3", ")", "1 ..2", "2 3"],
)
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError) as info:
        compile_fn(text)
    assert info.value.offset >= 0


def test_arity_error_names_the_function():
    with pytest.raises(ExprSyntaxError, match="exactly one argument"):
        compile_fn("sin(a, 2)")


@pytest.mark.parametrize(
    ("text", "x"),
    [
        ("ln(a - 1)", 0.5),
        ("1/(a - 1)", 1.0),
        ("sqrt(a - 2)", 1.0),
        ("(a - 2)^0.5", 1.0),
        ("exp(1000*a)", 1.0),
    ],
)
def test_domain_errors(text, x):
    fn = compile_fn(text)
    with pytest.raises(ExprDomainError):
        fn(x)


def test_domain_error_message_points_at_subexpression():
    fn = compile_fn("1 + ln(a - 1)")
    with pytest.raises(ExprDomainError, match="ln"):
        fn(0.0)


def test_errors_are_value_errors():
    assert issubclass(ExprSyntaxError, ExprError)
    assert issubclass(ExprDomainError, ExprError)
    assert issubclass(ExprError, ValueError)


def test_pretty_is_minimal_and_reparses():
    cases = {
        "2 + 3*4": "2+3*4",
        "(2 + 3)*4": "(2+3)*4",
        "-(a^2)": "-a^2",
        "(2^3)^2": "(2^3)^2",  # parens needed against right associativity
        "2^(3^2)": "2^3^2",
        "a - (1 - a)": "a-(1-a)",
        "a/(2*a)": "a/(2*a)",
        "1 + a^2/10": "1+a^2/10",
    }
    for source, expected in cases.items():
        assert pretty(parse(source)) == expected


def _random_node(rng, depth):
    """Random AST over the safe operators (no division, bounded exponents)."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return Var(pos=0)
        return Num(pos=0, value=float(round(rng.uniform(0.25, 3.0), 3)))
    kind = rng.integers(0, 6)
    if kind == 0:
        return Neg(pos=0, child=_random_node(rng, depth - 1))
    if kind == 1:
        return Call(pos=0, name=str(rng.choice(["sin", "cos", "abs"])), arg=_random_node(rng, depth - 1))
    if kind == 2:
        return BinOp(pos=0, op="^", left=_random_node(rng, depth - 1), right=Num(pos=0, value=float(rng.integers(1, 4))))
    op = str(rng.choice(["+", "-", "*"]))
    return BinOp(pos=0, op=op, left=_random_node(rng, depth - 1), right=_random_node(rng, depth - 1))


def test_pretty_round_trip_property():
    rng = np.random.default_rng(20260816)
    for _ in range(300):
        node = _random_node(rng, 4)
        text = pretty(node)
        reparsed = parse(text)
        assert pretty(reparsed) == text  # printing is a fixed point
        for x in (0.3, 1.1, 1.9):
            assert evaluate(reparsed, x) == pytest.approx(evaluate(node, x), rel=1e-12, abs=1e-12)


def test_evaluation_matches_python_interpreter():
    """Random expression strings evaluated against Python's own parser."""
    rng = np.random.default_rng(7)
    env = {"sin": math.sin, "cos": math.cos, "abs": abs}

    def sample(depth):
        if depth == 0 or rng.random() < 0.3:
            return "a" if rng.random() < 0.5 else f"{rng.uniform(0.5, 2.0):.3f}"
        kind = rng.integers(0, 5)
        if kind == 0:
            return f"-{sample(depth - 1)}"
        if kind == 1:
            fn = rng.choice(["sin", "cos", "abs"])
            return f"{fn}({sample(depth - 1)})"
        if kind == 2:
            return f"({sample(depth - 1)})^{rng.integers(1, 4)}"
        op = rng.choice(["+", "-", "*"])
        return f"({sample(depth - 1)} {op} {sample(depth - 1)})"

    for _ in range(300):
        text = sample(4)
        fn = compile_fn(text)
        ref = eval(text.replace("^", "**"), {"__builtins__": {}}, env | {"a": 0.0})
        for x in (0.25, 0.8, 1.75):
            expected = eval(text.replace("^", "**"), {"__builtins__": {}}, env | {"a": x})
            assert fn(x) == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert isinstance(ref, float)
