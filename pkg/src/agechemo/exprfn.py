"""Arithmetic expressions of a single age variable ``a``.

Scenario files describe model coefficients as strings like ``1/(20-5*a)``
or ``1+a^2/10``.  This module parses such strings into a small immutable
AST and evaluates them pointwise.  The grammar:

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ['^' unary]          (right associative)
    atom   := NUMBER | 'a' | NAME '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-a^2`` is ``-(a^2)``.
Built-in functions: sin, cos, exp, ln, sqrt, abs.  Evaluation that
leaves the real line (ln of a non-positive number, division by zero,
overflow to inf, nan) raises ExprDomainError at the offending node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}

VARIABLE = "a"


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed source text; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation left the real line; carries the offending subexpression."""

    def __init__(self, message: str, node: "Node"):
        super().__init__(f"{message} in '{pretty(node)}' (at offset {node.pos})")
        self.node = node


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    pos: int = field(compare=False)


@dataclass(frozen=True)
class Num(Node):
    value: float = 0.0


@dataclass(frozen=True)
class Var(Node):
    pass


@dataclass(frozen=True)
class Neg(Node):
    child: Node = None


@dataclass(frozen=True)
class BinOp(Node):
    op: str = ""
    left: Node = None
    right: Node = None


@dataclass(frozen=True)
class Call(Node):
    name: str = ""
    arg: Node = None


# --- tokenizer ------------------------------------------------------------

_OPERATORS = set("+-*/^(),")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    # (kind, lexeme, offset); kinds: num, name, op, end
    tokens = []
    i, nchar = 0, len(text)
    while i < nchar:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPERATORS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < nchar and text[i + 1].isdigit()):
            j = i
            while j < nchar and text[j].isdigit():
                j += 1
            if j < nchar and text[j] == ".":
                j += 1
                while j < nchar and text[j].isdigit():
                    j += 1
            if j < nchar and text[j] in "eE":
                k = j + 1
                if k < nchar and text[k] in "+-":
                    k += 1
                if k < nchar and text[k].isdigit():
                    j = k
                    while j < nchar and text[j].isdigit():
                        j += 1
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < nchar and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", nchar))
    return tokens


# --- parser ---------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, lex, pos = self.peek()
        if kind != "op" or lex != op:
            raise ExprSyntaxError(f"expected {op!r}", pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, lex, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {lex!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            kind, lex, pos = self.peek()
            if kind == "op" and lex in "+-":
                self.advance()
                node = BinOp(node.pos, lex, node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            kind, lex, pos = self.peek()
            if kind == "op" and lex in "*/":
                self.advance()
                node = BinOp(node.pos, lex, node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        kind, lex, pos = self.peek()
        if kind == "op" and lex == "-":
            self.advance()
            return Neg(pos, self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        kind, lex, pos = self.peek()
        if kind == "op" and lex == "^":
            self.advance()
            # exponent may carry its own unary minus: a^-2
            return BinOp(node.pos, "^", node, self.unary())
        return node

    def atom(self) -> Node:
        kind, lex, pos = self.advance()
        if kind == "num":
            return Num(pos, float(lex))
        if kind == "name":
            nkind, nlex, npos = self.peek()
            if nkind == "op" and nlex == "(":
                if lex not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {lex!r}", pos)
                self.advance()
                arg = self.expr()
                ckind, clex, cpos = self.peek()
                if ckind == "op" and clex == ",":
                    raise ExprSyntaxError(
                        f"{lex} takes exactly one argument", cpos
                    )
                self.expect_op(")")
                return Call(pos, lex, arg)
            if lex != VARIABLE:
                raise ExprSyntaxError(f"unknown identifier {lex!r}", pos)
            return Var(pos)
        if kind == "op" and lex == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected {lex!r}" if lex else "unexpected end of input", pos)


def parse(text: str) -> Node:
    """Parse source text into an AST; raises ExprSyntaxError on bad input."""
    return _Parser(text).parse()


# --- evaluation -----------------------------------------------------------


def _check_real(value: float, node: Node) -> float:
    if not math.isfinite(value):
        raise ExprDomainError("result is not finite", node)
    return value


def evaluate(node: Node, a: float) -> float:
    """Evaluate the AST at age ``a``; raises ExprDomainError off the real line."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return a
    if isinstance(node, Neg):
        return -evaluate(node.child, a)
    if isinstance(node, Call):
        x = evaluate(node.arg, a)
        try:
            return _check_real(FUNCTIONS[node.name](x), node)
        except ValueError:
            raise ExprDomainError(f"{node.name} of {x!r} is undefined", node) from None
        except OverflowError:
            raise ExprDomainError(f"{node.name} of {x!r} overflows", node) from None
    if isinstance(node, BinOp):
        lhs = evaluate(node.left, a)
        rhs = evaluate(node.right, a)
        try:
            if node.op == "+":
                value = lhs + rhs
            elif node.op == "-":
                value = lhs - rhs
            elif node.op == "*":
                value = lhs * rhs
            elif node.op == "/":
                value = lhs / rhs
            else:
                value = lhs ** rhs
        except ZeroDivisionError:
            raise ExprDomainError("division by zero", node) from None
        except OverflowError:
            raise ExprDomainError("overflow", node) from None
        except ValueError:
            raise ExprDomainError("fractional power of a negative number", node) from None
        if isinstance(value, complex):
            raise ExprDomainError("complex result", node)
        return _check_real(value, node)
    raise TypeError(f"not an expression node: {node!r}")


def compile_fn(text: str):
    """Parse once and return a float -> float callable."""
    node = parse(text)
    return lambda a: evaluate(node, a)


# --- printing -------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _pretty(node: Node) -> tuple[str, int]:
    # returns (text, precedence of the produced expression)
    if isinstance(node, Num):
        return _format_number(node.value), _PREC["atom"]
    if isinstance(node, Var):
        return VARIABLE, _PREC["atom"]
    if isinstance(node, Call):
        text, _ = _pretty(node.arg)
        return f"{node.name}({text})", _PREC["atom"]
    if isinstance(node, Neg):
        text, prec = _pretty(node.child)
        if prec < _PREC["neg"]:
            text = f"({text})"
        return f"-{text}", _PREC["neg"]
    if isinstance(node, BinOp):
        lhs, lp = _pretty(node.left)
        rhs, rp = _pretty(node.right)
        prec = _PREC[node.op]
        if node.op == "^":
            # right associative; parenthesise a composite base
            if lp <= prec:
                lhs = f"({lhs})"
            if rp < prec:
                rhs = f"({rhs})"
        else:
            if lp < prec:
                lhs = f"({lhs})"
            # '-' and '/' do not reassociate on the right
            if rp < prec or (rp == prec and node.op in "-/"):
                rhs = f"({rhs})"
        return f"{lhs}{node.op}{rhs}", prec
    raise TypeError(f"not an expression node: {node!r}")


def pretty(node: Node) -> str:
    """Render the AST back to source; parse(pretty(x)) reproduces x."""
    return _pretty(node)[0]
