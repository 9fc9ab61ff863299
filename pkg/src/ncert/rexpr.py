"""Syntax trees, parser, and printer for noncommutative rational expressions.

Grammar (whitespace-insensitive, explicit ``*`` for products):

    matexpr := expr | '[' row (',' row)* ']'
    row     := '[' expr (',' expr)* ']'
    expr    := term (('+'|'-') term)*
    term    := ['-'] factor ('*' factor)*
    factor  := atom ('^' ('-1' | '*' | INT))*
    atom    := NUMBER | 'i' | VAR | '(' expr ')'
    VAR     := 'x' INT | 'u' INT | 'u' INT '*'

Subtraction and unary minus are sugar for scalar -1 products; ``^k`` with a
positive integer desugars to a repeated product; sums/products whose children
are all scalars fold to a single scalar (this is how ``2 + 3*i`` becomes one
complex literal).  A ``u<j>*`` token is only recognized when the ``*`` sits
directly after the index and cannot start a factor, so ``u1*u2`` stays a
product while ``u1**u2`` is ``(u1*) * u2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import ParseError, ShapeMismatch
from .freealg import (
    Letter,
    MatPoly,
    NCPoly,
    U_FAMILY,
    X_FAMILY,
    format_real,
    format_scalar,
    u_letter,
    ustar_letter,
    x_letter,
)


class RatExpr:
    """Base class for expression nodes.  Nodes are immutable and hashable;
    equality is structural."""

    __slots__ = ()


@dataclass(frozen=True)
class Scalar(RatExpr):
    value: complex

    def __post_init__(self):
        object.__setattr__(self, "value", complex(self.value))


@dataclass(frozen=True)
class Var(RatExpr):
    letter: Letter


@dataclass(frozen=True)
class Sum(RatExpr):
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.terms) < 2:
            raise ValueError("Sum needs at least two terms")


@dataclass(frozen=True)
class Product(RatExpr):
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if len(self.factors) < 2:
            raise ValueError("Product needs at least two factors")


@dataclass(frozen=True)
class Inverse(RatExpr):
    arg: RatExpr

    def __post_init__(self):
        if self.arg == Scalar(0):
            raise ValueError("inverse of literal zero is rejected at construction")


@dataclass(frozen=True)
class Adjoint(RatExpr):
    arg: RatExpr


ZERO = Scalar(0.0)
ONE = Scalar(1.0)


def xvar(i: int) -> Var:
    return Var(x_letter(i))


def uvar(j: int) -> Var:
    return Var(u_letter(j))


def ustarvar(j: int) -> Var:
    return Var(ustar_letter(j))


def make_sum(terms: Sequence[RatExpr]) -> RatExpr:
    """n-ary sum; folds all-scalar children, unwraps singletons."""
    terms = list(terms)
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    if all(isinstance(t, Scalar) for t in terms):
        return Scalar(sum(t.value for t in terms))
    return Sum(tuple(terms))


def make_product(factors: Sequence[RatExpr]) -> RatExpr:
    """n-ary product; folds all-scalar children, unwraps singletons."""
    factors = list(factors)
    if not factors:
        return ONE
    if len(factors) == 1:
        return factors[0]
    if all(isinstance(f, Scalar) for f in factors):
        val = 1 + 0j
        for f in factors:
            val *= f.value
        return Scalar(val)
    return Product(tuple(factors))


def negate(e: RatExpr) -> RatExpr:
    """The parser's unary-minus sugar; the printer inverts this exactly."""
    if isinstance(e, Scalar):
        return Scalar(-e.value)
    if isinstance(e, Product):
        head = e.factors[0]
        if isinstance(head, Scalar):
            return make_product([Scalar(-head.value), *e.factors[1:]])
        return Product((Scalar(-1.0), *e.factors))
    return Product((Scalar(-1.0), e))


@dataclass(frozen=True)
class MatRatExpr:
    """Matrix of rational expressions, row-major."""

    rows: int
    cols: int
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.rows < 1 or self.cols < 1:
            raise ShapeMismatch("matrix expression must have positive shape")
        if len(self.entries) != self.rows * self.cols:
            raise ShapeMismatch(
                f"{self.rows}x{self.cols} matrix needs {self.rows * self.cols} entries, "
                f"got {len(self.entries)}")

    @classmethod
    def from_entry(cls, e: RatExpr) -> "MatRatExpr":
        return cls(1, 1, (e,))

    @classmethod
    def from_grid(cls, grid: Sequence[Sequence[RatExpr]]) -> "MatRatExpr":
        rows = len(grid)
        cols = len(grid[0])
        if any(len(row) != cols for row in grid):
            raise ShapeMismatch("ragged matrix expression")
        return cls(rows, cols, tuple(e for row in grid for e in row))

    def entry(self, i: int, j: int) -> RatExpr:
        return self.entries[i * self.cols + j]

    def scalar(self) -> RatExpr:
        if (self.rows, self.cols) != (1, 1):
            raise ShapeMismatch("not a 1x1 expression")
        return self.entries[0]

    @property
    def shape(self):
        return (self.rows, self.cols)

    def map(self, fn) -> "MatRatExpr":
        return MatRatExpr(self.rows, self.cols, tuple(fn(e) for e in self.entries))


def as_matexpr(e) -> MatRatExpr:
    if isinstance(e, MatRatExpr):
        return e
    if isinstance(e, RatExpr):
        return MatRatExpr.from_entry(e)
    raise TypeError(f"expected an expression, got {type(e).__name__}")


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

_ATOM_START = set("0123456789.iux(")


class _Token:
    __slots__ = ("kind", "value", "pos")

    def __init__(self, kind, value, pos):
        self.kind = kind
        self.value = value
        self.pos = pos

    def __repr__(self):
        return f"{self.kind}({self.value!r}@{self.pos})"


def _tokenize(text: str):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*^(),[]":
            kind = {"+": "PLUS", "-": "MINUS", "*": "STAR", "^": "CARET",
                    "(": "LPAREN", ")": "RPAREN", ",": "COMMA",
                    "[": "LBRACK", "]": "RBRACK"}[ch]
            tokens.append(_Token(kind, ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tokens.append(_Token("NUMBER", float(text[i:j]), i))
            i = j
            continue
        if ch == "i":
            tokens.append(_Token("IMAG", "i", i))
            i += 1
            continue
        if ch in "xu":
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            if j == i + 1:
                raise ParseError(f"variable '{ch}' needs an index", i)
            index = int(text[i + 1:j])
            if index < 1:
                raise ParseError("variable index must be positive", i)
            if ch == "x":
                tokens.append(_Token("VAR", x_letter(index), i))
                i = j
                continue
            # u<j> optionally followed by an adjoint star: the star is part of
            # the letter only when what follows cannot start a factor
            if j < n and text[j] == "*":
                k = j + 1
                while k < n and text[k].isspace():
                    k += 1
                if k >= n or text[k] not in _ATOM_START:
                    tokens.append(_Token("VAR", ustar_letter(index), i))
                    i = j + 1
                    continue
            tokens.append(_Token("VAR", u_letter(index), i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("EOF", None, n))
    return tokens


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"expected {kind}, found {tok.kind}", tok.pos)
        return self.advance()

    def parse_matexpr(self) -> MatRatExpr:
        if self.peek().kind == "LBRACK":
            out = self.parse_matrix()
        else:
            out = MatRatExpr.from_entry(self.parse_expr())
        tok = self.peek()
        if tok.kind != "EOF":
            raise ParseError(f"trailing input starting with {tok.kind}", tok.pos)
        return out

    def parse_matrix(self) -> MatRatExpr:
        start = self.expect("LBRACK")
        rows = [self.parse_row()]
        while self.peek().kind == "COMMA":
            self.advance()
            rows.append(self.parse_row())
        self.expect("RBRACK")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ParseError("matrix rows have unequal lengths", start.pos)
        return MatRatExpr.from_grid(rows)

    def parse_row(self) -> list:
        self.expect("LBRACK")
        entries = [self.parse_expr()]
        while self.peek().kind == "COMMA":
            self.advance()
            entries.append(self.parse_expr())
        self.expect("RBRACK")
        return entries

    def parse_expr(self) -> RatExpr:
        terms = [self.parse_term()]
        while self.peek().kind in ("PLUS", "MINUS"):
            op = self.advance()
            term = self.parse_term()
            terms.append(negate(term) if op.kind == "MINUS" else term)
        return make_sum(terms)

    def parse_term(self) -> RatExpr:
        minus = False
        if self.peek().kind == "MINUS":
            self.advance()
            minus = True
        factors = [self.parse_factor()]
        while self.peek().kind == "STAR":
            self.advance()
            factors.append(self.parse_factor())
        out = make_product(factors)
        return negate(out) if minus else out

    def parse_factor(self) -> RatExpr:
        out = self.parse_atom()
        while self.peek().kind == "CARET":
            caret = self.advance()
            tok = self.peek()
            if tok.kind == "MINUS":
                self.advance()
                num = self.expect("NUMBER")
                if num.value != 1:
                    raise ParseError("only ^-1 is supported as a negative power", num.pos)
                try:
                    out = Inverse(out)
                except ValueError as exc:
                    raise ParseError(str(exc), caret.pos) from None
            elif tok.kind == "STAR":
                self.advance()
                out = Adjoint(out)
            elif tok.kind == "NUMBER":
                self.advance()
                k = tok.value
                if k != int(k) or k < 1:
                    raise ParseError("power must be a positive integer", tok.pos)
                k = int(k)
                if k > 1:
                    out = Product(tuple([out] * k))
            else:
                raise ParseError("expected -1, *, or a positive integer after ^", tok.pos)
        return out

    def parse_atom(self) -> RatExpr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return Scalar(tok.value)
        if tok.kind == "IMAG":
            self.advance()
            return Scalar(1j)
        if tok.kind == "VAR":
            self.advance()
            return Var(tok.value)
        if tok.kind == "LPAREN":
            self.advance()
            out = self.parse_expr()
            self.expect("RPAREN")
            return out
        raise ParseError(f"expected an atom, found {tok.kind}", tok.pos)


def parse(text: str) -> MatRatExpr:
    """Parse an expression or matrix-of-expressions string."""
    return _Parser(text).parse_matexpr()


def parse_entry(text: str) -> RatExpr:
    """Parse a single (non-matrix) expression."""
    return parse(text).scalar()


# ---------------------------------------------------------------------------
# printer
# ---------------------------------------------------------------------------

def _is_plain_scalar(e: RatExpr) -> bool:
    return isinstance(e, Scalar) and e.value.imag == 0 and e.value.real >= 0


def _is_atomic(e: RatExpr) -> bool:
    if isinstance(e, Var):
        return True
    if _is_plain_scalar(e):
        return True
    return isinstance(e, Scalar) and e.value == 1j


def _atom_str(e: RatExpr) -> str:
    if isinstance(e, Var):
        return str(e.letter)
    if isinstance(e, Scalar):
        if e.value == 1j:
            return "i"
        if _is_plain_scalar(e):
            return format_real(e.value.real)
        return "(" + format_scalar(e.value) + ")"
    raise TypeError


def _factor_str(e: RatExpr) -> str:
    if isinstance(e, Inverse):
        return _postfix_base_str(e.arg) + "^-1"
    if isinstance(e, Adjoint):
        return _postfix_base_str(e.arg) + "^*"
    if isinstance(e, (Sum, Product)):
        return "(" + _expr_str(e) + ")"
    return _atom_str(e)


def _postfix_base_str(e: RatExpr) -> str:
    if _is_atomic(e):
        return _atom_str(e)
    return "(" + _expr_str(e) + ")"


def _signed_term(e: RatExpr):
    """Invert the parser's ``negate`` sugar: (negated?, text of the absolute part).

    The minus sugar is used only where re-parsing the unsigned text and
    re-applying ``negate`` reproduces the original tree exactly.
    """
    if isinstance(e, Scalar) and e.value.imag == 0 and e.value.real < 0:
        return True, _factor_str(Scalar(-e.value))
    if isinstance(e, Product):
        head = e.factors[0]
        if isinstance(head, Scalar) and head.value.imag == 0 and head.value.real < 0:
            rest = e.factors[1:]
            if head.value.real == -1:
                if len(rest) == 1 and isinstance(rest[0], Product):
                    # "-(a*b)" would re-parse flat; print the -1 explicitly
                    return False, _term_str(e)
                body = rest[0] if len(rest) == 1 else Product(rest)
                return True, _term_str(body)
            flipped = (Scalar(-head.value),) + rest
            return True, _term_str(Product(flipped))
    return False, _term_str(e)


def _term_str(e: RatExpr) -> str:
    if isinstance(e, Product):
        return "*".join(_factor_str(f) for f in e.factors)
    return _factor_str(e)


def _expr_str(e: RatExpr) -> str:
    if isinstance(e, Sum):
        neg, txt = _signed_term(e.terms[0])
        out = ("-" if neg else "") + txt
        for t in e.terms[1:]:
            neg, txt = _signed_term(t)
            out += (" - " if neg else " + ") + txt
        return out
    neg, txt = _signed_term(e)
    return ("-" if neg else "") + txt


def unparse(e) -> str:
    """Canonical text; ``parse(unparse(e))`` is structurally equal to ``e``."""
    if isinstance(e, RatExpr):
        return _expr_str(e)
    e = as_matexpr(e)
    if e.shape == (1, 1):
        return _expr_str(e.scalar())
    rows = []
    for i in range(e.rows):
        rows.append("[" + ", ".join(_expr_str(e.entry(i, j)) for j in range(e.cols)) + "]")
    return "[" + ",".join(rows) + "]"


# ---------------------------------------------------------------------------
# structural operations
# ---------------------------------------------------------------------------

def _normalize(e: RatExpr) -> RatExpr:
    """Push explicit Adjoint nodes down to the leaves."""
    if isinstance(e, Adjoint):
        return _adjoint(e.arg)
    if isinstance(e, Sum):
        return Sum(tuple(_normalize(t) for t in e.terms))
    if isinstance(e, Product):
        return Product(tuple(_normalize(f) for f in e.factors))
    if isinstance(e, Inverse):
        return Inverse(_normalize(e.arg))
    return e


def _adjoint(e: RatExpr) -> RatExpr:
    if isinstance(e, Scalar):
        return Scalar(e.value.conjugate())
    if isinstance(e, Var):
        return Var(e.letter.adjoint())
    if isinstance(e, Sum):
        return Sum(tuple(_adjoint(t) for t in e.terms))
    if isinstance(e, Product):
        return Product(tuple(_adjoint(f) for f in reversed(e.factors)))
    if isinstance(e, Inverse):
        return Inverse(_adjoint(e.arg))
    if isinstance(e, Adjoint):
        return _normalize(e.arg)
    raise TypeError(f"unknown node {type(e).__name__}")


def adjoint_expr(e):
    """Adjoint with the star pushed to the leaves: scalars conjugate, x letters
    are fixed, products reverse, inverses commute with the star."""
    if isinstance(e, MatRatExpr):
        grid = [[_adjoint(e.entry(i, j)) for i in range(e.rows)] for j in range(e.cols)]
        return MatRatExpr.from_grid(grid)
    return _adjoint(e)


def _walk_inverses(e: RatExpr, seen: dict):
    if isinstance(e, (Scalar, Var)):
        return
    if isinstance(e, Sum):
        for t in e.terms:
            _walk_inverses(t, seen)
        return
    if isinstance(e, Product):
        for f in e.factors:
            _walk_inverses(f, seen)
        return
    if isinstance(e, Adjoint):
        _walk_inverses(e.arg, seen)
        return
    if isinstance(e, Inverse):
        _walk_inverses(e.arg, seen)
        seen.setdefault(e.arg, None)
        return
    raise TypeError(f"unknown node {type(e).__name__}")


def inverse_subterms(e) -> list:
    """Distinct arguments of Inverse nodes, innermost-first, deduplicated."""
    seen: dict = {}
    if isinstance(e, MatRatExpr):
        for entry in e.entries:
            _walk_inverses(entry, seen)
    else:
        _walk_inverses(e, seen)
    return list(seen.keys())


def inversion_count(e) -> int:
    """Number of distinct inverse subterms."""
    return len(inverse_subterms(e))


def inversion_height(e) -> int:
    """Maximum nesting depth of inverses."""
    def depth(node) -> int:
        if isinstance(node, (Scalar, Var)):
            return 0
        if isinstance(node, Sum):
            return max(depth(t) for t in node.terms)
        if isinstance(node, Product):
            return max(depth(f) for f in node.factors)
        if isinstance(node, Adjoint):
            return depth(node.arg)
        if isinstance(node, Inverse):
            return 1 + depth(node.arg)
        raise TypeError
    if isinstance(e, MatRatExpr):
        return max(depth(entry) for entry in e.entries)
    return depth(e)


def substitute(e, bindings: Mapping[RatExpr, RatExpr]):
    """Simultaneous innermost-first replacement of matched subtrees.

    Each node is rebuilt from its (already substituted) children and then
    looked up in ``bindings``; replacements are inserted verbatim.
    """
    def rec(node: RatExpr) -> RatExpr:
        if isinstance(node, (Scalar, Var)):
            out = node
        elif isinstance(node, Sum):
            out = Sum(tuple(rec(t) for t in node.terms))
        elif isinstance(node, Product):
            out = Product(tuple(rec(f) for f in node.factors))
        elif isinstance(node, Adjoint):
            out = Adjoint(rec(node.arg))
        elif isinstance(node, Inverse):
            out = Inverse(rec(node.arg))
        else:
            raise TypeError(f"unknown node {type(node).__name__}")
        return bindings.get(out, out)

    if isinstance(e, MatRatExpr):
        return e.map(rec)
    return rec(e)


# ---------------------------------------------------------------------------
# expansion to polynomials
# ---------------------------------------------------------------------------

def expand_entry(e: RatExpr) -> NCPoly:
    """Expand an inverse-free expression into a noncommutative polynomial."""
    if isinstance(e, Scalar):
        return NCPoly.const(e.value)
    if isinstance(e, Var):
        return NCPoly.letter(e.letter)
    if isinstance(e, Sum):
        out = NCPoly.zero()
        for t in e.terms:
            out = out + expand_entry(t)
        return out
    if isinstance(e, Product):
        out = NCPoly.one()
        for f in e.factors:
            out = out * expand_entry(f)
        return out
    if isinstance(e, Adjoint):
        return expand_entry(e.arg).adjoint()
    if isinstance(e, Inverse):
        raise ValueError("expression contains an inverse and does not expand to a polynomial")
    raise TypeError(f"unknown node {type(e).__name__}")


def expand_poly(e) -> MatPoly:
    """Expand an inverse-free (matrix) expression into a MatPoly."""
    e = as_matexpr(e)
    grid = [[expand_entry(e.entry(i, j)) for j in range(e.cols)] for i in range(e.rows)]
    return MatPoly(grid)


def entry_to_expr(p: NCPoly) -> RatExpr:
    """Embed a polynomial back into the expression syntax."""
    if p.is_zero:
        return ZERO
    terms = []
    for w, c in p.sorted_items():
        factors = [Var(letter) for letter in w]
        if not factors:
            terms.append(Scalar(c))
        elif c == 1:
            terms.append(make_product(factors))
        else:
            terms.append(make_product([Scalar(c), *factors]))
    return make_sum(terms)


def poly_to_expr(p) -> MatRatExpr:
    if isinstance(p, NCPoly):
        return MatRatExpr.from_entry(entry_to_expr(p))
    grid = [[entry_to_expr(p.entry(i, j)) for j in range(p.cols)] for i in range(p.rows)]
    return MatRatExpr.from_grid(grid)


def expr_letters(e) -> set:
    """All letters appearing in an expression."""
    out = set()

    def rec(node):
        if isinstance(node, Var):
            out.add(node.letter)
        elif isinstance(node, Sum):
            for t in node.terms:
                rec(t)
        elif isinstance(node, Product):
            for f in node.factors:
                rec(f)
        elif isinstance(node, (Adjoint, Inverse)):
            rec(node.arg)

    if isinstance(e, MatRatExpr):
        for entry in e.entries:
            rec(entry)
    else:
        rec(e)
    return out


def expr_alphabet(*exprs) -> tuple:
    """(nx, nu) covering every letter in the given expressions."""
    nx = nu = 0
    for e in exprs:
        for letter in expr_letters(e):
            if letter.family == X_FAMILY:
                nx = max(nx, letter.index)
            else:
                nu = max(nu, letter.index)
    return nx, nu


def mat_mul_expr(a: MatRatExpr, b: MatRatExpr) -> MatRatExpr:
    """Matrix product of expression matrices (used when splicing certificates)."""
    if a.cols != b.rows:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    grid = []
    for i in range(a.rows):
        row = []
        for j in range(b.cols):
            parts = []
            for k in range(a.cols):
                left = a.entry(i, k)
                right = b.entry(k, j)
                if left == ZERO or right == ZERO:
                    continue
                if left == ONE:
                    parts.append(right)
                elif right == ONE:
                    parts.append(left)
                else:
                    parts.append(make_product([left, right]))
            row.append(make_sum(parts) if parts else ZERO)
        grid.append(row)
    return MatRatExpr.from_grid(grid)
