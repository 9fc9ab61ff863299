"""Free *-algebra over noncommuting letters: words, polynomials, and linear pencils.

Letters come in two families: self-adjoint ``x`` letters and general ``u``
letters whose adjoints ``u*`` are independent letters.  No rewriting rules are
applied here; all relations between ``u`` letters and inverses live in the
lift machinery.
"""

from __future__ import annotations

import math
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ArityMismatch, ShapeMismatch

HERMITIAN_TOL = 1e-12

X_FAMILY = 0
U_FAMILY = 1


class Letter(NamedTuple):
    """One noncommuting letter.  Tuple order is the canonical letter order
    x1 < ... < xd < u1 < u1* < ... < uk < uk*."""

    family: int  # X_FAMILY or U_FAMILY
    index: int   # 1-based
    star: int    # 0 plain, 1 adjoint; always 0 for x letters

    def adjoint(self) -> "Letter":
        if self.family == X_FAMILY:
            return self
        return Letter(U_FAMILY, self.index, 1 - self.star)

    @property
    def is_x(self) -> bool:
        return self.family == X_FAMILY

    def __str__(self) -> str:
        base = "x" if self.family == X_FAMILY else "u"
        return f"{base}{self.index}" + ("*" if self.star else "")


def x_letter(i: int) -> Letter:
    if i < 1:
        raise ValueError("letter index must be positive")
    return Letter(X_FAMILY, i, 0)


def u_letter(j: int) -> Letter:
    if j < 1:
        raise ValueError("letter index must be positive")
    return Letter(U_FAMILY, j, 0)


def ustar_letter(j: int) -> Letter:
    if j < 1:
        raise ValueError("letter index must be positive")
    return Letter(U_FAMILY, j, 1)


# A word is a tuple of letters; the empty tuple is the identity.
Word = tuple

EMPTY_WORD: Word = ()


def word_adjoint(w: Word) -> Word:
    return tuple(letter.adjoint() for letter in reversed(w))


def word_key(w: Word):
    """Graded-lex sort key: degree first, then letterwise order."""
    return (len(w), w)


def word_str(w: Word) -> str:
    """Render a word with consecutive equal letters collapsed to powers."""
    if not w:
        return ""
    pieces = []
    i = 0
    while i < len(w):
        j = i
        while j < len(w) and w[j] == w[i]:
            j += 1
        run = j - i
        pieces.append(str(w[i]) if run == 1 else f"{w[i]}^{run}")
        i = j
    return "*".join(pieces)


def format_real(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_scalar(c: complex) -> str:
    """Human/parser-shared scalar form: ``2``, ``-3.5``, ``i``, ``2 - 3*i``."""
    re, im = c.real, c.imag
    if im == 0:
        return format_real(re)
    if im == 1:
        im_txt = "i"
    elif im == -1:
        im_txt = "-i"
    else:
        im_txt = f"{format_real(im)}*i"
    if re == 0:
        return im_txt
    sign = " - " if im < 0 else " + "
    mag = "i" if abs(im) == 1 else f"{format_real(abs(im))}*i"
    return f"{format_real(re)}{sign}{mag}"


def _fsum_complex(parts) -> complex:
    """Order-independent complex sum (exactly rounded componentwise)."""
    return complex(math.fsum(p.real for p in parts), math.fsum(p.imag for p in parts))


class NCPoly:
    """Noncommutative polynomial: finite mapping word -> complex coefficient.

    Immutable by convention; exact zeros are pruned on construction.  Product
    coefficients are accumulated with exactly-rounded summation so the adjoint
    anti-homomorphism law holds coefficient-exactly.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Word, complex] | None = None):
        clean = {}
        if terms:
            for w, c in terms.items():
                c = complex(c)
                if c != 0:
                    clean[tuple(w)] = c
        self._terms = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls) -> "NCPoly":
        return cls()

    @classmethod
    def const(cls, c: complex) -> "NCPoly":
        return cls({EMPTY_WORD: complex(c)})

    @classmethod
    def one(cls) -> "NCPoly":
        return cls.const(1.0)

    @classmethod
    def letter(cls, letter: Letter) -> "NCPoly":
        return cls({(letter,): 1.0})

    @classmethod
    def word(cls, w: Word, c: complex = 1.0) -> "NCPoly":
        return cls({tuple(w): complex(c)})

    # -- inspection --------------------------------------------------------

    def terms(self) -> dict:
        return dict(self._terms)

    def words(self):
        return self._terms.keys()

    def coeff(self, w: Word) -> complex:
        return self._terms.get(tuple(w), 0j)

    def sorted_items(self):
        return sorted(self._terms.items(), key=lambda kv: word_key(kv[0]))

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(len(w) for w in self._terms)

    def max_abs_coeff(self) -> float:
        if not self._terms:
            return 0.0
        return max(abs(c) for c in self._terms.values())

    def letters(self) -> set:
        out = set()
        for w in self._terms:
            out.update(w)
        return out

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _coerce_poly(other)
        if other is NotImplemented:
            return NotImplemented
        terms = dict(self._terms)
        for w, c in other._terms.items():
            s = terms.get(w, 0j) + c
            if s == 0:
                terms.pop(w, None)
            else:
                terms[w] = s
        out = NCPoly.__new__(NCPoly)
        out._terms = terms
        return out

    __radd__ = __add__

    def __neg__(self):
        out = NCPoly.__new__(NCPoly)
        out._terms = {w: -c for w, c in self._terms.items()}
        return out

    def __sub__(self, other):
        other = _coerce_poly(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = _coerce_poly(other)
        if other is NotImplemented:
            return NotImplemented
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)):
            c = complex(other)
            if c == 0:
                return NCPoly.zero()
            out = NCPoly.__new__(NCPoly)
            out._terms = {w: v * c for w, v in self._terms.items()}
            return out
        if not isinstance(other, NCPoly):
            return NotImplemented
        acc: dict = {}
        for w1, c1 in self._terms.items():
            for w2, c2 in other._terms.items():
                acc.setdefault(w1 + w2, []).append(c1 * c2)
        terms = {}
        for w, parts in acc.items():
            c = parts[0] if len(parts) == 1 else _fsum_complex(parts)
            if c != 0:
                terms[w] = c
        out = NCPoly.__new__(NCPoly)
        out._terms = terms
        return out

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex)):
            return self * other
        return NotImplemented

    def adjoint(self) -> "NCPoly":
        out = NCPoly.__new__(NCPoly)
        out._terms = {word_adjoint(w): c.conjugate() for w, c in self._terms.items()}
        return out

    # -- comparison --------------------------------------------------------

    def __eq__(self, other):
        if isinstance(other, (int, float, complex)):
            other = NCPoly.const(other)
        if not isinstance(other, NCPoly):
            return NotImplemented
        return self._terms == other._terms

    __hash__ = None  # mutable dict inside; equality is coefficient-exact

    def close_to(self, other: "NCPoly", tol: float = 1e-8) -> bool:
        return (self - other).max_abs_coeff() <= tol

    def is_self_adjoint(self, tol: float = 0.0) -> bool:
        d = (self - self.adjoint()).max_abs_coeff()
        return d <= tol

    # -- evaluation --------------------------------------------------------

    def evaluate(self, point) -> np.ndarray:
        """Evaluate on a matrix point (anything exposing .n and .binding)."""
        n = point.n
        out = np.zeros((n, n), dtype=complex)
        for w, c in self._terms.items():
            out += c * _word_value(w, point)
        return out

    def __str__(self) -> str:
        return poly_text(self)

    def __repr__(self) -> str:
        return f"NCPoly({poly_text(self)})"


def _coerce_poly(p):
    if isinstance(p, NCPoly):
        return p
    if isinstance(p, (int, float, complex)):
        return NCPoly.const(p)
    return NotImplemented


def _word_value(w: Word, point) -> np.ndarray:
    val = np.eye(point.n, dtype=complex)
    for letter in w:
        val = val @ point.binding(letter)
    return val


def poly_text(p: NCPoly) -> str:
    """Canonical display form: graded-lex term order, parser-compatible."""
    if p.is_zero:
        return "0"
    pieces = []
    for w, c in p.sorted_items():
        word = word_str(w)
        if c.imag == 0:
            neg = c.real < 0
            mag = abs(c.real)
            if not word:
                txt = format_real(mag)
            elif mag == 1:
                txt = word
            else:
                txt = f"{format_real(mag)}*{word}"
        else:
            neg = False
            s = f"({format_scalar(c)})"
            txt = f"{s}*{word}" if word else s
        pieces.append((neg, txt))
    first_neg, first_txt = pieces[0]
    out = ("-" if first_neg else "") + first_txt
    for neg, txt in pieces[1:]:
        out += (" - " if neg else " + ") + txt
    return out


class MatPoly:
    """Matrix with noncommutative polynomial entries."""

    __slots__ = ("_entries", "rows", "cols")

    def __init__(self, entries: Sequence[Sequence[NCPoly]]):
        grid = tuple(tuple(_coerce_entry(e) for e in row) for row in entries)
        if not grid or not grid[0]:
            raise ShapeMismatch("matrix polynomial must have at least one entry")
        width = len(grid[0])
        if any(len(row) != width for row in grid):
            raise ShapeMismatch("ragged matrix polynomial")
        self._entries = grid
        self.rows = len(grid)
        self.cols = width

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_scalar(cls, p: NCPoly | complex) -> "MatPoly":
        return cls([[_coerce_entry(p)]])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatPoly":
        return cls([[NCPoly.zero() for _ in range(cols)] for _ in range(rows)])

    @classmethod
    def identity(cls, n: int) -> "MatPoly":
        return cls([[NCPoly.one() if i == j else NCPoly.zero() for j in range(n)]
                    for i in range(n)])

    @classmethod
    def from_terms(cls, rows: int, cols: int, terms: Mapping[Word, np.ndarray]) -> "MatPoly":
        grid = [[{} for _ in range(cols)] for _ in range(rows)]
        for w, mat in terms.items():
            mat = np.asarray(mat, dtype=complex)
            if mat.shape != (rows, cols):
                raise ShapeMismatch(f"coefficient for {w} has shape {mat.shape}")
            for i in range(rows):
                for j in range(cols):
                    if mat[i, j] != 0:
                        grid[i][j][tuple(w)] = mat[i, j]
        return cls([[NCPoly(d) for d in row] for row in grid])

    # -- inspection --------------------------------------------------------

    def entry(self, i: int, j: int) -> NCPoly:
        return self._entries[i][j]

    def entries(self):
        return self._entries

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def terms(self) -> dict:
        """Word -> dense coefficient matrix."""
        words = set()
        for row in self._entries:
            for e in row:
                words.update(e.words())
        out = {}
        for w in sorted(words, key=word_key):
            mat = np.zeros((self.rows, self.cols), dtype=complex)
            for i in range(self.rows):
                for j in range(self.cols):
                    mat[i, j] = self._entries[i][j].coeff(w)
            out[w] = mat
        return out

    def coeff(self, w: Word) -> np.ndarray:
        mat = np.zeros((self.rows, self.cols), dtype=complex)
        for i in range(self.rows):
            for j in range(self.cols):
                mat[i, j] = self._entries[i][j].coeff(w)
        return mat

    def degree(self) -> int:
        return max((e.degree() for row in self._entries for e in row), default=0)

    def max_abs_coeff(self) -> float:
        return max((e.max_abs_coeff() for row in self._entries for e in row), default=0.0)

    @property
    def is_zero(self) -> bool:
        return all(e.is_zero for row in self._entries for e in row)

    def letters(self) -> set:
        out = set()
        for row in self._entries:
            for e in row:
                out |= e.letters()
        return out

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other: "MatPoly") -> "MatPoly":
        if not isinstance(other, MatPoly):
            return NotImplemented
        if self.shape != other.shape:
            raise ShapeMismatch(f"cannot add {self.shape} and {other.shape}")
        return MatPoly([[self._entries[i][j] + other._entries[i][j]
                         for j in range(self.cols)] for i in range(self.rows)])

    def __sub__(self, other: "MatPoly") -> "MatPoly":
        if not isinstance(other, MatPoly):
            return NotImplemented
        return self + (-other)

    def __neg__(self) -> "MatPoly":
        return MatPoly([[-e for e in row] for row in self._entries])

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, NCPoly)):
            return MatPoly([[e * other if isinstance(other, (int, float, complex))
                             else e * other for e in row] for row in self._entries])
        if not isinstance(other, MatPoly):
            return NotImplemented
        if self.cols != other.rows:
            raise ShapeMismatch(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = NCPoly.zero()
                for k in range(self.cols):
                    acc = acc + self._entries[i][k] * other._entries[k][j]
                row.append(acc)
            out.append(row)
        return MatPoly(out)

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex)):
            return self * other
        return NotImplemented

    def scale(self, c: complex) -> "MatPoly":
        return MatPoly([[e * c for e in row] for row in self._entries])

    def adjoint(self) -> "MatPoly":
        return MatPoly([[self._entries[i][j].adjoint() for i in range(self.rows)]
                        for j in range(self.cols)])

    def hermitian_part(self) -> "MatPoly":
        return (self + self.adjoint()).scale(0.5)

    # -- comparison --------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, MatPoly):
            return NotImplemented
        return self.shape == other.shape and all(
            self._entries[i][j] == other._entries[i][j]
            for i in range(self.rows) for j in range(self.cols))

    __hash__ = None

    def close_to(self, other: "MatPoly", tol: float = 1e-8) -> bool:
        return (self - other).max_abs_coeff() <= tol

    def is_self_adjoint(self, tol: float = 0.0) -> bool:
        if self.rows != self.cols:
            return False
        return (self - self.adjoint()).max_abs_coeff() <= tol

    # -- evaluation --------------------------------------------------------

    def evaluate(self, point) -> np.ndarray:
        """Block evaluation: coefficient matrices tensored with word values."""
        n = point.n
        out = np.zeros((self.rows * n, self.cols * n), dtype=complex)
        for w, mat in self.terms().items():
            out += np.kron(mat, _word_value(w, point))
        return out

    def __str__(self) -> str:
        if self.shape == (1, 1):
            return poly_text(self._entries[0][0])
        rows = []
        for row in self._entries:
            rows.append("[" + ", ".join(poly_text(e) for e in row) + "]")
        return "[" + ",".join(rows) + "]"

    def __repr__(self) -> str:
        return f"MatPoly({self.rows}x{self.cols}: {self})"


def _coerce_entry(e) -> NCPoly:
    if isinstance(e, NCPoly):
        return e
    if isinstance(e, (int, float, complex)):
        return NCPoly.const(e)
    raise TypeError(f"cannot use {type(e).__name__} as a matrix polynomial entry")


# -- spec-level operation aliases -----------------------------------------

def poly_add(p, q):
    """Sum of two (matrix) polynomials; zero coefficients are pruned."""
    return p + q


def poly_mul(p, q):
    """Product (Cauchy product over word concatenation / matrix product)."""
    return p * q


def poly_adjoint(p):
    """Involution: conjugate-transpose coefficients, reverse-and-star words."""
    return p.adjoint()


def _check_hermitian(mat: np.ndarray, what: str, tol: float = HERMITIAN_TOL) -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeMismatch(f"{what} must be square")
    defect = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    if defect > tol:
        raise ValueError(f"{what} is not Hermitian (defect {defect:.2e})")
    return mat


class LinearPencil:
    """Affine matrix polynomial A0 + sum_i Ai*xi with Hermitian coefficients.

    Monic means A0 is the identity; only monic pencils feed the convex
    certificate pipeline.
    """

    __slots__ = ("A0", "Ai")

    def __init__(self, A0, Ai):
        coeffs = tuple(_check_hermitian(A, f"A{k + 1}") for k, A in enumerate(Ai))
        A0 = _check_hermitian(A0, "A0")
        size = A0.shape[0]
        for k, A in enumerate(coeffs):
            if A.shape[0] != size:
                raise ShapeMismatch(f"A{k + 1} has size {A.shape[0]}, expected {size}")
        self.A0 = A0
        self.Ai = coeffs

    @property
    def size(self) -> int:
        return self.A0.shape[0]

    @property
    def nvars(self) -> int:
        return len(self.Ai)

    def is_monic(self, tol: float = HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.A0 - np.eye(self.size))) <= tol)

    def evaluate(self, X) -> np.ndarray:
        """L(X) = A0 (x) I + sum Ai (x) Xi, symmetrized; Hermitian by construction."""
        mats = [np.asarray(m, dtype=complex) for m in getattr(X, "X", X)]
        if len(mats) != self.nvars:
            raise ArityMismatch(f"pencil has {self.nvars} variables, point has {len(mats)}")
        n = mats[0].shape[0] if mats else 1
        out = np.kron(self.A0, np.eye(n, dtype=complex))
        for A, Xi in zip(self.Ai, mats):
            out += np.kron(A, Xi)
        defect = np.max(np.abs(out - out.conj().T))
        if defect > HERMITIAN_TOL * (1.0 + np.max(np.abs(out))):
            raise ValueError(f"pencil evaluation lost Hermiticity (defect {defect:.2e})")
        return (out + out.conj().T) / 2.0

    def to_matpoly(self) -> MatPoly:
        terms = {EMPTY_WORD: self.A0}
        for i, A in enumerate(self.Ai, start=1):
            terms[(x_letter(i),)] = A
        return MatPoly.from_terms(self.size, self.size, terms)

    def to_json_dict(self) -> dict:
        def enc(mat):
            return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(mat, dtype=complex)]
        return {"A0": enc(self.A0), "Ai": [enc(A) for A in self.Ai]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "LinearPencil":
        def dec(mat):
            out = []
            for row in mat:
                vals = []
                for v in row:
                    if isinstance(v, (list, tuple)):
                        vals.append(complex(v[0], v[1]))
                    else:
                        vals.append(complex(v))
                out.append(vals)
            return np.array(out, dtype=complex)
        return cls(dec(data["A0"]), tuple(dec(A) for A in data.get("Ai", [])))


def pencil_eval(L: LinearPencil, X) -> np.ndarray:
    """Evaluate a pencil on a tuple of Hermitian matrices."""
    return L.evaluate(X)


def words_up_to(delta: int, nx: int, nu: int = 0, include_ustar: bool = True):
    """All words of degree <= delta over x1..xnx, u1, u1*, ..., in graded-lex order."""
    letters = [x_letter(i) for i in range(1, nx + 1)]
    for j in range(1, nu + 1):
        letters.append(u_letter(j))
        if include_ustar:
            letters.append(ustar_letter(j))
    words = [EMPTY_WORD]
    layer = [EMPTY_WORD]
    for _ in range(delta):
        layer = [w + (letter,) for w in layer for letter in letters]
        words.extend(layer)
    return words


def alphabet_of(*polys) -> tuple:
    """(nx, nu) large enough to cover every letter in the given polynomials."""
    nx = nu = 0
    for p in polys:
        if p is None:
            continue
        for letter in p.letters():
            if letter.family == X_FAMILY:
                nx = max(nx, letter.index)
            else:
                nu = max(nu, letter.index)
    return nx, nu
