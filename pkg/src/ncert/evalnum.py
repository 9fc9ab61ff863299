"""Evaluation of expressions on matrix tuples, domain membership and sampling,
randomized equivalence testing, and kernel-point sampling for the relation
polynomials of the pencil pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ArityMismatch,
    NoCommonPoints,
    NotInDomain,
    SamplingExhausted,
    ShapeMismatch,
)
from .freealg import (
    HERMITIAN_TOL,
    LinearPencil,
    MatPoly,
    U_FAMILY,
    X_FAMILY,
    Letter,
)
from .rexpr import (
    Adjoint,
    Inverse,
    MatRatExpr,
    Product,
    RatExpr,
    Scalar,
    Sum,
    Var,
    as_matexpr,
    expr_alphabet,
)

DEFAULT_COND_CAP = 1e12
DEFAULT_PSD_TOL = 1e-9
DEFAULT_RADIUS_CAP = 10.0
REJECTION_CAP = 10 ** 5


def _as_hermitian(mat, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeMismatch(f"{what} must be a square matrix")
    defect = float(np.max(np.abs(mat - mat.conj().T))) if mat.size else 0.0
    if defect > HERMITIAN_TOL * (1.0 + float(np.max(np.abs(mat)))):
        raise ValueError(f"{what} is not Hermitian (defect {defect:.2e})")
    return (mat + mat.conj().T) / 2.0


class MatrixPoint:
    """Tuple of Hermitian n x n matrices, one per x letter."""

    __slots__ = ("X", "n")

    def __init__(self, X: Sequence):
        mats = tuple(_as_hermitian(m, f"X{k + 1}") for k, m in enumerate(X))
        if not mats:
            raise ValueError("matrix point needs at least one coordinate")
        n = mats[0].shape[0]
        if any(m.shape[0] != n for m in mats):
            raise ShapeMismatch("coordinates have mixed sizes")
        self.X = mats
        self.n = n

    @property
    def d(self) -> int:
        return len(self.X)

    def binding(self, letter: Letter) -> np.ndarray:
        if letter.family != X_FAMILY:
            raise ArityMismatch(f"point has no binding for letter {letter}")
        if letter.index > len(self.X):
            raise ArityMismatch(f"point has arity {len(self.X)}, letter {letter} out of range")
        return self.X[letter.index - 1]

    @classmethod
    def scalars(cls, *values: float) -> "MatrixPoint":
        return cls([np.array([[v]], dtype=complex) for v in values])

    def to_json_dict(self) -> dict:
        return {"n": self.n, "X": [encode_matrix(m) for m in self.X]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "MatrixPoint":
        return cls([decode_matrix(m) for m in data["X"]])

    def __repr__(self):
        return f"MatrixPoint(n={self.n}, d={self.d})"


class ExtendedPoint:
    """Matrix point plus general (non-Hermitian) matrices for the u letters;
    u* always evaluates to the conjugate transpose of u."""

    __slots__ = ("base", "U")

    def __init__(self, base: MatrixPoint, U: Sequence = ()):
        mats = tuple(np.asarray(m, dtype=complex) for m in U)
        for k, m in enumerate(mats):
            if m.shape != (base.n, base.n):
                raise ShapeMismatch(f"U{k + 1} has shape {m.shape}, expected {(base.n, base.n)}")
        self.base = base
        self.U = mats

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def X(self):
        return self.base.X

    def binding(self, letter: Letter) -> np.ndarray:
        if letter.family == X_FAMILY:
            return self.base.binding(letter)
        if letter.index > len(self.U):
            raise ArityMismatch(f"point has {len(self.U)} u-bindings, letter {letter} out of range")
        mat = self.U[letter.index - 1]
        return mat.conj().T if letter.star else mat

    def to_json_dict(self) -> dict:
        out = self.base.to_json_dict()
        if self.U:
            out["U"] = [encode_matrix(m) for m in self.U]
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "ExtendedPoint":
        base = MatrixPoint.from_json_dict(data)
        return cls(base, [decode_matrix(m) for m in data.get("U", [])])


def as_point(p) -> ExtendedPoint:
    if isinstance(p, ExtendedPoint):
        return p
    if isinstance(p, MatrixPoint):
        return ExtendedPoint(p, ())
    raise TypeError(f"expected a matrix point, got {type(p).__name__}")


def encode_matrix(mat: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(mat, dtype=complex)]


def decode_matrix(data) -> np.ndarray:
    out = []
    for row in data:
        vals = []
        for v in row:
            if isinstance(v, (list, tuple)):
                vals.append(complex(v[0], v[1]))
            else:
                vals.append(complex(v))
        out.append(vals)
    return np.array(out, dtype=complex)


# ---------------------------------------------------------------------------
# expression evaluation
# ---------------------------------------------------------------------------

def _eval_entry(e: RatExpr, point: ExtendedPoint, cond_cap: float) -> np.ndarray:
    n = point.n
    if isinstance(e, Scalar):
        return e.value * np.eye(n, dtype=complex)
    if isinstance(e, Var):
        return point.binding(e.letter)
    if isinstance(e, Sum):
        out = np.zeros((n, n), dtype=complex)
        for t in e.terms:
            out += _eval_entry(t, point, cond_cap)
        return out
    if isinstance(e, Product):
        out = np.eye(n, dtype=complex)
        for f in e.factors:
            out = out @ _eval_entry(f, point, cond_cap)
        return out
    if isinstance(e, Adjoint):
        return _eval_entry(e.arg, point, cond_cap).conj().T
    if isinstance(e, Inverse):
        val = _eval_entry(e.arg, point, cond_cap)
        sv = np.linalg.svd(val, compute_uv=False)
        if sv[-1] == 0 or sv[0] / sv[-1] > cond_cap:
            cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
            raise NotInDomain(e.arg, f"condition number {cond:.3e} exceeds cap {cond_cap:.1e}")
        return np.linalg.inv(val)
    raise TypeError(f"unknown node {type(e).__name__}")


def eval_expr(e, point, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    """Evaluate a (matrix) expression at a point; inverses go through a solve
    guarded by a condition-number cap.  Raises NotInDomain at bad points."""
    point = as_point(point)
    e = as_matexpr(e)
    n = point.n
    out = np.zeros((e.rows * n, e.cols * n), dtype=complex)
    for i in range(e.rows):
        for j in range(e.cols):
            out[i * n:(i + 1) * n, j * n:(j + 1) * n] = _eval_entry(e.entry(i, j), point, cond_cap)
    return out


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Either a list of self-adjoint matrix polynomials or a single pencil."""

    polys: Optional[tuple] = None
    pencil: Optional[LinearPencil] = None
    psd_tolerance: float = DEFAULT_PSD_TOL

    def __post_init__(self):
        if (self.polys is None) == (self.pencil is None):
            raise ValueError("domain needs exactly one of: generator list, pencil")
        if self.polys is not None:
            object.__setattr__(self, "polys", tuple(self.polys))
            for k, p in enumerate(self.polys):
                if not isinstance(p, MatPoly) or not p.is_square:
                    raise ValueError(f"generator {k} must be a square MatPoly")
                if not p.is_self_adjoint(HERMITIAN_TOL):
                    raise ValueError(f"generator {k} is not self-adjoint")

    @classmethod
    def from_polys(cls, polys, psd_tolerance: float = DEFAULT_PSD_TOL) -> "DomainSpec":
        return cls(polys=tuple(polys), psd_tolerance=psd_tolerance)

    @classmethod
    def from_pencil(cls, pencil: LinearPencil, psd_tolerance: float = DEFAULT_PSD_TOL) -> "DomainSpec":
        return cls(pencil=pencil, psd_tolerance=psd_tolerance)

    @property
    def nvars(self) -> int:
        if self.pencil is not None:
            return self.pencil.nvars
        nx = 0
        for p in self.polys:
            for letter in p.letters():
                if letter.family == X_FAMILY:
                    nx = max(nx, letter.index)
        return max(nx, 1)

    def generators(self):
        if self.pencil is not None:
            return (self.pencil.to_matpoly(),)
        return self.polys


@dataclass(frozen=True)
class DomainReport:
    ok: bool
    margin: float
    margins: tuple = ()


def in_domain(domain: DomainSpec, point: MatrixPoint) -> DomainReport:
    """True iff every generator (or the pencil) is PSD at the point, up to the
    domain's tolerance; the report carries the minimum eigenvalue margin."""
    if point.d < domain.nvars:
        raise ArityMismatch(f"domain has {domain.nvars} variables, point has {point.d}")
    margins = []
    if domain.pencil is not None:
        vals = np.linalg.eigvalsh(domain.pencil.evaluate(point))
        margins.append(float(vals[0]))
    else:
        for p in domain.polys:
            val = p.evaluate(as_point(point))
            val = (val + val.conj().T) / 2.0
            margins.append(float(np.linalg.eigvalsh(val)[0]))
    margin = min(margins)
    return DomainReport(ok=margin >= -domain.psd_tolerance, margin=margin, margins=tuple(margins))


def coordinate_radii(domain: DomainSpec) -> list:
    """Per-coordinate sampling radius.

    Archimedean generator lists give sqrt(C_i) from the C_i - x_i^2 caps;
    pencils give the largest t with I + t*Ai and I - t*Ai both PSD, capped at
    DEFAULT_RADIUS_CAP when a direction is unbounded.
    """
    d = domain.nvars
    radii = [DEFAULT_RADIUS_CAP] * d
    if domain.pencil is not None:
        for i, A in enumerate(domain.pencil.Ai):
            lam = np.linalg.eigvalsh(A)
            top = max(float(lam[-1]), -float(lam[0]))
            if top > 1e-14:
                radii[i] = min(DEFAULT_RADIUS_CAP, 1.0 / top)
        return radii
    from .lift import archimedean_check  # local import to avoid a module cycle

    verdict = archimedean_check(list(domain.polys), nx=d)
    for i, cap in verdict.caps.items():
        radii[i - 1] = min(DEFAULT_RADIUS_CAP, float(np.sqrt(cap)))
    return radii


def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    h = (a + a.conj().T) / 2.0
    return h


def random_general(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)


def _anchor_points(domain: DomainSpec, n: int, radii) -> list:
    """Deterministic coverage points: the origin and the axis extremes.

    These pin down the suprema that the norm-cap estimates chase (the extreme
    of a coordinate interval is an actual sample, not a near miss).
    """
    d = domain.nvars
    eye = np.eye(n, dtype=complex)
    zero = np.zeros((n, n), dtype=complex)
    anchors = [MatrixPoint([zero.copy() for _ in range(d)])]
    for i in range(d):
        for sign in (1.0, -1.0):
            mats = [zero.copy() for _ in range(d)]
            mats[i] = sign * radii[i] * eye
            anchors.append(MatrixPoint(mats))
    return [p for p in anchors if in_domain(domain, p).ok]


def sample_domain(domain: DomainSpec, n: int, count: int, seed: int = 0,
                  include_anchors: bool = True,
                  max_rejections: int = REJECTION_CAP) -> list:
    """Rejection-sample ``count`` points of the domain at matrix size ``n``.

    Proposals are Hermitian Gaussian directions scaled into the per-coordinate
    radius; deterministic anchor points (origin, axis extremes) lead the list
    so coordinate suprema are attained exactly.
    """
    radii = coordinate_radii(domain)
    d = domain.nvars
    out = []
    if include_anchors:
        out.extend(_anchor_points(domain, n, radii)[:count])
    rng = np.random.default_rng(seed)
    rejections = 0
    while len(out) < count:
        mats = []
        for i in range(d):
            h = random_hermitian(rng, n)
            norm = np.linalg.norm(h, 2)
            t = rng.uniform(0.0, 1.0)
            mats.append(h * (radii[i] * t / max(norm, 1e-300)))
        point = MatrixPoint(mats)
        if in_domain(domain, point).ok:
            out.append(point)
        else:
            rejections += 1
            if rejections > max_rejections:
                raise SamplingExhausted(
                    f"gave up after {rejections} rejected proposals at size {n}")
    return out


def sample_domain_sizes(domain: DomainSpec, sizes, count_per_size: int, seed: int = 0,
                        include_anchors: bool = True) -> list:
    out = []
    for k, n in enumerate(sizes):
        out.extend(sample_domain(domain, n, count_per_size, seed=seed + k,
                                 include_anchors=include_anchors))
    return out


# ---------------------------------------------------------------------------
# randomized equivalence testing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceVerdict:
    """One-sided verdict: only a witness can certify a difference."""

    equivalent_so_far: bool
    witness: Optional[ExtendedPoint] = None
    deviation: float = 0.0
    points_tested: int = 0

    def __bool__(self):
        return self.equivalent_so_far


def test_equivalence(e1, e2, sizes=(1, 2, 3, 4), trials: int = 20, tol: float = 1e-8,
                     seed: int = 0, cond_cap: float = DEFAULT_COND_CAP) -> EquivalenceVerdict:
    """Compare two expressions on random Hermitian tuples, skipping points
    where either side is undefined.  Raises NoCommonPoints if every sampled
    point fails a domain check."""
    e1 = as_matexpr(e1)
    e2 = as_matexpr(e2)
    if e1.shape != e2.shape:
        raise ShapeMismatch(f"shapes differ: {e1.shape} vs {e2.shape}")
    nx1, nu1 = expr_alphabet(e1)
    nx2, nu2 = expr_alphabet(e2)
    nx, nu = max(nx1, nx2, 1), max(nu1, nu2)
    rng = np.random.default_rng(seed)
    tested = 0
    for n in sizes:
        for _ in range(trials):
            X = [random_hermitian(rng, n) for _ in range(nx)]
            U = [random_general(rng, n) for _ in range(nu)]
            point = ExtendedPoint(MatrixPoint(X), U)
            try:
                v1 = eval_expr(e1, point, cond_cap)
                v2 = eval_expr(e2, point, cond_cap)
            except NotInDomain:
                continue
            tested += 1
            scale = 1.0 + max(np.linalg.norm(v1, 2), np.linalg.norm(v2, 2))
            dev = float(np.linalg.norm(v1 - v2, 2))
            if dev > tol * scale:
                return EquivalenceVerdict(False, witness=point, deviation=dev,
                                          points_tested=tested)
    if tested == 0:
        raise NoCommonPoints("no sampled point was inside both domains")
    return EquivalenceVerdict(True, points_tested=tested)


# ---------------------------------------------------------------------------
# kernel points for the relation polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSample:
    """(X, U, v) with every relation polynomial annihilating v and the pencil
    PSD at X."""

    point: ExtendedPoint
    v: np.ndarray
    family: str  # "inverse" (U = exact inverses) or "kernel" (numerical kernel)
    sigma_min: float = 0.0


def inverse_point(X: MatrixPoint, g_exprs: Sequence[RatExpr],
                  cond_cap: float = DEFAULT_COND_CAP) -> ExtendedPoint:
    """Bind each u letter to the inverse of its (already substituted) argument,
    innermost-first, so later arguments may refer to earlier u letters."""
    U = []
    for g in g_exprs:
        pt = ExtendedPoint(X, U)
        val = eval_expr(as_matexpr(g), pt, cond_cap)
        sv = np.linalg.svd(val, compute_uv=False)
        if sv[-1] == 0 or sv[0] / sv[-1] > cond_cap:
            raise NotInDomain(g, "inverse argument singular at sampled point")
        U.append(np.linalg.inv(val))
    return ExtendedPoint(X, U)


def _stacked_relations(relations, point: ExtendedPoint) -> np.ndarray:
    blocks = [m.evaluate(point) for m in relations]
    return np.vstack(blocks)


def sample_kernel_points(relations: Sequence[MatPoly], pencil: LinearPencil,
                         g_exprs: Sequence[RatExpr], n: int, count: int,
                         seed: int = 0, families=("inverse", "kernel"),
                         kernel_tol: float = 1e-10,
                         max_attempts: int = 200) -> list:
    """Sample (X, U, v) triples annihilated by every relation polynomial.

    Family "inverse": U_j is the exact inverse of its argument, so every
    relation vanishes identically; v is a random unit vector.  Family
    "kernel": U is a perturbed inverse tuple engineered to share a null
    vector, accepted only when the smallest singular value of the stacked
    relation matrix is at most ``kernel_tol``.
    """
    if not relations:
        raise ValueError("no relation polynomials given")
    domain = DomainSpec.from_pencil(pencil)
    rng = np.random.default_rng(seed)
    out = []
    want_inverse = "inverse" in families
    want_kernel = "kernel" in families
    n_inverse = count if not want_kernel else (count + 1) // 2
    n_kernel = count - n_inverse if want_kernel else 0
    if not want_inverse:
        n_inverse, n_kernel = 0, count

    if n_inverse:
        points = sample_domain(domain, n, n_inverse, seed=seed)
        for X in points:
            pt = inverse_point(X, g_exprs)
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            v = v / np.linalg.norm(v)
            stacked = _stacked_relations(relations, pt)
            sigma = float(np.linalg.norm(stacked @ v))
            out.append(KernelSample(pt, v, "inverse", sigma))

    if n_kernel:
        found = 0
        attempts = 0
        while found < n_kernel:
            attempts += 1
            if attempts > max_attempts:
                raise SamplingExhausted(
                    f"no numerical kernel found in {max_attempts} attempts")
            X = sample_domain(domain, n, 1, seed=seed + 1000 + attempts,
                              include_anchors=False)[0]
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            v = v / np.linalg.norm(v)
            try:
                exact = inverse_point(X, g_exprs)
            except NotInDomain:
                continue
            U = list(exact.U)
            # kill v in each perturbation so single-level relations vanish at v
            proj = np.eye(n, dtype=complex) - np.outer(v, v.conj())
            for j in range(len(U)):
                U[j] = U[j] + 0.5 * random_general(rng, n) @ proj
            pt = ExtendedPoint(X, U)
            for _ in range(3):
                stacked = _stacked_relations(relations, pt)
                _, s, vh = np.linalg.svd(stacked)
                v_best = vh[-1].conj()
                sigma = float(s[-1])
                if sigma <= kernel_tol:
                    out.append(KernelSample(pt, v_best, "kernel", sigma))
                    found += 1
                    break
                # retarget the perturbations at the current best kernel vector
                proj = np.eye(n, dtype=complex) - np.outer(v_best, v_best.conj())
                U = [exact.U[j] + 0.5 * random_general(rng, n) @ proj
                     for j in range(len(U))]
                pt = ExtendedPoint(X, U)
    return out
