"""Inverse-elimination machinery: the polynomial lift that replaces inverse
subterms by fresh letters, the augmented generator set with relation squares
and norm caps, and the subterm-closure / relation-polynomial constructions
used by the pencil pipeline."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ClosureOverflow, NotInDomain
from .evalnum import (
    DomainSpec,
    ExtendedPoint,
    MatrixPoint,
    eval_expr,
    inverse_point,
    sample_domain_sizes,
)
from .freealg import (
    EMPTY_WORD,
    MatPoly,
    NCPoly,
    U_FAMILY,
    X_FAMILY,
    alphabet_of,
    u_letter,
    ustar_letter,
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
    expand_entry,
    expand_poly,
    substitute,
    unparse,
    uvar,
)

CLOSURE_CAP = 10 ** 5
DEFAULT_SAFETY = 4.0


# ---------------------------------------------------------------------------
# Archimedean check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArchimedeanVerdict:
    ok: bool
    caps: dict            # x index -> C with C - x_i^2 present
    u_caps: dict          # u index -> D with D - u_j^* u_j present
    problems: tuple = ()

    def __bool__(self):
        return self.ok


def _match_cap(p: MatPoly, tol: float = 1e-12):
    """Recognize C - l^* l for a single letter l; returns (letter, C) or None."""
    if p.shape != (1, 1):
        return None
    entry = p.entry(0, 0)
    terms = entry.terms()
    if len(terms) != 2:
        return None
    c = terms.get(EMPTY_WORD)
    if c is None or abs(c.imag) > tol or c.real <= 0:
        return None
    square = [(w, v) for w, v in terms.items() if w != EMPTY_WORD]
    (w, v), = square
    if abs(v + 1) > tol or len(w) != 2:
        return None
    a, b = w
    if a != b.adjoint():
        return None
    return b, c.real


def archimedean_check(P: Sequence[MatPoly], nx: Optional[int] = None, nu: int = 0,
                      tol: float = 1e-12) -> ArchimedeanVerdict:
    """Pass iff every element is self-adjoint and every active letter has a
    positive norm cap: C_i - x_i^2 for x letters, D_j - u_j^* u_j for u letters."""
    problems = []
    caps: dict = {}
    u_caps: dict = {}
    seen_nx = 0
    for k, p in enumerate(P):
        if not p.is_square:
            problems.append(f"element {k} is not square")
            continue
        if not p.is_self_adjoint(tol):
            problems.append(f"element {k} is not self-adjoint")
            continue
        pnx, _ = alphabet_of(p)
        seen_nx = max(seen_nx, pnx)
        hit = _match_cap(p, tol)
        if hit is not None:
            letter, c = hit
            if letter.family == X_FAMILY:
                caps.setdefault(letter.index, c)
            elif letter.star == 0:
                u_caps.setdefault(letter.index, c)
    if nx is None:
        nx = seen_nx
    for i in range(1, nx + 1):
        if i not in caps:
            problems.append(f"no cap of the form C - x{i}^2")
    for j in range(1, nu + 1):
        if j not in u_caps:
            problems.append(f"no cap of the form D - u{j}*u{j}")
    return ArchimedeanVerdict(ok=not problems, caps=caps, u_caps=u_caps,
                              problems=tuple(problems))


# ---------------------------------------------------------------------------
# the lift q(x) -> hat q(x, u)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftResult:
    """Outcome of replacing every distinct inverse subterm by a fresh letter.

    ``g_list[j-1]`` is the argument whose inverse became u_j, written over x
    and the earlier u letters (innermost-first), so substituting u_j by
    g_j^-1 in reverse order recovers the original expression.
    """

    hat_expr: MatRatExpr
    hat_poly: MatPoly
    g_list: tuple
    u_arity: int

    def substitution_map(self) -> dict:
        return {f"u{j + 1}": unparse(g) for j, g in enumerate(self.g_list)}

    def back_substitute(self, e):
        """Replace u_j by g_j^-1, outermost-first, leaving no u letters."""
        scalar = isinstance(e, RatExpr)
        e = as_matexpr(e)
        for j in range(self.u_arity, 0, -1):
            bindings = {
                uvar(j): Inverse(self.g_list[j - 1]),
                Var(ustar_letter(j)): Adjoint(Inverse(self.g_list[j - 1])),
            }
            e = substitute(e, bindings)
        return e.scalar() if scalar else e

    def substituted_g(self, j: int):
        """g_j with all earlier u letters replaced back by inverses (over x only)."""
        return self.back_substitute(self.g_list[j - 1])


def _find_innermost_inverse(e: RatExpr):
    """First Inverse node (post-order) whose argument contains no Inverse."""
    if isinstance(e, (Scalar, Var)):
        return None
    if isinstance(e, Sum):
        for t in e.terms:
            hit = _find_innermost_inverse(t)
            if hit is not None:
                return hit
        return None
    if isinstance(e, Product):
        for f in e.factors:
            hit = _find_innermost_inverse(f)
            if hit is not None:
                return hit
        return None
    if isinstance(e, Adjoint):
        return _find_innermost_inverse(e.arg)
    if isinstance(e, Inverse):
        inner = _find_innermost_inverse(e.arg)
        return inner if inner is not None else e.arg
    raise TypeError(f"unknown node {type(e).__name__}")


def _lift_steps(e: MatRatExpr):
    """Sequence of (g_j, substituted tree) pairs, innermost-first."""
    g_list = []
    current = e
    while True:
        hit = None
        for entry in current.entries:
            hit = _find_innermost_inverse(entry)
            if hit is not None:
                break
        if hit is None:
            return g_list, current
        j = len(g_list) + 1
        current = substitute(current, {Inverse(hit): uvar(j)})
        g_list.append(hit)


def lift_substitute(e, lift: LiftResult):
    """Apply the lift's inverse-to-letter substitution to any expression built
    from the same subterms (innermost-first, sequential)."""
    scalar = isinstance(e, RatExpr)
    e = as_matexpr(e)
    for j, g in enumerate(lift.g_list, start=1):
        e = substitute(e, {Inverse(g): uvar(j)})
    return e.scalar() if scalar else e


def build_hat(q) -> LiftResult:
    """Replace each deduplicated inverse subterm g_j^-1 by u_j and expand the
    inverse-free result to a matrix polynomial."""
    q = as_matexpr(q)
    g_list, hat_expr = _lift_steps(q)
    hat_poly = expand_poly(hat_expr)
    return LiftResult(hat_expr=hat_expr, hat_poly=hat_poly,
                      g_list=tuple(g_list), u_arity=len(g_list))


# ---------------------------------------------------------------------------
# norm-cap estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormCapEstimate:
    value: float          # safety_factor * sup ||g(X)^-1||^2 over the samples
    sup_sq_norm: float
    witness: Optional[MatrixPoint]
    safety_factor: float

    def __float__(self):
        return self.value


def estimate_norm_cap(g: RatExpr, domain: DomainSpec, earlier: Sequence[RatExpr] = (),
                      sizes=(1, 2, 3), count: int = 40, seed: int = 0,
                      safety_factor: float = DEFAULT_SAFETY,
                      cond_cap: float = 1e12) -> NormCapEstimate:
    """Sampled bound D with D - (g^-1)^* g^-1 positive on the domain.

    ``earlier`` holds the arguments of the previously introduced u letters so
    nested arguments can be evaluated.  Raises NotInDomain when a sampled
    domain point makes g singular (the input is not defined on the domain).
    """
    points = sample_domain_sizes(domain, sizes, count, seed=seed)
    sup = 0.0
    witness = None
    for X in points:
        pt = inverse_point(X, list(earlier) + [g], cond_cap=cond_cap)
        inv_g = pt.U[-1]
        nrm = float(np.linalg.norm(inv_g, 2)) ** 2
        if nrm > sup:
            sup = nrm
            witness = X
    return NormCapEstimate(value=safety_factor * sup, sup_sq_norm=sup,
                           witness=witness, safety_factor=safety_factor)


# ---------------------------------------------------------------------------
# augmented generator set
# ---------------------------------------------------------------------------

FROM_DOMAIN = "domain"
REL_LEFT = "relation_left"
REL_RIGHT = "relation_right"
NORM_CAP = "norm_cap"


@dataclass(frozen=True)
class OElement:
    gen_id: str
    kind: str             # FROM_DOMAIN, REL_LEFT, REL_RIGHT, NORM_CAP
    poly: MatPoly
    j: Optional[int] = None
    sign: Optional[int] = None


@dataclass(frozen=True)
class AugmentedSet:
    """Original generators plus, per introduced letter u_j, the squared
    defining relations in both signs and a norm cap D_j - u_j^* u_j."""

    elements: tuple
    D: tuple

    def polys(self):
        return [el.poly for el in self.elements]

    def by_id(self, gen_id: str) -> OElement:
        for el in self.elements:
            if el.gen_id == gen_id:
                return el
        raise KeyError(gen_id)


def augment_generators(P: Sequence[MatPoly], lift: LiftResult,
                       D: Sequence[float]) -> AugmentedSet:
    """Emit P, the relation squares (both orders, both signs), and one norm cap
    per u letter, all expanded over (x, u)."""
    if len(D) != lift.u_arity:
        raise ValueError(f"need {lift.u_arity} cap values, got {len(D)}")
    elements = [OElement(gen_id=f"P{k}", kind=FROM_DOMAIN, poly=p)
                for k, p in enumerate(P)]
    one = NCPoly.one()
    for j in range(1, lift.u_arity + 1):
        g_poly = expand_entry(lift.g_list[j - 1])
        uj = NCPoly.letter(u_letter(j))
        left = one - uj * g_poly          # 1 - u_j g_j
        right = one - g_poly * uj         # 1 - g_j u_j
        for kind, rel in ((REL_LEFT, left), (REL_RIGHT, right)):
            square = rel.adjoint() * rel
            for sign in (1, -1):
                tag = "+" if sign == 1 else "-"
                poly = square if sign == 1 else -square
                elements.append(OElement(
                    gen_id=f"{kind}:{j}:{tag}", kind=kind,
                    poly=MatPoly.from_scalar(poly), j=j, sign=sign))
        ustar_j = NCPoly.letter(ustar_letter(j))
        cap = NCPoly.const(D[j - 1]) - ustar_j * uj
        elements.append(OElement(gen_id=f"{NORM_CAP}:{j}", kind=NORM_CAP,
                                 poly=MatPoly.from_scalar(cap), j=j))
    return AugmentedSet(elements=tuple(elements), D=tuple(float(v) for v in D))


# ---------------------------------------------------------------------------
# subterm closure and relation polynomials
# ---------------------------------------------------------------------------

ONE_TUPLE = (Scalar(1.0),)


def _flatten_factors(e: RatExpr) -> tuple:
    if isinstance(e, Product):
        out = []
        for f in e.factors:
            out.extend(_flatten_factors(f))
        return tuple(out)
    return (e,)


def _tuple_to_expr(tp: tuple) -> RatExpr:
    if len(tp) == 1:
        return tp[0]
    return Product(tp)


def _closure_rule_outputs(el: tuple):
    """One fixpoint step on a flattened factor tuple:

    drop any prefix (the empty remainder counts as the scalar 1); split a
    leading sum across its terms; and prefix a leading inverse with its own
    argument.
    """
    out = []
    k = len(el)
    for i in range(1, k + 1):
        out.append(el[i:] if i < k else ONE_TUPLE)
    head = el[0]
    if isinstance(head, Sum):
        for t in head.terms:
            out.append(_flatten_factors(t) + el[1:])
    if isinstance(head, Inverse):
        out.append(_flatten_factors(head.arg) + el)
    return out


@dataclass(frozen=True)
class ClosureSet:
    """Fixpoint of the subterm-closure rules, its image under the inverse-to-
    letter substitution, and the harvested relation polynomials."""

    elements: tuple       # expressions over x (may contain inverses)
    elements_u: tuple     # the same elements with inverses replaced by u letters
    relations: tuple      # MatPoly over (x, u): g_j u_j b - b
    lift: LiftResult
    _tuples: tuple = field(default=(), repr=False)
    _u_tuples: tuple = field(default=(), repr=False)


def closure_set(r, lift: Optional[LiftResult] = None,
                max_elements: int = CLOSURE_CAP) -> ClosureSet:
    """Smallest set of expressions containing the entries of ``r`` and closed
    under the four subterm rules; also builds the relation polynomials."""
    r = as_matexpr(r)
    if lift is None:
        lift = build_hat(r)
    seeds = []
    for entry in r.entries:
        tp = _flatten_factors(entry)
        if tp not in seeds:
            seeds.append(tp)
    seen = dict.fromkeys(seeds)
    queue = deque(seeds)
    while queue:
        el = queue.popleft()
        for new in _closure_rule_outputs(el):
            if new not in seen:
                seen[new] = None
                queue.append(new)
                if len(seen) > max_elements:
                    raise ClosureOverflow(
                        f"closure fixpoint exceeded {max_elements} elements")
    tuples = tuple(seen)
    u_tuples = []
    for el in tuples:
        subbed = []
        for f in el:
            subbed.extend(_flatten_factors(lift_substitute(f, lift)))
        u_tuples.append(tuple(subbed))
    u_tuples = tuple(u_tuples)
    closure = ClosureSet(
        elements=tuple(_tuple_to_expr(tp) for tp in tuples),
        elements_u=tuple(_tuple_to_expr(tp) for tp in u_tuples),
        relations=(),
        lift=lift,
        _tuples=tuples,
        _u_tuples=u_tuples,
    )
    relations = relation_polynomials(closure)
    return ClosureSet(elements=closure.elements, elements_u=closure.elements_u,
                      relations=relations, lift=lift,
                      _tuples=tuples, _u_tuples=u_tuples)


def relation_polynomials(closure: ClosureSet) -> tuple:
    """Scan the substituted closure for elements of the form g_j u_j b and emit
    g_j u_j b - b as a polynomial over (x, u)."""
    lift = closure.lift
    g_tuples = {}
    for j, g in enumerate(lift.g_list, start=1):
        g_tuples[j] = _flatten_factors(lift_substitute(g, lift))
    out = []
    for el in closure._u_tuples:
        for t, f in enumerate(el):
            if not (isinstance(f, Var) and f.letter.family == U_FAMILY and f.letter.star == 0):
                continue
            j = f.letter.index
            prefix = el[:t]
            if not prefix or g_tuples.get(j) != prefix:
                continue
            b = el[t + 1:]
            head = expand_entry(_tuple_to_expr(el))
            tail = expand_entry(_tuple_to_expr(b)) if b else NCPoly.one()
            m = head - tail
            if m.is_zero:
                continue
            poly = MatPoly.from_scalar(m)
            if not any(poly == q for q in out):
                out.append(poly)
    return tuple(out)


def build_relations(r, lift: Optional[LiftResult] = None) -> tuple:
    """Convenience: closure fixpoint followed by the relation harvest."""
    return closure_set(r, lift=lift).relations


# ---------------------------------------------------------------------------
# numeric sanity checks shared by pipelines and tests
# ---------------------------------------------------------------------------

def lift_agreement(q, lift: LiftResult, points, cond_cap: float = 1e12) -> float:
    """Max relative deviation of hat(X, g(X)^-1) from q(X) over the points."""
    q = as_matexpr(q)
    worst = 0.0
    for X in points:
        pt = inverse_point(X, list(lift.g_list), cond_cap=cond_cap)
        got = lift.hat_poly.evaluate(pt)
        want = eval_expr(q, X, cond_cap)
        scale = 1.0 + float(np.linalg.norm(want, 2))
        worst = max(worst, float(np.linalg.norm(got - want, 2)) / scale)
    return worst
