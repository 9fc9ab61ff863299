"""Command-line entry point: parse, evaluate, compare, sample, lift, and
certify noncommutative rational expressions, with reproducible JSON reports.

Exit codes: 0 success / verified; 2 inconclusive (NotCertified, distinguished,
negative positivity check); 1 usage or domain errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from . import __version__
from .errors import NCertError, NotCertified, NotInDomain, ParseError
from .evalnum import (
    DomainSpec,
    ExtendedPoint,
    MatrixPoint,
    encode_matrix,
    eval_expr,
    in_domain,
    sample_domain,
    test_equivalence,
)
from .freealg import LinearPencil, MatPoly
from .lift import archimedean_check, build_hat, closure_set, estimate_norm_cap
from .rexpr import (
    MatRatExpr,
    as_matexpr,
    expand_poly,
    inverse_subterms,
    inversion_count,
    parse,
    unparse,
)
from .sos import (
    Certificate,
    certify_pencil_rational,
    certify_polynomial,
    certify_rational,
    check_positivity,
    expansion_value,
    pointwise_agreement,
    verify_certificate,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return encode_matrix(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _emit(report: dict, args) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    if getattr(args, "output", None):
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    if getattr(args, "json", False) or not getattr(args, "output", None):
        print(text)


def _sizes(arg: str):
    return tuple(int(s) for s in arg.split(",") if s)


def _load_domain(args) -> DomainSpec:
    if getattr(args, "pencil", None):
        with open(args.pencil) as fh:
            data = json.load(fh)
        return DomainSpec.from_pencil(LinearPencil.from_json_dict(data))
    if getattr(args, "P", None):
        polys = []
        for text in args.P:
            poly = expand_poly(parse(text))
            polys.append(poly)
        return DomainSpec.from_polys(polys)
    raise NCertError("a domain is required: pass --P (repeatable) or --pencil FILE")


def _resolved_config(args, extra=None) -> dict:
    skip = {"func", "output", "json"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        out[key] = value
    if extra:
        out.update(extra)
    return out


def _load_point(args, d: int) -> ExtendedPoint:
    if args.point.strip().startswith("{"):
        data = json.loads(args.point)
    else:
        with open(args.point) as fh:
            data = json.load(fh)
    return ExtendedPoint.from_json_dict(data)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_parse(args) -> int:
    e = parse(args.expr)
    report = {
        "command": "parse",
        "config": _resolved_config(args),
        "result": {
            "canonical": unparse(e),
            "rows": e.rows,
            "cols": e.cols,
            "inversion_count": inversion_count(e),
            "inverse_subterms": [unparse(g) for g in inverse_subterms(e)],
        },
    }
    _emit(report, args)
    return EXIT_OK


def _cmd_eval(args) -> int:
    e = parse(args.expr)
    point = _load_point(args, 0)
    value = eval_expr(e, point, cond_cap=args.cond_cap)
    report = {
        "command": "eval",
        "config": _resolved_config(args),
        "result": {"value": encode_matrix(value), "shape": list(value.shape)},
    }
    _emit(report, args)
    return EXIT_OK


def _cmd_equiv(args) -> int:
    e1 = parse(args.expr1)
    e2 = parse(args.expr2)
    verdict = test_equivalence(e1, e2, sizes=_sizes(args.sizes), trials=args.trials,
                               tol=args.tol, seed=args.seed)
    result = {
        "verdict": "equivalent-so-far" if verdict.equivalent_so_far else "distinguished",
        "points_tested": verdict.points_tested,
    }
    if not verdict.equivalent_so_far:
        result["deviation"] = verdict.deviation
        result["witness"] = verdict.witness.to_json_dict()
    report = {"command": "equiv", "config": _resolved_config(args), "result": result}
    _emit(report, args)
    return EXIT_OK if verdict.equivalent_so_far else EXIT_INCONCLUSIVE


def _cmd_sample_domain(args) -> int:
    domain = _load_domain(args)
    points = sample_domain(domain, args.n, args.count, seed=args.seed)
    report = {
        "command": "sample-domain",
        "config": _resolved_config(args),
        "result": {
            "points": [p.to_json_dict() for p in points],
            "margins": [in_domain(domain, p).margin for p in points],
        },
    }
    _emit(report, args)
    return EXIT_OK


def _cmd_lift(args) -> int:
    e = parse(args.expr)
    lifted = build_hat(e)
    closure = closure_set(e, lift=lifted)
    result = {
        "hat": str(lifted.hat_poly),
        "g_list": [unparse(g) for g in lifted.g_list],
        "u_arity": lifted.u_arity,
        "relations": [str(m) for m in closure.relations],
        "closure_size": len(closure.elements),
    }
    if args.P or args.pencil:
        domain = _load_domain(args)
        caps = []
        for j in range(1, lifted.u_arity + 1):
            est = estimate_norm_cap(lifted.g_list[j - 1], domain,
                                    earlier=lifted.g_list[:j - 1], seed=args.seed)
            caps.append(est.value)
        result["norm_caps"] = caps
        if domain.polys is not None:
            aug_tags = ["domain"] * len(domain.polys)
            for j in range(1, lifted.u_arity + 1):
                aug_tags += [f"relation_left:{j}:+", f"relation_left:{j}:-",
                             f"relation_right:{j}:+", f"relation_right:{j}:-",
                             f"norm_cap:{j}"]
            result["augmented_tags"] = aug_tags
    report = {"command": "lift", "config": _resolved_config(args), "result": result}
    _emit(report, args)
    return EXIT_OK


def _certificate_report(cert: Certificate) -> dict:
    return cert.to_json_dict()


def _cmd_certify(args) -> int:
    e = parse(args.expr)
    try:
        if args.pencil:
            with open(args.pencil) as fh:
                pencil = LinearPencil.from_json_dict(json.load(fh))
            cert = certify_pencil_rational(e, pencil, delta_max=args.delta_max,
                                           seed=args.seed, verify_tol=args.tol)
        else:
            domain = _load_domain(args)
            if inversion_count(e):
                cert = certify_rational(e, list(domain.polys), delta_max=args.delta_max,
                                        seed=args.seed, verify_tol=args.tol)
            else:
                cert = certify_polynomial(expand_poly(e), list(domain.polys),
                                          delta_max=args.delta_max, seed=args.seed,
                                          verify_tol=args.tol)
    except NotCertified as exc:
        result = {"verdict": "not-certified", "detail": str(exc)}
        if exc.witness is not None:
            result["witness"] = exc.witness.to_json_dict()
        report = {"command": "certify", "config": _resolved_config(args), "result": result}
        _emit(report, args)
        return EXIT_INCONCLUSIVE
    report = {
        "command": "certify",
        "config": _resolved_config(args),
        "result": {"verdict": "certified", "certificate": _certificate_report(cert)},
    }
    _emit(report, args)
    return EXIT_OK


def _cmd_verify(args) -> int:
    with open(args.certificate) as fh:
        data = json.load(fh)
    cert_data = data.get("result", {}).get("certificate", data)
    q = parse(args.expr)
    gens = []
    from .lift import OElement
    for gd in cert_data["generators"]:
        gens.append(OElement(gen_id=gd["id"], kind=gd["kind"],
                             poly=expand_poly(parse(gd["poly"]))))
    rational = cert_data["pipeline"].endswith("assembled") or any(
        "^-1" in s for s in cert_data["sos"])
    sos_factors = [parse(s) if rational else expand_poly(parse(s))
                   for s in cert_data["sos"]]
    weighted = [(wd["gen"], parse(wd["r"]) if rational else expand_poly(parse(wd["r"])))
                for wd in cert_data["weighted"]]
    ideal = None
    if cert_data.get("ideal"):
        ideal = [(expand_poly(parse(idata["m"])), expand_poly(parse(idata["iota"])))
                 for idata in cert_data["ideal"]]
    cert = Certificate(delta=cert_data["delta"], sos_factors=sos_factors,
                       weighted_factors=weighted, generators=tuple(gens),
                       ideal_factors=ideal, provenance=cert_data["pipeline"],
                       rational=rational)
    result: dict = {}
    ok = True
    if not rational:
        rep = verify_certificate(expand_poly(q), cert)
        result["symbolic_residual"] = rep.residual
        ok = rep.residual <= args.tol
    domain = _load_domain(args)
    from .evalnum import sample_domain_sizes
    points = sample_domain_sizes(domain, _sizes(args.sizes), args.count, seed=args.seed)
    dev = pointwise_agreement(lambda X: eval_expr(q, X),
                              lambda X: expansion_value(cert, X), points)
    result["pointwise_deviation"] = dev
    ok = ok and dev <= args.tol
    result["verdict"] = "verified" if ok else "rejected"
    report = {"command": "verify", "config": _resolved_config(args), "result": result}
    _emit(report, args)
    return EXIT_OK if ok else EXIT_INCONCLUSIVE


def _cmd_check_pos(args) -> int:
    e = parse(args.expr)
    domain = _load_domain(args)
    rep = check_positivity(e, domain, sizes=_sizes(args.sizes), count=args.count,
                           seed=args.seed)
    result = {
        "min_eigenvalue": rep.min_eig,
        "by_size": {str(k): v for k, v in rep.by_size.items()},
        "points_used": rep.points_used,
    }
    if rep.witness is not None and rep.min_eig < -domain.psd_tolerance:
        result["witness"] = rep.witness.to_json_dict()
    report = {"command": "check-pos", "config": _resolved_config(args), "result": result}
    _emit(report, args)
    return EXIT_OK if rep.min_eig >= -domain.psd_tolerance else EXIT_INCONCLUSIVE


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _add_common(sp, domain=False):
    sp.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    sp.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    sp.add_argument("-o", "--output", help="write the JSON report to a file")
    if domain:
        sp.add_argument("--P", action="append", default=[],
                        help="domain generator polynomial (repeatable)")
        sp.add_argument("--pencil", help="JSON file with {A0: matrix, Ai: [matrix, ...]}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ncert",
        description="noncommutative rational expression positivity toolkit")
    ap.add_argument("--version", action="version", version=f"ncert {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="parse an expression and print its canonical form")
    sp.add_argument("expr")
    _add_common(sp)
    sp.set_defaults(func=_cmd_parse)

    sp = sub.add_parser("eval", help="evaluate an expression at a matrix point")
    sp.add_argument("expr")
    sp.add_argument("--point", required=True,
                    help="JSON {n, X: [...], U: [...]} inline or a file path")
    sp.add_argument("--cond-cap", type=float, default=1e12, dest="cond_cap")
    _add_common(sp)
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("equiv", help="probabilistic equivalence test")
    sp.add_argument("expr1")
    sp.add_argument("expr2")
    sp.add_argument("--sizes", default="1,2,3,4")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-8)
    _add_common(sp)
    sp.set_defaults(func=_cmd_equiv)

    sp = sub.add_parser("sample-domain", help="sample matrix points of a domain")
    sp.add_argument("--n", type=int, default=2, help="matrix size")
    sp.add_argument("--count", type=int, default=10)
    _add_common(sp, domain=True)
    sp.set_defaults(func=_cmd_sample_domain)

    sp = sub.add_parser("lift", help="replace inverses by fresh letters; report the lift")
    sp.add_argument("expr")
    _add_common(sp, domain=True)
    sp.set_defaults(func=_cmd_lift)

    sp = sub.add_parser("certify", help="search for a positivity certificate")
    sp.add_argument("expr")
    sp.add_argument("--delta-max", type=int, default=3, dest="delta_max")
    sp.add_argument("--tol", type=float, default=1e-6)
    _add_common(sp, domain=True)
    sp.set_defaults(func=_cmd_certify)

    sp = sub.add_parser("verify", help="re-verify a stored certificate")
    sp.add_argument("certificate", help="certificate JSON file")
    sp.add_argument("--expr", required=True, help="the certified expression")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--sizes", default="1,2,3")
    sp.add_argument("--count", type=int, default=10)
    _add_common(sp, domain=True)
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser("check-pos", help="sampled minimum eigenvalue over a domain")
    sp.add_argument("expr")
    sp.add_argument("--sizes", default="1,2,3,4")
    sp.add_argument("--count", type=int, default=25)
    _add_common(sp, domain=True)
    sp.set_defaults(func=_cmd_check_pos)

    return ap


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (NCertError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
