"""Noncommutative rational expression toolkit: free-algebra arithmetic,
expression parsing and evaluation on matrix tuples, and weighted
sum-of-squares positivity certificates over Archimedean and monic-pencil
domains."""

from .errors import (
    ArityMismatch,
    ClosureOverflow,
    DegreeTooSmall,
    NCertError,
    NoCommonPoints,
    NonMonicPencil,
    NotCertified,
    NotInDomain,
    ParseError,
    SamplingExhausted,
    ShapeMismatch,
    SolverStalled,
)
from .freealg import (
    Letter,
    LinearPencil,
    MatPoly,
    NCPoly,
    pencil_eval,
    poly_add,
    poly_adjoint,
    poly_mul,
    u_letter,
    ustar_letter,
    words_up_to,
    x_letter,
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
    adjoint_expr,
    expand_poly,
    inverse_subterms,
    inversion_count,
    inversion_height,
    parse,
    parse_entry,
    poly_to_expr,
    substitute,
    unparse,
)
from .evalnum import (
    DomainSpec,
    EquivalenceVerdict,
    ExtendedPoint,
    KernelSample,
    MatrixPoint,
    eval_expr,
    in_domain,
    sample_domain,
    sample_kernel_points,
    test_equivalence,
)
from .lift import (
    ArchimedeanVerdict,
    AugmentedSet,
    ClosureSet,
    LiftResult,
    archimedean_check,
    augment_generators,
    build_hat,
    build_relations,
    closure_set,
    estimate_norm_cap,
    relation_polynomials,
)
from .sdp import BlockSpec, SdpInstance, SdpResult, nearest_psd
from .sdp import solve as sdp_solve
from .sos import (
    Certificate,
    GramProblem,
    WordBasis,
    assemble_rational_certificate,
    build_gram_problem,
    certify_pencil_rational,
    certify_polynomial,
    certify_rational,
    check_positivity,
    extract_certificate,
    solve_gram,
    verify_certificate,
)

__version__ = "0.1.0"
