"""Exception types shared across the toolkit."""

from __future__ import annotations


class NCertError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(NCertError):
    """Operands have incompatible matrix shapes."""


class ArityMismatch(NCertError):
    """A matrix point does not match the variable count of the object it feeds."""


class ParseError(NCertError):
    """Syntax error in an expression string; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class NotInDomain(NCertError):
    """An inverse was requested at a point where its argument is singular or
    too ill-conditioned.  ``subterm`` is the offending expression."""

    def __init__(self, subterm=None, detail: str = ""):
        self.subterm = subterm
        msg = "expression not defined at the given point"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SamplingExhausted(NCertError):
    """Rejection sampling hit its retry cap without producing enough points."""


class NoCommonPoints(NCertError):
    """Equivalence testing found no point inside both expression domains."""


class ClosureOverflow(NCertError):
    """The subterm-closure fixpoint exceeded its element cap."""


class DegreeTooSmall(NCertError):
    """The target has a word that no product of basis words can reach."""


class SolverStalled(NCertError):
    """The feasibility solver hit its iteration cap without converging."""


class NonMonicPencil(NCertError):
    """The pencil pipeline requires a pencil whose constant block is the identity."""


class NotCertified(NCertError):
    """No certificate was found up to the degree cap.  Inconclusive, not a
    disproof; ``report`` holds per-degree solver margins and any negative
    witness found during pre-screening."""

    def __init__(self, message: str = "no certificate found", report=None, witness=None):
        super().__init__(message)
        self.report = report
        self.witness = witness
