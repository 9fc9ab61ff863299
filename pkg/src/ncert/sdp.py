"""Dense semidefinite feasibility solver.

Finds Hermitian PSD blocks plus free complex variables satisfying affine
equality constraints, then pushes the minimum block eigenvalue up as far as a
short bisection allows.  The workhorse is projection splitting between the
equality-constraint affine subspace and the PSD cone product
(Douglas-Rachford iteration on the two projectors, which tolerates the thin
intersections these Gram problems produce far better than plain alternating
projections); everything is deterministic (zero start, no randomness), so
identical instances give identical outputs on one platform.

Hermitian blocks are parameterized by real numbers: the diagonal, then the
real and imaginary parts of the strict upper triangle, row-major.  A "free"
block of dimension k holds k unconstrained complex variables (2k reals).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ShapeMismatch

PSD = "psd"
FREE = "free"


@dataclass(frozen=True)
class BlockSpec:
    dim: int
    kind: str  # PSD (Hermitian dim x dim) or FREE (dim complex scalars)

    def n_params(self) -> int:
        if self.kind == PSD:
            return self.dim * self.dim
        return 2 * self.dim


def hermitian_param_count(dim: int) -> int:
    return dim * dim


def _upper_index(dim: int, i: int, j: int) -> int:
    """Offset of the (re, im) pair for strict-upper entry (i, j), i < j."""
    # pairs before row i: sum_{r<i} (dim-1-r); pairs before (i,j) in row i: j-i-1
    before = i * (dim - 1) - (i * (i - 1)) // 2 + (j - i - 1)
    return dim + 2 * before


def block_to_params(mat: np.ndarray) -> np.ndarray:
    """Hermitian matrix -> real parameter vector (diagonal, then upper re/im)."""
    dim = mat.shape[0]
    out = np.empty(dim * dim)
    out[:dim] = np.real(np.diag(mat))
    pos = dim
    for i in range(dim):
        for j in range(i + 1, dim):
            out[pos] = mat[i, j].real
            out[pos + 1] = mat[i, j].imag
            pos += 2
    return out


def params_to_block(vec: np.ndarray, dim: int) -> np.ndarray:
    mat = np.zeros((dim, dim), dtype=complex)
    np.fill_diagonal(mat, vec[:dim])
    pos = dim
    for i in range(dim):
        for j in range(i + 1, dim):
            mat[i, j] = vec[pos] + 1j * vec[pos + 1]
            mat[j, i] = vec[pos] - 1j * vec[pos + 1]
            pos += 2
    return mat


class SdpInstance:
    """Feasibility instance: blocks, sparse real equality system A z = b."""

    def __init__(self, blocks: Sequence[BlockSpec], A: sp.spmatrix, b: np.ndarray):
        self.blocks = tuple(blocks)
        self.offsets = []
        pos = 0
        for blk in self.blocks:
            self.offsets.append(pos)
            pos += blk.n_params()
        self.n_params = pos
        self.A = sp.csr_matrix(A, shape=(A.shape[0], pos))
        self.b = np.asarray(b, dtype=float)
        if self.A.shape[0] != self.b.shape[0]:
            raise ShapeMismatch("equality system rows and rhs differ")

    # -- assignment accessors ----------------------------------------------

    def block_matrix(self, z: np.ndarray, k: int) -> np.ndarray:
        blk = self.blocks[k]
        if blk.kind != PSD:
            raise ValueError(f"block {k} is not a PSD block")
        off = self.offsets[k]
        return params_to_block(z[off:off + blk.n_params()], blk.dim)

    def set_block(self, z: np.ndarray, k: int, mat: np.ndarray) -> None:
        blk = self.blocks[k]
        off = self.offsets[k]
        z[off:off + blk.n_params()] = block_to_params(mat)

    def free_values(self, z: np.ndarray, k: int) -> np.ndarray:
        blk = self.blocks[k]
        if blk.kind != FREE:
            raise ValueError(f"block {k} is not a free block")
        off = self.offsets[k]
        raw = z[off:off + blk.n_params()]
        return raw[0::2] + 1j * raw[1::2]

    def set_free(self, z: np.ndarray, k: int, values: np.ndarray) -> None:
        blk = self.blocks[k]
        off = self.offsets[k]
        values = np.asarray(values, dtype=complex)
        z[off + 0:off + 2 * blk.dim:2] = values.real
        z[off + 1:off + 2 * blk.dim:2] = values.imag

    def residual(self, z: np.ndarray) -> float:
        if self.A.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.A @ z - self.b)))

    def margin(self, z: np.ndarray) -> float:
        vals = []
        for k, blk in enumerate(self.blocks):
            if blk.kind == PSD:
                mat = self.block_matrix(z, k)
                vals.append(float(np.linalg.eigvalsh(mat)[0]))
        return min(vals) if vals else float("inf")

    def dump(self) -> str:
        """Sparse text form, one equality row per line: idx:coef ... | rhs."""
        lines = [f"blocks {' '.join(f'{b.kind}:{b.dim}' for b in self.blocks)}"]
        acoo = self.A.tocoo()
        rows: dict = {}
        for r, c, v in zip(acoo.row, acoo.col, acoo.data):
            rows.setdefault(int(r), []).append((int(c), float(v)))
        for r in range(self.A.shape[0]):
            cells = " ".join(f"{c}:{v:.17g}" for c, v in sorted(rows.get(r, [])))
            lines.append(f"{cells} | {self.b[r]:.17g}")
        return "\n".join(lines)


@dataclass
class SdpResult:
    status: str                 # "feasible" | "infeasible" | "stalled"
    z: Optional[np.ndarray]
    margin: float
    residual: float
    iterations: int
    gap: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def nearest_psd(mat: np.ndarray) -> np.ndarray:
    """Frobenius-optimal PSD projection: clip negative eigenvalues at zero."""
    mat = np.asarray(mat, dtype=complex)
    mat = (mat + mat.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(mat)
    clipped = np.clip(vals, 0.0, None)
    out = (vecs * clipped) @ vecs.conj().T
    return (out + out.conj().T) / 2.0


class _AffineProjector:
    """Orthogonal projection onto {z : A z = b} via a factorized normal system."""

    def __init__(self, A: sp.csr_matrix, b: np.ndarray):
        self.A = A
        self.b = b
        self.trivial = A.shape[0] == 0
        if self.trivial:
            return
        AAT = (A @ A.T).tocsc()
        diag = AAT.diagonal()
        scale = float(np.max(diag)) if diag.size else 1.0
        reg = 1e-13 * (1.0 + scale)
        self.AAT = AAT
        self.solve = spla.factorized(AAT + reg * sp.identity(AAT.shape[0], format="csc"))

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.trivial:
            return z
        r = self.A @ z - self.b
        y = self.solve(r)
        # one step of iterative refinement keeps the projection near exact
        y = y + self.solve(r - self.AAT @ y)
        return z - self.A.T @ y


def _project_cone(inst: SdpInstance, z: np.ndarray, shift: float = 0.0) -> np.ndarray:
    out = z.copy()
    for k, blk in enumerate(inst.blocks):
        if blk.kind != PSD:
            continue
        mat = inst.block_matrix(z, k)
        if shift == 0.0:
            proj = nearest_psd(mat)
        else:
            dim = blk.dim
            proj = nearest_psd(mat - shift * np.eye(dim)) + shift * np.eye(dim)
        inst.set_block(out, k, proj)
    return out


def _splitting_run(inst: SdpInstance, proj_affine, z0: np.ndarray, shift: float,
                   tol: float, iter_cap: int, check_every: int = 20):
    """Douglas-Rachford iteration on the affine and cone projectors.

    The affine shadow pa = P_affine(x) satisfies the equalities exactly; the
    run succeeds once its minimum block eigenvalue reaches shift - tol.  When
    the two sets do not intersect the iterate drifts at a constant speed equal
    to the set distance, which is the infeasibility signal.

    Returns (status, z, margin, residual, iterations, gap).
    """
    x = z0.copy()
    pa = proj_affine(x)
    best_margin = -np.inf
    drift_history: list = []
    x_prev_check = x.copy()
    it = 0
    while it < iter_cap:
        it += 1
        pb = _project_cone(inst, 2.0 * pa - x, shift)
        x = x + pb - pa
        pa = proj_affine(x)
        if it % check_every == 0:
            margin = inst.margin(pa)
            residual = inst.residual(pa)
            best_margin = max(best_margin, margin)
            gap = float(np.max(np.abs(pb - pa))) if pa.size else 0.0
            if residual <= tol and margin >= shift - tol:
                return "feasible", pa, margin, residual, it, gap
            drift = float(np.linalg.norm(x - x_prev_check)) / check_every
            x_prev_check = x.copy()
            drift_history.append(drift)
            if margin < -1e8:
                # shadows are running away: the sets cannot intersect
                return "infeasible", pa, margin, residual, it, gap
            if len(drift_history) >= 10:
                window = float(np.mean(drift_history[-5:]))
                prev = float(np.mean(drift_history[-10:-5]))
                first = float(np.mean(drift_history[:5]))
                stable = abs(window - prev) <= 1e-3 * max(window, 1e-300)
                growing = window > 10.0 * max(first, 100 * tol) and window > prev
                if (stable or growing) and window > 100 * tol:
                    return "infeasible", pa, margin, residual, it, gap
    margin = inst.margin(pa)
    residual = inst.residual(pa)
    gap = float(np.max(np.abs(pb - pa))) if pa.size else 0.0
    return "stalled", pa, margin, residual, it, gap


def solve(inst: SdpInstance, tol: float = 1e-9, iter_cap: int = 50_000,
          polish: bool = True, polish_rounds: int = 5) -> SdpResult:
    """Find PSD blocks + free variables with equality residual <= tol, then
    best-effort maximize the uniform eigenvalue margin.

    The contract is only that a returned feasible assignment has residual
    <= tol and min block eigenvalue >= -tol; the reported margin is measured
    on the returned point.  Infeasibility is a heuristic verdict (the
    alternating projections converged to a positive set distance).
    """
    proj_affine = _AffineProjector(inst.A, inst.b)
    z0 = np.zeros(inst.n_params)
    if not proj_affine.trivial:
        z_test = proj_affine(z0)
        res0 = inst.residual(z_test)
        if res0 > max(100 * tol, 1e-8 * (1.0 + float(np.max(np.abs(inst.b))))):
            raise ValueError(f"equality system is inconsistent (residual {res0:.3e})")

    status, z, margin, residual, iters, gap = _splitting_run(
        inst, proj_affine, z0, 0.0, tol, iter_cap)
    if status != "feasible":
        return SdpResult(status=status, z=z, margin=margin, residual=residual,
                         iterations=iters, gap=gap)

    result = SdpResult(status="feasible", z=z, margin=margin, residual=residual,
                       iterations=iters, gap=gap)
    if not polish or not any(b.kind == PSD for b in inst.blocks):
        return result

    # margin polish: bisection on the uniform eigenvalue shift, warm-started.
    # The search is capped: paired +/- generators can make the supremum
    # infinite, so this is a bounded best-effort push into the interior.
    budget = max(400, min(2000, iter_cap // 25))
    lo = max(margin, 0.0)
    hi = max(1.0, 4.0 * abs(margin), float(np.max(np.abs(inst.b))) if inst.b.size else 1.0)
    best = result
    warm = z
    for _ in range(polish_rounds):
        t = (lo + hi) / 2.0
        status, zt, mt, rt, its, gp = _splitting_run(inst, proj_affine, warm, t, tol, budget)
        iters += its
        if status == "feasible" and rt <= tol and mt >= best.margin:
            best = SdpResult(status="feasible", z=zt, margin=mt, residual=rt,
                             iterations=iters, gap=gp)
            warm = zt
            lo = t
        else:
            hi = t
        if hi - lo <= max(10 * tol, 1e-6 * hi):
            break
    return best
