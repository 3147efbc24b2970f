"""Self-contained semidefinite-program solver for block LMI problems.

Problem form::

    minimize    c . y  (+ constant offset)
    subject to  F0_b + sum_j y_j Fj_b  is PSD   for every block b
                A y = b

solved by ADMM-style operator splitting: an equality-constrained
least-squares step (one sparse KKT factorization, reused across
iterations) alternating with a projection of every block onto the PSD
cone via symmetric eigendecomposition.  Termination uses primal/dual
residuals and the duality gap measured on the original (unscaled) data,
so a returned ``optimal`` status is meaningful regardless of the
internal equilibration.  The iteration is deterministic: identical
inputs produce identical iterate sequences.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SdpBlock",
    "SdpProblem",
    "SdpSolution",
    "project_psd",
    "solve",
    "read_sdpa",
    "write_solution_json",
]

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_INFEASIBLE = "infeasible_detected"

# Iterates larger than this (relative to data scale) are read as a
# divergence certificate for an infeasible / unattained problem.
_DIVERGENCE_LIMIT = 1e12


@dataclass
class SdpBlock:
    """One PSD block: ``F0 + sum_j y_j Fj`` with ``coeff`` mapping y to vec(sum)."""

    dim: int
    f0: np.ndarray                    # (dim, dim) dense symmetric
    coeff: sp.csr_matrix              # (dim*dim, num_vars)

    @classmethod
    def from_triplets(cls, dim: int, num_vars: int,
                      f0_entries: list[tuple[int, int, float]],
                      coeff_entries: list[tuple[int, int, int, float]]) -> "SdpBlock":
        """Build from ``(r, c, v)`` constant entries and ``(j, r, c, v)`` variable entries.

        Entries accumulate; both halves of symmetric pairs must be supplied.
        """
        f0 = np.zeros((dim, dim))
        for r, c, v in f0_entries:
            f0[r, c] += v
        rows, cols, vals = [], [], []
        for j, r, c, v in coeff_entries:
            rows.append(r * dim + c)
            cols.append(j)
            vals.append(v)
        coeff = sp.coo_matrix((vals, (rows, cols)), shape=(dim * dim, num_vars)).tocsr()
        return cls(dim=dim, f0=f0, coeff=coeff)

    def matrices(self) -> tuple[np.ndarray, list[sp.csr_matrix]]:
        """Return ``F0`` and the per-variable coefficient matrices (test helper)."""
        fjs = []
        csc = self.coeff.tocsc()
        for j in range(self.coeff.shape[1]):
            col = csc.getcol(j).toarray().reshape(self.dim, self.dim)
            fjs.append(sp.csr_matrix(col))
        return self.f0, fjs


@dataclass
class SdpProblem:
    """Block-diagonal LMI-form SDP with optional linear equality rows."""

    num_vars: int
    blocks: list[SdpBlock]
    a_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_offset: float = 0.0
    block_labels: list[str] | None = None

    def validate(self):
        if len(self.c) != self.num_vars:
            raise ValueError("objective length does not match num_vars")
        for blk in self.blocks:
            if blk.dim <= 0:
                raise ValueError("block dimension must be positive")
            if blk.coeff.shape != (blk.dim * blk.dim, self.num_vars):
                raise ValueError("block coefficient matrix has wrong shape")
            if not np.allclose(blk.f0, blk.f0.T, atol=1e-12):
                raise ValueError("block F0 is not symmetric")
        if self.a_eq is not None:
            if self.a_eq.shape[1] != self.num_vars:
                raise ValueError("equality matrix has wrong number of columns")
            if self.b_eq is None or self.a_eq.shape[0] != len(self.b_eq):
                raise ValueError("equality rhs length mismatch")

    @property
    def num_equalities(self) -> int:
        return 0 if self.a_eq is None else self.a_eq.shape[0]

    def block_values(self, y: np.ndarray) -> list[np.ndarray]:
        """Numeric block matrices at y."""
        out = []
        for blk in self.blocks:
            vec = blk.f0.ravel() + blk.coeff @ y
            out.append(vec.reshape(blk.dim, blk.dim))
        return out


@dataclass
class SdpSolution:
    y: np.ndarray
    objective_value: float
    primal_residual: float
    dual_residual: float
    gap: float
    status: str
    iterations: int
    block_eigenvalue_floor: float = 0.0

    def to_dict(self) -> dict:
        return {
            "y": [float(v) for v in self.y],
            "objective_value": float(self.objective_value),
            "primal_residual": float(self.primal_residual),
            "dual_residual": float(self.dual_residual),
            "gap": float(self.gap),
            "status": self.status,
            "iterations": int(self.iterations),
            "block_eigenvalue_floor": float(self.block_eigenvalue_floor),
        }


def project_psd(m: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix: clip negative eigenvalues to zero.

    The input is symmetrized defensively; the operation is idempotent.
    """
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    evals, evecs = np.linalg.eigh(m)
    if evals[0] >= 0.0:
        return m
    clipped = np.maximum(evals, 0.0)
    out = (evecs * clipped) @ evecs.T
    return 0.5 * (out + out.T)


def _min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


class _Workspace:
    """Scaled problem data plus the cached KKT factorization."""

    def __init__(self, problem: SdpProblem, rho: float):
        self.problem = problem
        n = problem.num_vars
        self.dims = [blk.dim for blk in problem.blocks]
        self.offsets = np.cumsum([0] + [d * d for d in self.dims])
        self.total = int(self.offsets[-1])

        self.fmat = sp.vstack([blk.coeff for blk in problem.blocks], format="csr") \
            if problem.blocks else sp.csr_matrix((0, n))
        self.f0 = np.concatenate([blk.f0.ravel() for blk in problem.blocks]) \
            if problem.blocks else np.zeros(0)
        self.a = problem.a_eq.tocsr() if problem.a_eq is not None else None
        self.b = np.asarray(problem.b_eq, dtype=float) if problem.b_eq is not None else np.zeros(0)
        self.c = np.asarray(problem.c, dtype=float)

        # Column equilibration over the stacked constraint matrix; affects
        # only the iterate dynamics since residuals are measured unscaled.
        stacked = self.fmat if self.a is None else sp.vstack([self.fmat, self.a], format="csr")
        colmax = np.zeros(n)
        if stacked.nnz:
            colmax = np.asarray(abs(stacked).max(axis=0).todense()).ravel()
        self.dcol = 1.0 / np.sqrt(np.clip(colmax, 1e-8, None))
        self.dcol = np.clip(self.dcol, 1e-4, 1e4)

        dmat = sp.diags(self.dcol)
        self.fmat_s = (self.fmat @ dmat).tocsr()
        if self.a is not None:
            a_cs = (self.a @ dmat).tocsr()
            rowmax = np.asarray(abs(a_cs).max(axis=1).todense()).ravel()
            self.erow = 1.0 / np.sqrt(np.clip(rowmax, 1e-8, None))
            self.erow = np.clip(self.erow, 1e-4, 1e4)
            self.a_s = (sp.diags(self.erow) @ a_cs).tocsr()
            self.b_s = self.erow * self.b
        else:
            self.erow = np.zeros(0)
            self.a_s = None
            self.b_s = np.zeros(0)

        c_s = self.dcol * self.c
        cnorm = float(np.linalg.norm(c_s)) / max(1.0, np.sqrt(n))
        self.sigma = 1.0 / max(cnorm, 1e-8)
        self.c_s = self.sigma * c_s

        self.gram = (self.fmat_s.T @ self.fmat_s).tocsc()
        self.rho = rho
        self._factorize()

    def _factorize(self):
        n = self.problem.num_vars
        delta = 1e-8
        top = self.rho * self.gram + delta * sp.eye(n)
        if self.a_s is not None and self.a_s.shape[0] > 0:
            m = self.a_s.shape[0]
            kkt = sp.bmat([[top, self.a_s.T], [self.a_s, -delta * sp.eye(m)]], format="csc")
            self.kkt_exact = sp.bmat([[self.rho * self.gram, self.a_s.T],
                                      [self.a_s, None]], format="csr")
        else:
            kkt = top.tocsc()
            self.kkt_exact = (self.rho * self.gram).tocsr()
        self.lu = spla.splu(kkt)

    def set_rho(self, rho: float):
        self.rho = rho
        self._factorize()

    def solve_kkt(self, rhs_top: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve the saddle system, refining once if the regularization shows."""
        rhs = np.concatenate([rhs_top, self.b_s]) if self.a_s is not None else rhs_top
        x = self.lu.solve(rhs)
        resid = rhs - self.kkt_exact @ x
        if np.linalg.norm(resid) > 1e-11 * (1.0 + np.linalg.norm(rhs)):
            x = x + self.lu.solve(resid)
        n = self.problem.num_vars
        return x[:n], x[n:]

    def split_blocks(self, vec: np.ndarray) -> list[np.ndarray]:
        return [vec[self.offsets[i]:self.offsets[i + 1]].reshape(d, d)
                for i, d in enumerate(self.dims)]


def solve(problem: SdpProblem, tol: float = 1e-6, max_iter: int = 200000,
          rho: float = 1.0, over_relaxation: float = 1.5,
          check_every: int = 25, time_limit: float | None = None) -> SdpSolution:
    """Solve an LMI-form SDP by operator splitting.

    Returns status ``optimal`` once primal residual, dual residual, gap
    and the block eigenvalue floor all meet ``tol`` (floor at ``-10*tol``);
    ``max_iterations`` returns the best iterate seen (also used when
    ``time_limit`` seconds elapse); ``infeasible_detected`` is raised from
    a divergence certificate on the iterates.
    """
    problem.validate()
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = problem.num_vars
    ws = _Workspace(problem, rho)
    started = time.perf_counter()

    z = np.zeros(ws.total)
    u = np.zeros(ws.total)
    y_s = np.zeros(n)
    lam_s = np.zeros(ws.b_s.shape[0]) if ws.a_s is not None else np.zeros(0)
    alpha = over_relaxation

    data_scale = 1.0 + max(
        float(np.abs(ws.f0).max()) if ws.f0.size else 0.0,
        float(np.abs(ws.b).max()) if ws.b.size else 0.0,
    )

    best = None     # (score, y, metrics, iterations)
    status = STATUS_MAX_ITERATIONS
    it = 0
    metrics = (np.inf, np.inf, np.inf)
    s_vec = np.zeros(ws.total)

    for it in range(1, max_iter + 1):
        # y-step: equality-constrained quadratic minimization.
        rhs_top = ws.rho * (ws.fmat_s.T @ (z - u - ws.f0)) - ws.c_s
        y_s, lam_s = ws.solve_kkt(rhs_top)
        s_vec = ws.f0 + ws.fmat_s @ y_s

        # PSD projection with over-relaxation.
        s_hat = alpha * s_vec + (1.0 - alpha) * z
        w = s_hat + u
        z_new = np.empty_like(z)
        for i, d in enumerate(ws.dims):
            lo, hi = ws.offsets[i], ws.offsets[i + 1]
            z_new[lo:hi] = project_psd(w[lo:hi].reshape(d, d)).ravel()
        u = u + s_hat - z_new
        z = z_new

        if it % check_every and it != max_iter:
            continue

        # Residuals and gap on the original data.
        y = ws.dcol * y_s
        pobj = float(ws.c @ y)
        v_vec = (-ws.rho / ws.sigma) * u                       # PSD dual, >= 0
        lam = -(ws.erow * lam_s) / ws.sigma if lam_s.size else lam_s
        pres_vec = s_vec - z
        pres = float(np.linalg.norm(pres_vec)) / (1.0 + max(
            float(np.linalg.norm(s_vec)), float(np.linalg.norm(z))))
        if ws.a is not None:
            ares = float(np.linalg.norm(ws.a @ y - ws.b)) / (1.0 + float(np.linalg.norm(ws.b)))
        else:
            ares = 0.0
        dres_vec = ws.c - ws.fmat.T @ v_vec
        if ws.a is not None:
            dres_vec = dres_vec - ws.a.T @ lam
        dres = float(np.linalg.norm(dres_vec)) / (1.0 + float(np.linalg.norm(ws.c)))
        dobj = -float(ws.f0 @ v_vec) + (float(ws.b @ lam) if lam.size else 0.0)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))

        score = max(pres, ares, dres, gap)
        metrics = (max(pres, ares), dres, gap)
        if best is None or score < best[0]:
            best = (score, y.copy(), metrics, it)

        if not np.isfinite(score) or float(np.abs(y_s).max(initial=0.0)) > _DIVERGENCE_LIMIT * data_scale:
            status = STATUS_INFEASIBLE
            break

        if score <= tol:
            # Confirm the eigenvalue floor promised for optimal status.
            floor = min((_min_eigenvalue(m) for m in ws.split_blocks(s_vec)), default=0.0)
            if floor >= -10.0 * tol:
                status = STATUS_OPTIMAL
                best = (score, y.copy(), metrics, it)
                break

        if time_limit is not None and time.perf_counter() - started > time_limit:
            break

        # Residual balancing; the scaled dual must be rescaled with rho.
        if it % (check_every * 8) == 0 and pres > 0 and dres > 0:
            if pres > 10.0 * dres and ws.rho < 1e6:
                ws.set_rho(ws.rho * 2.0)
                u = u / 2.0
            elif dres > 10.0 * pres and ws.rho > 1e-6:
                ws.set_rho(ws.rho / 2.0)
                u = u * 2.0

    if status == STATUS_OPTIMAL or best is None:
        y_final = ws.dcol * y_s
        iterations = it
    else:
        _, y_final, metrics, iterations = best
        iterations = it

    values = problem.block_values(y_final)
    floor = min((_min_eigenvalue(m) for m in values), default=0.0)
    pres_m, dres_m, gap_m = metrics
    return SdpSolution(
        y=y_final,
        objective_value=float(problem.c @ y_final) + problem.objective_offset,
        primal_residual=pres_m,
        dual_residual=dres_m,
        gap=gap_m,
        status=status,
        iterations=iterations,
        block_eigenvalue_floor=floor,
    )


# ---------------------------------------------------------------------------
# Serialization: SDPA-style sparse text (written by npa.write_sdpa) and
# solution JSON.
# ---------------------------------------------------------------------------

def read_sdpa(path: str) -> SdpProblem:
    """Read the SDPA-style sparse text format written by ``npa.write_sdpa``.

    Layout: comment lines starting with ``*``; then num_vars, num_blocks,
    block dimensions, objective row; then ``var block i j value`` entries
    (1-based, var 0 meaning the constant matrix, upper triangle only).
    Structured ``*OFFSET`` / ``*EQUALITIES`` trailers carry the objective
    constant and ``A y = b`` rows (var 0 meaning the rhs).
    """
    with open(path) as fh:
        raw = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in raw if ln.strip()]
    pos = 0
    while lines[pos].lstrip().startswith("*"):
        pos += 1

    num_vars = int(lines[pos]); pos += 1
    num_blocks = int(lines[pos]); pos += 1
    dims = [int(tok) for tok in lines[pos].split()]; pos += 1
    if len(dims) != num_blocks:
        raise ValueError("block dimension count mismatch")
    c = np.array([float(tok) for tok in lines[pos].split()]); pos += 1
    if len(c) != num_vars:
        raise ValueError("objective length mismatch")

    f0_entries: list[list[tuple[int, int, float]]] = [[] for _ in dims]
    coeff_entries: list[list[tuple[int, int, int, float]]] = [[] for _ in dims]
    offset = 0.0
    eq_rows: list[tuple[int, int, float]] = []
    num_eq = 0
    mode = "entries"
    while pos < len(lines):
        ln = lines[pos].strip(); pos += 1
        if ln.startswith("*OFFSET"):
            offset = float(ln.split()[1])
            continue
        if ln.startswith("*EQUALITIES"):
            num_eq = int(ln.split()[1])
            mode = "equalities"
            continue
        if ln.startswith("*"):
            continue
        toks = ln.split()
        if mode == "entries":
            j, blk, r, col, v = int(toks[0]), int(toks[1]) - 1, int(toks[2]) - 1, int(toks[3]) - 1, float(toks[4])
            pairs = [(r, col)] if r == col else [(r, col), (col, r)]
            for rr, cc in pairs:
                if j == 0:
                    f0_entries[blk].append((rr, cc, v))
                else:
                    coeff_entries[blk].append((j - 1, rr, cc, v))
        else:
            i, j, v = int(toks[0]) - 1, int(toks[1]), float(toks[2])
            eq_rows.append((i, j, v))

    blocks = [SdpBlock.from_triplets(d, num_vars, f0_entries[i], coeff_entries[i])
              for i, d in enumerate(dims)]
    a_eq = None
    b_eq = None
    if num_eq:
        b_eq = np.zeros(num_eq)
        rows, cols, vals = [], [], []
        for i, j, v in eq_rows:
            if j == 0:
                b_eq[i] = v
            else:
                rows.append(i); cols.append(j - 1); vals.append(v)
        a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(num_eq, num_vars)).tocsr()
    prob = SdpProblem(num_vars=num_vars, blocks=blocks, a_eq=a_eq, b_eq=b_eq,
                      c=c, objective_offset=offset)
    prob.validate()
    return prob


def write_solution_json(solution: SdpSolution, path: str):
    with open(path, "w") as fh:
        json.dump(solution.to_dict(), fh, indent=2)
        fh.write("\n")
