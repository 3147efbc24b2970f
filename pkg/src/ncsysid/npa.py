"""Moment relaxations of non-commutative polynomial optimization problems.

Builds the order-k relaxation of an operator-valued problem

    minimize <phi, p(X) phi>   s.t.  q_i(X) PSD,  q_e(X) = 0,  |phi| = 1

as a semidefinite program over moment variables ``y_w = <phi, w(X) phi>``:
one moment matrix per variable clique (a single clique in dense mode),
one localizing matrix per inequality constraint, exact linear rows for
equality constraints, and an optional operator-norm ball enforcing the
Archimedean assumption.  Moment classes merge ``w`` with its involution
(real field), and ``y_1`` is pinned to one by substitution, so the SDP
variable ``j`` is moment class ``j + 1``.

Also provides rank-loop (flatness) detection on solved moments,
first-order-moment extraction, and an SDPA-style sparse text export.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ncpoly import IDENTITY, Polynomial, VariableSet, Word
from .sdp import SdpBlock, SdpProblem

__all__ = [
    "Ncpop",
    "MomentIndex",
    "MomentRelaxation",
    "ExtractionReport",
    "RelaxationOrderError",
    "monomial_basis",
    "build_relaxation",
    "relaxation_to_sdp",
    "check_rank_loop",
    "extract_point",
    "moments_from_assignment",
    "moments_from_scalar_point",
    "write_sdpa",
]


class RelaxationOrderError(ValueError):
    """Relaxation order too small for the degrees present in the problem."""


@dataclass
class Ncpop:
    """An operator-valued polynomial optimization problem.

    ``inequalities`` are constraints ``q(X) PSD``; ``equalities`` are
    ``q(X) = 0``.  ``ball_radius`` appends ``C^2 - sum X_i' X_i PSD`` at
    relaxation time (per clique when cliques are declared), and
    ``cliques`` opts in to correlative-sparsity mode: one moment matrix
    per clique instead of a single dense one.
    """

    variables: VariableSet
    objective: Polynomial
    inequalities: list[Polynomial] = field(default_factory=list)
    equalities: list[Polynomial] = field(default_factory=list)
    ball_radius: float | None = None
    cliques: list[tuple[int, ...]] | None = None

    def __post_init__(self):
        for p in [self.objective, *self.inequalities, *self.equalities]:
            if p.vs is not self.variables:
                raise ValueError("objective/constraints must share one variable set")
        if self.ball_radius is not None and self.ball_radius <= 0:
            raise ValueError("ball radius must be positive")

    def max_degree(self) -> int:
        degs = [self.objective.degree]
        degs += [q.degree for q in self.inequalities]
        degs += [q.degree for q in self.equalities]
        return max(degs)


def monomial_basis(vs: VariableSet, d: int, ids: tuple[int, ...] | None = None) -> list[Word]:
    """All words of degree <= d over the given ids, graded-lex, identity first."""
    if d < 0:
        raise ValueError("degree must be non-negative")
    letters = tuple(range(len(vs))) if ids is None else tuple(sorted(ids))
    basis: list[Word] = [IDENTITY]
    for deg in range(1, d + 1):
        basis.extend(Word(p) for p in itertools.product(letters, repeat=deg))
    return basis


@dataclass
class MomentIndex:
    """Moment-class dictionary: canonical words of degree <= 2k, y_1 first."""

    order: int
    class_reps: list[Word]
    index: dict[tuple[int, ...], int]
    vs: VariableSet

    def class_of(self, w: Word) -> int:
        rep = self.vs.moment_class(w)
        try:
            return self.index[rep.letters]
        except KeyError:
            raise KeyError(f"word {self.vs.render_word(w)} has no moment class "
                           "(not covered by any clique moment matrix)") from None

    @property
    def num_classes(self) -> int:
        return len(self.class_reps)


@dataclass
class MomentBlock:
    """Symbolic moment matrix for one clique: entry (r, c) is class idx[r, c]."""

    label: str
    clique: tuple[int, ...]
    basis: list[Word]
    idx: np.ndarray


@dataclass
class LocalizingBlock:
    """Symbolic localizing matrix: entry (r, c) is a linear form in classes."""

    label: str
    basis: list[Word]
    terms: list[list[dict[int, float]]]

    @property
    def dim(self) -> int:
        return len(self.basis)


@dataclass
class MomentRelaxation:
    """The order-k SDP relaxation, per-block, before LMI assembly.

    Moment classes are stored for the rescaled operators ``X / var_scale``
    (unit ball when a ball radius is set), which keeps every moment in
    [-1, 1] and the SDP well conditioned; a diagonal congruence of the
    moment matrix, so ranks and feasibility are unchanged.  Objective
    values are unaffected and :func:`extract_point` undoes the scale.
    """

    problem: Ncpop
    order: int
    moment_index: MomentIndex
    moment_blocks: list[MomentBlock]
    localizing_blocks: list[LocalizingBlock]
    equality_rows: list[dict[int, float]]
    objective_vector: np.ndarray
    flat_offset: int
    var_scale: float = 1.0

    @property
    def num_classes(self) -> int:
        return self.moment_index.num_classes

    def full_moments(self, sdp_y: np.ndarray) -> np.ndarray:
        """Prepend the pinned y_1 = 1 to an SDP solution vector."""
        return np.concatenate([[1.0], np.asarray(sdp_y, dtype=float)])

    def moment_matrix_values(self, moments: np.ndarray) -> list[np.ndarray]:
        return [moments[blk.idx] for blk in self.moment_blocks]

    def localizing_values(self, moments: np.ndarray) -> list[np.ndarray]:
        out = []
        for blk in self.localizing_blocks:
            m = np.zeros((blk.dim, blk.dim))
            for r in range(blk.dim):
                for c in range(blk.dim):
                    m[r, c] = sum(coef * moments[cls] for cls, coef in blk.terms[r][c].items())
            out.append(0.5 * (m + m.T))
        return out

    def feasibility(self, moments: np.ndarray) -> tuple[float, float]:
        """(min block eigenvalue, max |equality row|) of a moment vector."""
        floor = 0.0
        for m in self.moment_matrix_values(moments) + self.localizing_values(moments):
            floor = min(floor, float(np.linalg.eigvalsh(0.5 * (m + m.T))[0]))
        viol = 0.0
        for row in self.equality_rows:
            viol = max(viol, abs(sum(coef * moments[cls] for cls, coef in row.items())))
        if abs(moments[0] - 1.0) > 0:
            viol = max(viol, abs(moments[0] - 1.0))
        return floor, viol

    def objective_at(self, moments: np.ndarray) -> float:
        return float(self.objective_vector @ moments)


def _clique_of(support: set[int], cliques: list[tuple[int, ...]], what: str) -> int:
    for idx, cl in enumerate(cliques):
        if support <= set(cl):
            return idx
    raise ValueError(f"{what} is not contained in any clique")


def build_relaxation(problem: Ncpop, k: int, equalities_as_pairs: bool = False) -> MomentRelaxation:
    """Build the order-k moment relaxation of ``problem``.

    Requires ``2k >= deg`` for the objective and every constraint.  With
    ``equalities_as_pairs`` each equality is encoded as two opposing
    localizing constraints instead of exact linear rows.
    """
    if k < 1:
        raise RelaxationOrderError("relaxation order must be >= 1")
    vs = problem.variables
    for p in [problem.objective, *problem.inequalities, *problem.equalities]:
        if p.degree > 2 * k:
            raise RelaxationOrderError(
                f"order {k} too small: polynomial {p} has degree {p.degree} > {2 * k}")

    # Rescale operators to the unit ball: substituting X = sigma * X'
    # multiplies each coefficient by sigma^degree.
    sigma = float(problem.ball_radius) if problem.ball_radius is not None else 1.0

    def rescaled(p: Polynomial) -> Polynomial:
        if sigma == 1.0:
            return p
        return Polynomial(vs, {w: c * sigma ** w.degree for w, c in p.terms.items()})

    objective = rescaled(problem.objective)
    inequalities = [rescaled(q) for q in problem.inequalities]
    equalities = [rescaled(q) for q in problem.equalities]
    if equalities_as_pairs:
        for q in equalities:
            inequalities.append(q)
            inequalities.append(-q)
        equalities = []

    if problem.cliques is None:
        cliques = [tuple(range(len(vs)))]
    else:
        cliques = [tuple(sorted(set(cl))) for cl in problem.cliques]
        covered = set().union(*map(set, cliques)) if cliques else set()
        if covered != set(range(len(vs))):
            raise ValueError("cliques do not cover every variable")

    def support(p: Polynomial) -> set[int]:
        return {i for w in p.terms for i in w.letters}

    # Host clique per constraint; the ball constraint (unit radius after
    # rescaling) is added per clique.
    ineq_host = [ _clique_of(support(q), cliques, f"inequality {q}") for q in inequalities ]
    if problem.ball_radius is not None:
        for ci, cl in enumerate(cliques):
            ball = vs.one()
            for i in cl:
                adj = vs.variables[i].adjoint_id
                ball = ball - Polynomial(vs, {Word((adj, i)): 1.0})
            inequalities.append(ball)
            ineq_host.append(ci)
    eq_host = [ _clique_of(support(q), cliques, f"equality {q}") for q in equalities ]
    for w in objective.terms:
        _clique_of(set(w.letters), cliques, f"objective term {vs.render_word(w)}")

    bases = [monomial_basis(vs, k, cl) for cl in cliques]

    # Pass 1: enumerate moment classes from the clique moment matrices.
    reps: set[tuple[int, ...]] = set()
    for basis in bases:
        invs = [vs.involution(w) for w in basis]
        for nu in invs:
            for om in basis:
                reps.add(vs.moment_class(nu * om).letters)
    class_reps = sorted(reps, key=lambda ls: (len(ls), ls))
    if class_reps[0] != ():
        raise AssertionError("identity class missing")
    index = {ls: i for i, ls in enumerate(class_reps)}
    midx = MomentIndex(order=k, class_reps=[Word(ls) for ls in class_reps], index=index, vs=vs)

    # Pass 2: symbolic blocks.
    moment_blocks = []
    for ci, (cl, basis) in enumerate(zip(cliques, bases)):
        invs = [vs.involution(w) for w in basis]
        n = len(basis)
        idx = np.empty((n, n), dtype=np.int64)
        for r, nu in enumerate(invs):
            for c, om in enumerate(basis):
                idx[r, c] = midx.class_of(nu * om)
        moment_blocks.append(MomentBlock(label=f"moment[{ci}]", clique=cl, basis=basis, idx=idx))

    def localize(q: Polynomial, basis: list[Word]) -> list[list[dict[int, float]]]:
        invs = [vs.involution(w) for w in basis]
        terms: list[list[dict[int, float]]] = []
        for nu in invs:
            row = []
            for om in basis:
                entry: dict[int, float] = {}
                for mu, coef in q.terms.items():
                    cls = midx.class_of(nu * mu * om)
                    entry[cls] = entry.get(cls, 0.0) + coef
                row.append(entry)
            terms.append(row)
        return terms

    localizing_blocks = []
    d_values = [1]
    for qi, (q, host) in enumerate(zip(inequalities, ineq_host)):
        d = max(1, -(-q.degree // 2))
        d_values.append(d)
        sub = monomial_basis(vs, k - d, cliques[host])
        localizing_blocks.append(
            LocalizingBlock(label=f"loc[{qi}]", basis=sub, terms=localize(q, sub)))

    equality_rows: list[dict[int, float]] = []
    seen: set[tuple] = set()
    for q, host in zip(equalities, eq_host):
        d = max(1, -(-q.degree // 2))
        d_values.append(d)
        sub = monomial_basis(vs, k - d, cliques[host])
        for terms_row in localize(q, sub):
            for entry in terms_row:
                key = tuple(sorted((cls, round(coef, 9)) for cls, coef in entry.items()))
                if key in seen or not entry:
                    continue
                seen.add(key)
                equality_rows.append(entry)

    objective_vector = np.zeros(midx.num_classes)
    for w, coef in objective.terms.items():
        objective_vector[midx.class_of(w)] += coef

    return MomentRelaxation(
        problem=problem,
        order=k,
        moment_index=midx,
        moment_blocks=moment_blocks,
        localizing_blocks=localizing_blocks,
        equality_rows=equality_rows,
        objective_vector=objective_vector,
        flat_offset=max(d_values),
        var_scale=sigma,
    )


def relaxation_to_sdp(rel: MomentRelaxation) -> SdpProblem:
    """Assemble the relaxation as a block LMI with exact equality rows.

    Moment class 0 (``y_1``) is substituted by 1, so SDP variable ``j``
    carries moment class ``j + 1``; constants land in ``F0``, the
    equality rhs, and the objective offset.
    """
    n = rel.num_classes - 1
    blocks: list[SdpBlock] = []
    labels: list[str] = []

    def push(dim: int, entries: list[tuple[int, int, int, float]], label: str):
        f0e, ce = [], []
        for cls, r, c, v in entries:
            halves = [(r, c, 0.5 * v), (c, r, 0.5 * v)] if r != c else [(r, c, v)]
            for rr, cc, vv in halves:
                if cls == 0:
                    f0e.append((rr, cc, vv))
                else:
                    ce.append((cls - 1, rr, cc, vv))
        blocks.append(SdpBlock.from_triplets(dim, n, f0e, ce))
        labels.append(label)

    for blk in rel.moment_blocks:
        dim = len(blk.basis)
        entries = [(int(blk.idx[r, c]), r, c, 1.0) for r in range(dim) for c in range(dim)]
        push(dim, entries, blk.label)

    for loc in rel.localizing_blocks:
        entries = []
        for r in range(loc.dim):
            for c in range(loc.dim):
                entries.extend((cls, r, c, v) for cls, v in loc.terms[r][c].items())
        push(loc.dim, entries, loc.label)

    a_eq = None
    b_eq = None
    if rel.equality_rows:
        rows, cols, vals = [], [], []
        b = np.zeros(len(rel.equality_rows))
        for i, row in enumerate(rel.equality_rows):
            for cls, v in row.items():
                if cls == 0:
                    b[i] -= v
                else:
                    rows.append(i); cols.append(cls - 1); vals.append(v)
        a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(len(rel.equality_rows), n)).tocsr()
        b_eq = b

    prob = SdpProblem(
        num_vars=n,
        blocks=blocks,
        a_eq=a_eq,
        b_eq=b_eq,
        c=np.asarray(rel.objective_vector[1:], dtype=float),
        objective_offset=float(rel.objective_vector[0]),
        block_labels=labels,
    )
    prob.validate()
    return prob


@dataclass
class ExtractionReport:
    """Rank-loop verdict and scalar estimates pulled from solved moments."""

    flat: bool
    rank_Mk: int
    rank_Mk_minus_d: int
    singular_value_gap: float
    first_order_moments: dict[int, float]
    certified_lower_bound: float

    def labelled_moments(self, vs: VariableSet) -> dict[str, float]:
        return {vs.label(i): v for i, v in self.first_order_moments.items()}


def _rank_and_gap(m: np.ndarray, tol: float) -> tuple[int, float]:
    if m.size == 0:
        return 0, np.inf
    s = np.linalg.svd(0.5 * (m + m.T), compute_uv=False)
    smax = s[0] if len(s) else 0.0
    if smax <= 0.0:
        return 0, np.inf
    rank = int(np.sum(s > tol * smax))
    if rank == 0 or rank == len(s):
        return rank, np.inf
    return rank, float(s[rank - 1] / s[rank])


def check_rank_loop(moments: np.ndarray, rel: MomentRelaxation, tol: float = 1e-6) -> ExtractionReport:
    """Evaluate the rank-loop (flatness) condition on solved moments.

    ``moments`` is the full class-indexed vector (``rel.full_moments``).
    Ranks are singular values thresholded at ``tol * sigma_max``, summed
    across clique blocks; ``M_{k-d}`` is the principal submatrix on words
    of degree <= k - d with d the largest constraint half-degree.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    moments = np.asarray(moments, dtype=float)
    k = rel.order
    d = rel.flat_offset
    rank_full = 0
    rank_sub = 0
    flat = True
    gap = np.inf
    for blk in rel.moment_blocks:
        m = moments[blk.idx]
        nsub = sum(1 for w in blk.basis if w.degree <= k - d)
        r_full, g_full = _rank_and_gap(m, tol)
        r_sub, g_sub = _rank_and_gap(m[:nsub, :nsub], tol)
        rank_full += r_full
        rank_sub += r_sub
        flat = flat and (r_full == r_sub)
        gap = min(gap, g_full, g_sub)
    return ExtractionReport(
        flat=flat,
        rank_Mk=rank_full,
        rank_Mk_minus_d=rank_sub,
        singular_value_gap=gap,
        first_order_moments=extract_point(moments, rel),
        certified_lower_bound=rel.objective_at(moments),
    )


def extract_point(moments: np.ndarray, rel: MomentRelaxation) -> dict[int, float]:
    """First-order moments ``y_{X_i}`` as scalar estimates per variable.

    Exact for rank-one (flat) moment matrices; a heuristic otherwise,
    which callers should flag via the extraction report.
    """
    midx = rel.moment_index
    return {i: rel.var_scale * float(moments[midx.class_of(Word((i,)))])
            for i in range(len(rel.problem.variables))}


def moments_from_assignment(rel: MomentRelaxation, assignment: dict[int, np.ndarray],
                            phi: np.ndarray) -> np.ndarray:
    """Moment vector induced by an explicit operator assignment (test oracle)."""
    vs = rel.problem.variables
    phi = np.asarray(phi, dtype=float)
    d = phi.shape[0]
    mats: dict[int, np.ndarray] = {}
    for i, v in enumerate(vs.variables):
        if i in assignment:
            mats[i] = np.asarray(assignment[i], dtype=float) / rel.var_scale
        else:
            mats[i] = np.asarray(assignment[v.adjoint_id], dtype=float).T / rel.var_scale
        if mats[i].shape != (d, d):
            raise ValueError("assignment dimension mismatch")
    out = np.empty(rel.num_classes)
    for cls, rep in enumerate(rel.moment_index.class_reps):
        vec = phi
        for i in reversed(rep.letters):
            vec = mats[i] @ vec
        out[cls] = float(phi @ vec)
    return out


def moments_from_scalar_point(rel: MomentRelaxation, values: dict[int, float]) -> np.ndarray:
    """Moment vector of a scalar (1x1 operator) point."""
    out = np.empty(rel.num_classes)
    for cls, rep in enumerate(rel.moment_index.class_reps):
        acc = 1.0
        for i in rep.letters:
            acc *= values[i] / rel.var_scale
        out[cls] = acc
    return out


def write_sdpa(problem: SdpProblem, path: str):
    """Write an assembled SDP in SDPA-style sparse text.

    Convention: minimize ``c.y`` with ``F0 + sum_j y_j Fj`` PSD per block;
    entries are ``var block i j value`` with var 0 the constant matrix and
    1-based upper-triangle indices.  Equality rows and the objective
    offset follow as ``*``-prefixed trailers (comments to stock SDPA
    readers); ``sdp.read_sdpa`` round-trips the file exactly.
    """
    problem.validate()
    lines = ["* SDPA-style sparse block LMI export"]
    lines.append(str(problem.num_vars))
    lines.append(str(len(problem.blocks)))
    lines.append(" ".join(str(b.dim) for b in problem.blocks))
    lines.append(" ".join(repr(float(v)) for v in problem.c))
    for bi, blk in enumerate(problem.blocks, start=1):
        for r, c in zip(*np.nonzero(blk.f0)):
            if r <= c:
                lines.append(f"0 {bi} {r + 1} {c + 1} {float(blk.f0[r, c])!r}")
        coo = blk.coeff.tocoo()
        order = np.lexsort((coo.row, coo.col))
        for t in order:
            j = int(coo.col[t]); rc = int(coo.row[t]); v = float(coo.data[t])
            r, c = divmod(rc, blk.dim)
            if r <= c:
                lines.append(f"{j + 1} {bi} {r + 1} {c + 1} {v!r}")
    if problem.objective_offset:
        lines.append(f"*OFFSET {float(problem.objective_offset)!r}")
    if problem.a_eq is not None and problem.a_eq.shape[0]:
        m = problem.a_eq.shape[0]
        lines.append(f"*EQUALITIES {m}")
        coo = problem.a_eq.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for t in order:
            lines.append(f"{int(coo.row[t]) + 1} {int(coo.col[t]) + 1} {float(coo.data[t])!r}")
        for i, v in enumerate(problem.b_eq):
            if v != 0.0:
                lines.append(f"{i + 1} 0 {float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
