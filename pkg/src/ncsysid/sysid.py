"""Identification formulations over operator variables, and the full pipeline.

The solved route models the state evolution with explicit noise
variables: minimize

    sum_t (Y_t - f_t)^2 + c1 sum_t w_t^2 + c2 sum_t v_t^2

subject to ``m_t = G m_{t-1} + w_t`` and ``f_t = F m_t + v_t`` over
Hermitian operator variables {G, F, m_0..m_T, f_1..f_T, w_1..w_T,
v_1..v_T}; every polynomial has degree <= 2 so the relaxation hierarchy
starts at order 1.  Two alternative formulations that unroll the filter
recursions (time-varying and steady-state) are built symbolically for
degree audits but not solved here.

Because the operator variables are dimension-free, the estimates are
scalar operators plus the forecast sequence; reconstructing an n-by-n
transition matrix from them is not attempted.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import npa, sdp
from .lds import nrmse
from .ncpoly import Polynomial, VariableSet

__all__ = [
    "LsFormulationConfig",
    "NoiseExplicitLayout",
    "IdentificationResult",
    "ArBaselineResult",
    "build_noise_explicit",
    "build_general_formulation",
    "build_convergence_formulation",
    "identify",
    "ar_ols_baseline",
    "ground_truth_point",
    "plug_in_objective",
]

EQUALITY_MODES = ("exact_rows", "inequality_pairs")
SPARSITY_MODES = ("dense", "cliques")


@dataclass
class LsFormulationConfig:
    """Knobs of the least-squares identification formulation.

    ``c1``/``c2`` default to ``10 * var(Y)`` over the window; the ball
    radius defaults to ``5 * max(1, max|Y_t|)`` whenever Archimedean
    enforcement is on (it is by default; the hierarchy's convergence
    guarantee needs a norm bound, and an unbounded SDP may be unattained).
    """

    T: int
    c1: float | None = None
    c2: float | None = None
    order: int = 1
    ball_radius: float | None = None
    archimedean: bool = True
    equality_mode: str = "exact_rows"
    sparsity: str = "dense"

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("window length T must be >= 2")
        if self.order < 1:
            raise ValueError("relaxation order must be >= 1")
        for val, name in ((self.c1, "c1"), (self.c2, "c2")):
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive")
        if self.equality_mode not in EQUALITY_MODES:
            raise ValueError(f"equality_mode must be one of {EQUALITY_MODES}")
        if self.sparsity not in SPARSITY_MODES:
            raise ValueError(f"sparsity must be one of {SPARSITY_MODES}")

    def resolve_penalties(self, y: np.ndarray) -> tuple[float, float]:
        default = 10.0 * float(np.var(y))
        if default <= 0.0:
            default = 1.0
        return (self.c1 if self.c1 is not None else default,
                self.c2 if self.c2 is not None else default)

    def resolve_ball(self, y: np.ndarray) -> float | None:
        if not self.archimedean and self.ball_radius is None:
            return None
        if self.ball_radius is not None:
            return self.ball_radius
        return 5.0 * max(1.0, float(np.max(np.abs(y))))


@dataclass(frozen=True)
class NoiseExplicitLayout:
    """Variable ids of the noise-explicit formulation for window length T."""

    T: int

    @property
    def G(self) -> int:
        return 0

    @property
    def F(self) -> int:
        return 1

    def m(self, t: int) -> int:
        if not 0 <= t <= self.T:
            raise IndexError(f"m_{t} out of range")
        return 2 + t

    def f(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise IndexError(f"f_{t} out of range")
        return 2 + self.T + t

    def w(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise IndexError(f"w_{t} out of range")
        return 2 + 2 * self.T + t

    def v(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise IndexError(f"v_{t} out of range")
        return 2 + 3 * self.T + t

    @property
    def num_vars(self) -> int:
        return 4 * self.T + 3

    def labels(self) -> list[str]:
        T = self.T
        return (["G", "F"] + [f"m{t}" for t in range(T + 1)]
                + [f"f{t}" for t in range(1, T + 1)]
                + [f"w{t}" for t in range(1, T + 1)]
                + [f"v{t}" for t in range(1, T + 1)])

    def clique(self, t: int) -> tuple[int, ...]:
        """Temporal clique {G, F, m_{t-1}, m_t, f_t, w_t, v_t}; successive
        cliques intersect in {G, F, m_t}, giving the running-intersection
        property."""
        return tuple(sorted((self.G, self.F, self.m(t - 1), self.m(t),
                             self.f(t), self.w(t), self.v(t))))


def _window(y, T: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < T:
        raise ValueError(f"window too short: need {T} observations, got {len(y)}")
    return y[:T]


def build_noise_explicit(y, cfg: LsFormulationConfig) -> npa.Ncpop:
    """Least-squares identification problem with explicit noise variables.

    Observations enter as constants; all polynomials have degree <= 2
    (the forecasts stay explicit variables rather than being substituted
    by ``F m_t + v_t``, which would push the objective to degree 4), so
    order 1 is always admissible.
    """
    yw = _window(y, cfg.T)
    c1, c2 = cfg.resolve_penalties(yw)
    lay = NoiseExplicitLayout(cfg.T)
    vs = VariableSet.hermitian(lay.labels())

    G, F = vs.symbol(lay.G), vs.symbol(lay.F)
    m = [vs.symbol(lay.m(t)) for t in range(cfg.T + 1)]
    f = {t: vs.symbol(lay.f(t)) for t in range(1, cfg.T + 1)}
    w = {t: vs.symbol(lay.w(t)) for t in range(1, cfg.T + 1)}
    v = {t: vs.symbol(lay.v(t)) for t in range(1, cfg.T + 1)}

    objective = Polynomial(vs)
    for t in range(1, cfg.T + 1):
        resid = float(yw[t - 1]) - f[t]
        objective = objective + resid * resid + c1 * (w[t] * w[t]) + c2 * (v[t] * v[t])

    state_eqs = [m[t] - G * m[t - 1] - w[t] for t in range(1, cfg.T + 1)]
    obs_eqs = [f[t] - F * m[t] - v[t] for t in range(1, cfg.T + 1)]
    equalities: list[Polynomial] = []
    inequalities: list[Polynomial] = []
    if cfg.equality_mode == "inequality_pairs":
        for q in state_eqs + obs_eqs:
            inequalities.append(q)
            inequalities.append(-q)
    else:
        equalities = state_eqs + obs_eqs

    cliques = [lay.clique(t) for t in range(1, cfg.T + 1)] if cfg.sparsity == "cliques" else None
    return npa.Ncpop(
        variables=vs,
        objective=objective,
        inequalities=inequalities,
        equalities=equalities,
        ball_radius=cfg.resolve_ball(yw),
        cliques=cliques,
    )


# ---------------------------------------------------------------------------
# Alternative formulations (built for degree audits, not solved).
# ---------------------------------------------------------------------------

def build_general_formulation(y, s: int, cfg: LsFormulationConfig) -> npa.Ncpop:
    """Formulation that unrolls the filter recursions with time-varying
    auxiliaries R_t, Q_t, A_t, Z_t, X_t, C_t; the inverse of Q_t enters
    through the constraint ``X_t Q_t = I``.  The unrolled forecast carries
    a product of s consecutive Z factors, so the degree grows linearly in
    s; operators are modeled self-adjoint as in the solved route.
    """
    if s < 1:
        raise ValueError("auto-regressive depth s must be >= 1")
    return _recursive_formulation(y, s, cfg, time_invariant=False)


def build_convergence_formulation(y, s: int, cfg: LsFormulationConfig) -> npa.Ncpop:
    """Steady-state variant: after the filter warm-up the auxiliaries
    converge, so single variables R, A, Z, X, C replace the per-step
    ones and the variable count no longer grows with T.
    """
    if s < 0:
        raise ValueError("auto-regressive depth s must be >= 0")
    return _recursive_formulation(y, s, cfg, time_invariant=True)


def _recursive_formulation(y, s: int, cfg: LsFormulationConfig, time_invariant: bool) -> npa.Ncpop:
    T = cfg.T
    if T < s + 2:
        raise ValueError(f"window too short: need T >= s + 2 = {s + 2}")
    yw = _window(y, T)

    labels = ["G", "F", "W", "v"]
    if time_invariant:
        labels += ["R", "A", "Z", "X", "C"]
    else:
        labels += [f"C{t}" for t in range(T + 1)]
        for name in ("R", "Q", "A", "Z", "X"):
            labels += [f"{name}{t}" for t in range(1, T + 1)]
    f_ids = {t: len(labels) + i for i, t in enumerate(range(s + 2, T + 1))}
    labels += [f"f{t}" for t in range(s + 2, T + 1)]
    vs = VariableSet.hermitian(labels)

    def sym(name: str) -> Polynomial:
        return vs.symbol(labels.index(name))

    G, F, W, v = sym("G"), sym("F"), sym("W"), sym("v")
    one = vs.one()
    f = {t: vs.symbol(f_ids[t]) for t in range(s + 2, T + 1)}

    equalities: list[Polynomial] = []
    if time_invariant:
        R, A, Z, X, C = sym("R"), sym("A"), sym("Z"), sym("X"), sym("C")
        equalities += [
            R - G * C * G - W,
            C - R + A * F * R,
            A - R * F * X,
            X * (F * R * F + v) - one,
            Z - G * (one - A * F),
        ]

        def forecast(t: int) -> Polynomial:
            expr = F * G * A * float(yw[t - 1])
            zpow = one
            for j in range(s):
                zpow = zpow * Z
                expr = expr + F * zpow * G * A * float(yw[t - j - 2])
            return expr
    else:
        R = {t: sym(f"R{t}") for t in range(1, T + 1)}
        Q = {t: sym(f"Q{t}") for t in range(1, T + 1)}
        A = {t: sym(f"A{t}") for t in range(1, T + 1)}
        Z = {t: sym(f"Z{t}") for t in range(1, T + 1)}
        X = {t: sym(f"X{t}") for t in range(1, T + 1)}
        C = {t: sym(f"C{t}") for t in range(T + 1)}
        for t in range(1, T + 1):
            equalities += [
                R[t] - G * C[t - 1] * G - W,
                Q[t] - F * R[t] * F - v,
                A[t] - R[t] * F * X[t],
                X[t] * Q[t] - one,
                C[t] - R[t] + A[t] * Q[t] * A[t],
                Z[t] - G * (one - A[t] * F),
            ]

        def forecast(t: int) -> Polynomial:
            expr = F * G * A[t - 1] * float(yw[t - 2])
            zprod = one
            for j in range(s):
                zprod = zprod * Z[t - 1 - j]
                expr = expr + F * zprod * G * A[t - j - 2] * float(yw[t - j - 3])
            return expr

    objective = Polynomial(vs)
    for t in range(s + 2, T + 1):
        equalities.append(f[t] - forecast(t))
        resid = float(yw[t - 1]) - f[t]
        objective = objective + resid * resid

    return npa.Ncpop(variables=vs, objective=objective, equalities=equalities,
                     ball_radius=cfg.ball_radius)


# ---------------------------------------------------------------------------
# Pipeline.
# ---------------------------------------------------------------------------

@dataclass
class IdentificationResult:
    """Estimates extracted from the solved relaxation, with diagnostics."""

    G_hat: float
    F_hat: float
    m_hat: np.ndarray          # length T + 1, including the initial state
    forecasts: np.ndarray      # f_hat_1..f_hat_T
    w_hat: np.ndarray
    v_hat: np.ndarray
    lower_bound: float
    extraction: npa.ExtractionReport
    nrmse_fit: float
    wall_time: float
    solver_status: str
    solver_iterations: int

    def to_dict(self) -> dict:
        return {
            "G_hat": self.G_hat,
            "F_hat": self.F_hat,
            "m_hat": [float(x) for x in self.m_hat],
            "forecasts": [float(x) for x in self.forecasts],
            "w_hat": [float(x) for x in self.w_hat],
            "v_hat": [float(x) for x in self.v_hat],
            "lower_bound": self.lower_bound,
            "flat": self.extraction.flat,
            "rank_Mk": self.extraction.rank_Mk,
            "rank_Mk_minus_d": self.extraction.rank_Mk_minus_d,
            "nrmse_fit": self.nrmse_fit,
            "wall_time": self.wall_time,
            "solver_status": self.solver_status,
            "solver_iterations": self.solver_iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def identify(y, cfg: LsFormulationConfig, tol: float = 1e-6, max_iter: int = 200000,
             rank_tol: float = 1e-6, time_limit: float | None = None) -> IdentificationResult:
    """Full pipeline: formulation, order-k relaxation, SDP solve, extraction.

    A non-flat moment matrix does not fail the run; the heuristic
    first-order-moment estimates are returned with ``extraction.flat``
    false.  Solver trouble surfaces through ``solver_status``.
    """
    start = time.perf_counter()
    yw = _window(y, cfg.T)
    problem = build_noise_explicit(yw, cfg)
    rel = npa.build_relaxation(problem, cfg.order)
    sdp_problem = npa.relaxation_to_sdp(rel)
    sol = sdp.solve(sdp_problem, tol=tol, max_iter=max_iter, time_limit=time_limit)
    moments = rel.full_moments(sol.y)
    report = npa.check_rank_loop(moments, rel, tol=rank_tol)
    report.certified_lower_bound = sol.objective_value

    lay = NoiseExplicitLayout(cfg.T)
    fm = report.first_order_moments
    forecasts = np.array([fm[lay.f(t)] for t in range(1, cfg.T + 1)])
    result = IdentificationResult(
        G_hat=fm[lay.G],
        F_hat=fm[lay.F],
        m_hat=np.array([fm[lay.m(t)] for t in range(cfg.T + 1)]),
        forecasts=forecasts,
        w_hat=np.array([fm[lay.w(t)] for t in range(1, cfg.T + 1)]),
        v_hat=np.array([fm[lay.v(t)] for t in range(1, cfg.T + 1)]),
        lower_bound=sol.objective_value,
        extraction=report,
        nrmse_fit=nrmse(yw, forecasts),
        wall_time=time.perf_counter() - start,
        solver_status=sol.status,
        solver_iterations=sol.iterations,
    )
    return result


@dataclass
class ArBaselineResult:
    """AR(s) least-squares fit with in-sample one-step forecasts."""

    coefficients: np.ndarray
    forecasts: np.ndarray
    ridge_fallback: bool = False


def ar_ols_baseline(y, s: int) -> ArBaselineResult:
    """Fit Y_t on its previous s values by ordinary least squares.

    ``s = 0`` degenerates to the constant-mean predictor (nrmse 0 by
    construction).  A rank-deficient regressor matrix falls back to a
    tiny ridge (lambda = 1e-8) and flags it.  The first s forecast slots,
    where no prediction exists, hold the series mean.
    """
    y = np.asarray(y, dtype=float).ravel()
    if len(y) <= s + 1:
        raise ValueError(f"need more than s + 1 = {s + 1} observations")
    if s == 0:
        return ArBaselineResult(coefficients=np.zeros(0),
                                forecasts=np.full(len(y), y.mean()))
    rows = len(y) - s
    design = np.empty((rows, s))
    for lag in range(1, s + 1):
        design[:, lag - 1] = y[s - lag:len(y) - lag]
    target = y[s:]
    gram = design.T @ design
    ridge = np.linalg.matrix_rank(design) < s
    if ridge:
        gram = gram + 1e-8 * np.eye(s)
    coeff = np.linalg.solve(gram, design.T @ target)
    forecasts = np.full(len(y), y.mean())
    forecasts[s:] = design @ coeff
    return ArBaselineResult(coefficients=coeff, forecasts=forecasts, ridge_fallback=ridge)


# ---------------------------------------------------------------------------
# Audit helpers (oracles for the lower-bound and scaling properties).
# ---------------------------------------------------------------------------

def ground_truth_point(traj, G: float, F: float, T: int) -> dict[int, float]:
    """Scalar plug-in assignment from a simulated 1-d trajectory.

    Sets m_t to the true states and derives the noise realizations, so
    the state and observation equalities hold exactly and the squared
    loss vanishes (f_t = Y_t).
    """
    if traj.states is None or traj.initial_state is None:
        raise ValueError("trajectory must carry simulated states")
    if traj.states.shape[1] != 1:
        raise ValueError("plug-in point requires a scalar hidden state")
    lay = NoiseExplicitLayout(T)
    m = np.concatenate([traj.initial_state, traj.states[:T, 0]])
    yv = traj.scalar[:T]
    values = {lay.G: float(G), lay.F: float(F)}
    for t in range(T + 1):
        values[lay.m(t)] = float(m[t])
    for t in range(1, T + 1):
        values[lay.w(t)] = float(m[t] - G * m[t - 1])
        values[lay.v(t)] = float(yv[t - 1] - F * m[t])
        values[lay.f(t)] = float(yv[t - 1])
    return values


def plug_in_objective(y, cfg: LsFormulationConfig, values: dict[int, float]) -> float:
    """Objective of the noise-explicit formulation at a scalar point."""
    problem = build_noise_explicit(y, cfg)
    return problem.objective.evaluate_scalar(values)


def point_norm(values: dict[int, float]) -> float:
    """Euclidean norm of a scalar assignment (ball-feasibility checks)."""
    return float(np.sqrt(sum(x * x for x in values.values())))
