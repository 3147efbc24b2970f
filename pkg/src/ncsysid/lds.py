"""Linear dynamical system model, simulator, Kalman filter, and fit metric.

The model is the hidden-state Gaussian state-space system

    phi_t = G phi_{t-1} + w_t,      w_t ~ N(0, W)
    Y_t   = F' phi_t   + v_t,       v_t ~ N(0, v)

with prior ``phi_0 ~ N(m0, C0)``.  Observations are m-dimensional (m = 1
throughout the identification pipeline).  Simulation uses a counter-based
(Philox) generator so a seed pins the trajectory across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LdsModel",
    "Trajectory",
    "KalmanState",
    "SingularInnovationError",
    "simulate",
    "observability_matrix",
    "kalman_filter",
    "nrmse",
    "hazan_model",
]

_PSD_TOL = 1e-10


class SingularInnovationError(RuntimeError):
    """Innovation covariance Q_t is numerically singular at some step."""

    def __init__(self, step: int, condition: float):
        super().__init__(f"innovation covariance singular at step {step} (cond ~ {condition:.3e})")
        self.step = step


def _check_psd(m: np.ndarray, name: str):
    if not np.allclose(m, m.T, atol=_PSD_TOL):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (m + m.T))[0] < -_PSD_TOL:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass
class LdsModel:
    """System matrices (G, F, W, v) with state prior (m0, C0); F has n rows."""

    G: np.ndarray
    F: np.ndarray
    W: np.ndarray
    v: np.ndarray
    m0: np.ndarray
    C0: np.ndarray

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        self.C0 = np.atleast_2d(np.asarray(self.C0, dtype=float))
        n = self.G.shape[0]
        if self.F.shape[0] != n and self.F.shape == (1, n):
            # Accept a row-vector F' for scalar observations.
            self.F = self.F.T
        m = self.F.shape[1]
        if self.G.shape != (n, n) or self.F.shape != (n, m):
            raise ValueError("inconsistent G/F dimensions")
        if self.W.shape != (n, n) or self.v.shape != (m, m):
            raise ValueError("inconsistent noise covariance dimensions")
        if self.m0.shape != (n,) or self.C0.shape != (n, n):
            raise ValueError("inconsistent prior dimensions")
        _check_psd(self.W, "W")
        _check_psd(self.v, "v")
        _check_psd(self.C0, "C0")

    @property
    def state_dim(self) -> int:
        return self.G.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.F.shape[1]

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k).tolist()
                           for k in ("G", "F", "W", "v", "m0", "C0")}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LdsModel":
        d = json.loads(text)
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("G", "F", "W", "v", "m0", "C0")})


def hazan_model(std_w: float = 0.0, std_v: float = 0.0) -> LdsModel:
    """The 2-dimensional reference system used throughout the experiments."""
    n = 2
    return LdsModel(
        G=np.array([[0.99, 0.0], [1.0, 0.2]]),
        F=np.array([[1.0], [0.8]]),
        W=(std_w ** 2) * np.eye(n),
        v=np.array([[std_v ** 2]]),
        m0=np.array([1.0, 1.0]),
        C0=np.zeros((n, n)),
    )


@dataclass
class Trajectory:
    """Observed series Y_1..Y_T, optionally with the simulated states phi_1..phi_T."""

    observations: np.ndarray          # (T, m)
    states: np.ndarray | None = None  # (T, n)
    seed: int = 0
    initial_state: np.ndarray | None = None  # phi_0, kept for plug-in audits

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.observations.shape[0] == 1 and self.observations.shape[1] > 1:
            self.observations = self.observations.T
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=float)
            if self.states.shape[0] != self.observations.shape[0]:
                raise ValueError("states and observations lengths differ")
        if len(self.observations) < 1:
            raise ValueError("trajectory must contain at least one step")

    @property
    def scalar(self) -> np.ndarray:
        """The series as a flat vector (scalar observations)."""
        return self.observations[:, 0]

    def save_csv(self, path: str):
        with open(path, "w") as fh:
            fh.write("t,y\n")
            for t, y in enumerate(self.scalar, start=1):
                fh.write(f"{t},{float(y)!r}\n")

    @classmethod
    def load_csv(cls, path: str) -> "Trajectory":
        ys = []
        with open(path) as fh:
            header = fh.readline()
            if header.strip().lower().replace(" ", "") != "t,y":
                raise ValueError(f"{path}:1: expected header 't,y'")
            for ln_no, ln in enumerate(fh, start=2):
                if not ln.strip():
                    continue
                parts = ln.strip().split(",")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{ln_no}: expected 't,y' row")
                try:
                    ys.append(float(parts[1]))
                except ValueError:
                    raise ValueError(f"{path}:{ln_no}: malformed value {parts[1]!r}") from None
        return cls(observations=np.array(ys).reshape(-1, 1))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def simulate(model: LdsModel, T: int, seed: int = 0) -> Trajectory:
    """Draw a length-T trajectory; identical seeds give identical output."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    n, m = model.state_dim, model.obs_dim
    s_c0 = _psd_sqrt(model.C0)
    s_w = _psd_sqrt(model.W)
    s_v = _psd_sqrt(model.v)
    phi0 = model.m0 + s_c0 @ rng.standard_normal(n)
    phi = phi0
    states = np.empty((T, n))
    obs = np.empty((T, m))
    for t in range(T):
        phi = model.G @ phi + s_w @ rng.standard_normal(n)
        obs[t] = model.F.T @ phi + s_v @ rng.standard_normal(m)
        states[t] = phi
    return Trajectory(observations=obs, states=states, seed=seed, initial_state=phi0)


def observability_matrix(model: LdsModel, tol: float = 1e-8) -> tuple[np.ndarray, bool]:
    """Stack F', F'G, ..., F'G^(n-1); full numerical rank means observable."""
    n = model.state_dim
    rows = []
    power = np.eye(n)
    for _ in range(n):
        rows.append(model.F.T @ power)
        power = power @ model.G
    obs = np.vstack(rows)
    svals = np.linalg.svd(obs, compute_uv=False)
    rank = int(np.sum(svals > tol * max(1.0, svals[0]))) if svals.size else 0
    return obs, rank == n


@dataclass
class KalmanState:
    """Per-step filter quantities; index t of each array is step t+1 of the data."""

    a: np.ndarray   # (T, n)   predicted state mean
    R: np.ndarray   # (T, n, n) predicted state covariance
    f: np.ndarray   # (T, m)   one-step observation forecast
    Q: np.ndarray   # (T, m, m) forecast variance
    A: np.ndarray   # (T, n, m) gain
    m: np.ndarray   # (T, n)   filtered state mean
    C: np.ndarray   # (T, n, n) filtered state covariance


def kalman_filter(model: LdsModel, Y: np.ndarray) -> KalmanState:
    """Run the exact filter recursions over observations Y_1..Y_T.

    Update step: a_t = G m_{t-1}, R_t = G C_{t-1} G' + W, Q_t = F'R_tF + v,
    A_t = R_t F Q_t^{-1}.  Prediction step: f_t = F'a_t,
    m_t = a_t + A_t (Y_t - f_t), C_t = (I - A_t F') R_t.
    Raises :class:`SingularInnovationError` when Q_t is not invertible.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] == 1 and Y.shape[1] > 1:
        Y = Y.T
    T = Y.shape[0]
    n, mdim = model.state_dim, model.obs_dim
    out = KalmanState(
        a=np.empty((T, n)), R=np.empty((T, n, n)), f=np.empty((T, mdim)),
        Q=np.empty((T, mdim, mdim)), A=np.empty((T, n, mdim)),
        m=np.empty((T, n)), C=np.empty((T, n, n)))
    m_prev = model.m0.copy()
    c_prev = model.C0.copy()
    eye = np.eye(n)
    for t in range(T):
        a = model.G @ m_prev
        r = model.G @ c_prev @ model.G.T + model.W
        r = 0.5 * (r + r.T)
        q = model.F.T @ r @ model.F + model.v
        cond = np.linalg.cond(q)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularInnovationError(t + 1, cond)
        gain = np.linalg.solve(q.T, (r @ model.F).T).T
        f = model.F.T @ a
        m_cur = a + gain @ (Y[t] - f)
        c_cur = (eye - gain @ model.F.T) @ r
        c_cur = 0.5 * (c_cur + c_cur.T)
        out.a[t], out.R[t], out.f[t] = a, r, f
        out.Q[t], out.A[t] = q, gain
        out.m[t], out.C[t] = m_cur, c_cur
        m_prev, c_prev = m_cur, c_cur
    return out


def nrmse(Y: np.ndarray, f: np.ndarray) -> float:
    """Fitness 1 - |Y - f| / |Y - mean(Y)|: 1 is perfect, 0 matches the mean.

    Undefined (raises) for constant Y or length < 2.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    if len(Y) != len(f):
        raise ValueError("series lengths differ")
    if len(Y) < 2:
        raise ValueError("need at least two points")
    denom = float(np.linalg.norm(Y - Y.mean()))
    if denom == 0.0:
        raise ValueError("nrmse undefined for a constant series")
    return 1.0 - float(np.linalg.norm(Y - f)) / denom
