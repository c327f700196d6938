"""Burgers ground truth and Runge-Kutta rollout of discovered pointwise ODEs."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .dataset import Dataset
from .discover import LinearPdeModel, OperatorNet
from .features import CoordinateFeature

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    pass


class StepSizeUnderflow(RuntimeError):
    def __init__(self, t: float, h: float):
        self.t = t
        super().__init__(f"step size {h:.3e} underflowed at t = {t:.6g}")


@dataclass(frozen=True)
class BurgersConfig:
    """``u_t + u u_x = eps u_xx`` on ``[0, 1]``, ``u = 0`` at both ends."""

    eps: float = 1e-2
    nx: int = 256
    nt: int = 1000
    t_end: float = 1.0
    convection: str = "conservative"  # conservative | skew
    newton_tol: float = 1e-12
    newton_max_iter: int = 30

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("viscosity must be positive")
        if self.nx < 2 or self.nt < 2:
            raise ValueError("nx and nt must be at least 2")
        if self.convection not in ("conservative", "skew"):
            raise ValueError(f"unknown convection form {self.convection!r}")


@dataclass
class Trajectory:
    t: np.ndarray  # (nt + 1,)
    x: np.ndarray  # (nx + 1,)
    u: np.ndarray  # (nt + 1, nx + 1)

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory time stamps must increase")
        if self.u.shape != (self.t.size, self.x.size):
            raise ValueError("field shape does not match the stamps and grid")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            for i, ti in enumerate(self.t):
                for j, xj in enumerate(self.x):
                    w.writerow([repr(float(ti)), repr(float(xj)), repr(float(self.u[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = np.unique(data[:, 0])
        x = np.unique(data[:, 1])
        u = np.full((t.size, x.size), np.nan)
        u[np.searchsorted(t, data[:, 0]), np.searchsorted(x, data[:, 1])] = data[:, 2]
        return cls(t, x, u)


def solve_burgers(cfg: BurgersConfig | None = None, initial: Callable | None = None) -> Trajectory:
    """Backward Euler in time, second-order central differences in space.

    Each step solves the nonlinear system by Newton's method with a
    tridiagonal Jacobian.  Convection is ``(u^2 / 2)_x`` (conservative) or
    the skew-symmetric split of it; boundary values stay exactly zero.
    """
    cfg = cfg or BurgersConfig()
    x = np.linspace(0.0, 1.0, cfg.nx + 1)
    dx = 1.0 / cfg.nx
    dt = cfg.t_end / cfg.nt
    eps = cfg.eps
    u = np.sin(2 * np.pi * x) if initial is None else np.asarray(initial(x), dtype=float)
    u = u.copy()
    u[0] = u[-1] = 0.0
    # weight of the conservative part of the convection term
    theta = 1.0 if cfg.convection == "conservative" else 2.0 / 3.0
    out = np.empty((cfg.nt + 1, cfg.nx + 1))
    out[0] = u
    diff = eps / dx**2
    band = np.empty((3, cfg.nx - 1))
    for n in range(cfg.nt):
        v = u.copy()
        for it in range(cfg.newton_max_iter):
            vl, vi, vr = v[:-2], v[1:-1], v[2:]
            conv = theta * (vr**2 - vl**2) / (4 * dx) + (1 - theta) * vi * (vr - vl) / (2 * dx)
            res = (vi - u[1:-1]) / dt + conv - diff * (vr - 2 * vi + vl)
            upper = theta * vr / (2 * dx) + (1 - theta) * vi / (2 * dx) - diff
            lower = -theta * vl / (2 * dx) - (1 - theta) * vi / (2 * dx) - diff
            band[1] = 1 / dt + 2 * diff + (1 - theta) * (vr - vl) / (2 * dx)
            band[0, 1:] = upper[:-1]
            band[0, 0] = 0.0
            band[2, :-1] = lower[1:]
            band[2, -1] = 0.0
            delta = solve_banded((1, 1), band, -res)
            v[1:-1] += delta
            if not np.all(np.isfinite(v)):
                raise NewtonError(f"Newton iterate diverged in step {n + 1} (t = {(n + 1) * dt:.6g})")
            if np.max(np.abs(delta)) <= cfg.newton_tol * max(1.0, np.max(np.abs(v))):
                break
        else:
            raise NewtonError(
                f"Newton did not converge in step {n + 1} (t = {(n + 1) * dt:.6g}); "
                f"last update {np.max(np.abs(delta)):.3e}"
            )
        u = v
        out[n + 1] = u
    return Trajectory(np.linspace(0.0, cfg.t_end, cfg.nt + 1), x, out)


def trajectory_to_dataset(traj: Trajectory, drop_boundaries: bool = True, drop_t0: bool = True) -> Dataset:
    """Rows ``(t, x, u)``, time-major."""
    ti = slice(1, None) if drop_t0 else slice(None)
    xi = slice(1, -1) if drop_boundaries else slice(None)
    t = traj.t[ti]
    x = traj.x[xi]
    T, X = np.meshgrid(t, x, indexing="ij")
    return Dataset(T.ravel(), X.ravel()[:, None], traj.u[ti, xi].ravel()[:, None])


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + s h) = y + h * K^T P [s, s^2, s^3, s^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@dataclass
class RK45Config:
    rtol: float = 1e-6
    atol: float = 1e-9
    max_steps: int = 100_000
    first_step: float | None = None


@dataclass
class OdeSolution:
    t: np.ndarray
    y: np.ndarray  # (len(t), n)
    n_steps: int
    n_rejected: int
    n_evals: int


def _initial_step(f, t0, y0, f0, direction, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate_rk45(f: Callable, t_span, y0, t_eval=None, cfg: RK45Config | None = None) -> OdeSolution:
    """Adaptive Dormand-Prince 5(4) with local extrapolation and dense output."""
    cfg = cfg or RK45Config()
    t0, t1 = map(float, t_span)
    if t1 <= t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=float).reshape(-1)
    t_eval = np.array([t0, t1]) if t_eval is None else np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) < 0) or t_eval[0] < t0 or t_eval[-1] > t1:
        raise ValueError("t_eval must be sorted and inside t_span")
    out = np.empty((t_eval.size, y.size))
    k_out = 0
    while k_out < t_eval.size and t_eval[k_out] == t0:
        out[k_out] = y
        k_out += 1
    t = t0
    fy = np.asarray(f(t, y), dtype=float)
    n_evals = 1
    h = cfg.first_step or _initial_step(f, t, y, fy, 1.0, cfg.rtol, cfg.atol)
    n_evals += 0 if cfg.first_step else 1
    K = np.empty((7, y.size))
    steps = rejected = 0
    while t < t1:
        if steps >= cfg.max_steps:
            raise StepSizeUnderflow(t, h)
        min_step = 10 * np.spacing(max(abs(t), 1.0))
        if h < min_step:
            raise StepSizeUnderflow(t, h)
        h = min(h, t1 - t)
        K[0] = fy
        for s in range(1, 7):
            ys = y + h * (np.asarray(_A[s]) @ K[:s])
            K[s] = f(t + _C[s] * h, ys)
        n_evals += 6
        y_new = y + h * (_B[:6] @ K[:6])  # K[6] already holds f(t + h, y_new)
        err = h * (_E @ K)
        scale = cfg.atol + np.maximum(np.abs(y), np.abs(y_new)) * cfg.rtol
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if not np.all(np.isfinite(y_new)):
            err_norm = np.inf
        if err_norm <= 1.0:
            t_new = t + h
            Q = K.T @ _P
            while k_out < t_eval.size and t_eval[k_out] <= t_new:
                s = (t_eval[k_out] - t) / h
                out[k_out] = y + h * (Q @ np.array([s, s**2, s**3, s**4]))
                k_out += 1
            t, y, fy = t_new, y_new, K[6].copy()
            steps += 1
            factor = 10.0 if err_norm == 0 else min(10.0, 0.9 * err_norm ** -0.2)
            h *= factor
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err_norm ** -0.2) if np.isfinite(err_norm) else 0.2
    return OdeSolution(t_eval, out, steps, rejected, n_evals)


# ---------------------------------------------------------------------------
# rollout of discovered pointwise operators


def _operator_columns(operator):
    cols = operator.inputs if isinstance(operator, OperatorNet) else operator.terms
    for c in cols:
        if isinstance(c, CoordinateFeature):
            continue
        if isinstance(c, str) or any(d.order > 0 for d, _ in c.factors):
            raise ValueError(f"rollout needs an operator without spatial derivatives; got column {c}")
    return cols


def operator_rhs(operator, x_grid: np.ndarray) -> Callable:
    """``f(t, u)`` evaluating ``du/dt`` at every node from the discovered operator.

    Operators fitted in transformed coordinates are evaluated at the mapped
    ``(tau, xi)`` and rescaled by ``1 / s_t``.
    """
    cols = _operator_columns(operator)
    x_grid = np.asarray(x_grid, dtype=float)
    tr = operator.transform if operator.coordinates == "transformed" else None

    def features(t, u):
        pts = np.column_stack([np.full(u.size, t), x_grid])
        if tr is not None:
            pts = tr.apply_points(pts)
        X = np.empty((u.size, len(cols)))
        for i, c in enumerate(cols):
            if isinstance(c, CoordinateFeature):
                X[:, i] = pts[:, c.axis]
            else:
                X[:, i] = np.prod([u**p for _, p in c.factors], axis=0) if c.factors else 1.0
        return X

    time_scale = 1.0 / tr.scales[0] if tr is not None else 1.0

    def rhs(t, u):
        return operator.predict(features(t, u)) * time_scale

    return rhs


def rollout_ode(operator, initial: np.ndarray, x_grid: np.ndarray, t_span, t_eval=None,
                cfg: RK45Config | None = None) -> Trajectory:
    """Integrate ``du/dt = L(u [, x, t])`` independently at every grid node."""
    rhs = operator_rhs(operator, x_grid)
    checked = _finite_guard(rhs)
    sol = integrate_rk45(checked, t_span, initial, t_eval, cfg)
    return Trajectory(sol.t, np.asarray(x_grid, dtype=float), sol.y)


def _finite_guard(rhs):
    def f(t, u):
        v = rhs(t, u)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"operator produced non-finite rates at t = {t:.6g}")
        return v

    return f


def rollout_mse(traj: Trajectory, reference: Trajectory) -> np.ndarray:
    """Mean-square error per stamp of ``traj`` over the nodes shared with ``reference``.

    The reference is interpolated linearly in time when stamps differ.
    """
    lo, hi = max(traj.t[0], reference.t[0]), min(traj.t[-1], reference.t[-1])
    if lo > hi:
        raise ValueError("trajectories have disjoint time ranges")
    ia, ib = _shared_nodes(traj.x, reference.x)
    if ia.size == 0:
        raise ValueError("trajectories share no spatial nodes")
    inside = (traj.t >= lo) & (traj.t <= hi)
    ref = np.empty((int(inside.sum()), ia.size))
    for c, j in enumerate(ib):
        ref[:, c] = np.interp(traj.t[inside], reference.t, reference.u[:, j])
    err = traj.u[inside][:, ia] - ref
    out = np.full(traj.t.size, np.nan)
    out[inside] = np.mean(err**2, axis=1)
    return out


def _shared_nodes(a: np.ndarray, b: np.ndarray):
    tol = 1e-9 * max(1.0, float(np.max(np.abs(b))))
    pos = np.searchsorted(b, a)
    ia, ib = [], []
    for i, (xa, p) in enumerate(zip(a, pos)):
        for cand in (p - 1, p):
            if 0 <= cand < b.size and abs(b[cand] - xa) <= tol:
                ia.append(i)
                ib.append(cand)
                break
    return np.array(ia, dtype=int), np.array(ib, dtype=int)
