"""Deterministic quasi-Newton minimization and L1-regularized least squares."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class NonFiniteError(FloatingPointError):
    """Objective returned a non-finite loss or gradient."""

    def __init__(self, x: np.ndarray, loss: float):
        self.x = np.array(x, copy=True)
        self.loss = loss
        super().__init__(f"non-finite objective (loss={loss}) at iterate {np.array2string(self.x, threshold=20)}")


class RankDeficiencyError(np.linalg.LinAlgError):
    """Unpenalized least squares with a degenerate design."""


@dataclass
class QuasiNewtonConfig:
    memory: int = 0  # 0: dense BFGS, > 0: L-BFGS with that many pairs
    grad_tol: float = 1e-8
    max_iter: int = 5000
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 40

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if self.memory < 0:
            raise ValueError("memory must be non-negative")


@dataclass
class SolveReport:
    x: np.ndarray
    loss: float
    grad_norm: float
    iterations: int
    reason: str  # "tolerance" | "max-iterations" | "line-search-failure"
    n_evals: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.reason == "tolerance"


@dataclass
class StepInfo:
    """Passed to the optional callback after every accepted step."""

    iteration: int
    alpha: float
    loss_before: float
    loss_after: float
    slope_before: float  # g(x) . d
    slope_after: float  # g(x + alpha d) . d


def _evaluate(obj: Objective, x: np.ndarray) -> tuple[float, np.ndarray]:
    f, g = obj(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError(x, f)
    return f, g


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def line_search_strong_wolfe(obj: Objective, x, f0, g0, d, alpha0=1.0, c1=1e-4, c2=0.9, max_iter=40):
    """Bracketing/zoom line search returning ``(alpha, f, g, n_evals)`` or ``None``.

    The returned step satisfies ``f <= f0 + c1 alpha g0.d`` and
    ``|g.d| <= c2 |g0.d|``.
    """
    slope0 = float(g0 @ d)
    if slope0 >= 0:
        return None
    n_evals = 0

    def phi(alpha):
        nonlocal n_evals
        n_evals += 1
        f, g = _evaluate(obj, x + alpha * d)
        return f, g, float(g @ d)

    def zoom(lo, f_lo, s_lo, hi, f_hi, s_hi):
        for _ in range(max_iter):
            trial = _cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi)
            width = abs(hi - lo)
            if trial is None or not (min(lo, hi) + 0.1 * width <= trial <= max(lo, hi) - 0.1 * width):
                trial = 0.5 * (lo + hi)
            f, g, s = phi(trial)
            if f > f0 + c1 * trial * slope0 or f >= f_lo:
                hi, f_hi, s_hi = trial, f, s
            else:
                if abs(s) <= -c2 * slope0:
                    return trial, f, g
                if s * (hi - lo) >= 0:
                    hi, f_hi, s_hi = lo, f_lo, s_lo
                lo, f_lo, s_lo = trial, f, s
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    prev, f_prev, s_prev = 0.0, f0, slope0
    alpha = alpha0
    for i in range(max_iter):
        f, g, s = phi(alpha)
        if f > f0 + c1 * alpha * slope0 or (i > 0 and f >= f_prev):
            found = zoom(prev, f_prev, s_prev, alpha, f, s)
            return None if found is None else (*found, n_evals)
        if abs(s) <= -c2 * slope0:
            return alpha, f, g, n_evals
        if s >= 0:
            found = zoom(alpha, f, s, prev, f_prev, s_prev)
            return None if found is None else (*found, n_evals)
        prev, f_prev, s_prev = alpha, f, s
        alpha *= 2.0
    return None


def minimize_quasi_newton(obj: Objective, init, cfg: QuasiNewtonConfig | None = None,
                          callback: Callable[[StepInfo], None] | None = None) -> SolveReport:
    """BFGS (``cfg.memory == 0``) or L-BFGS minimization with strong-Wolfe steps.

    Accepted iterates have non-increasing loss.  Stops when the Euclidean
    gradient norm drops to ``cfg.grad_tol``, after ``cfg.max_iter``
    iterations, or when no Wolfe step exists even along steepest descent.
    """
    cfg = cfg or QuasiNewtonConfig()
    x = np.array(init, dtype=float)
    f, g = _evaluate(obj, x)
    n = x.size
    n_evals = 1
    history = [f]

    dense = cfg.memory == 0
    H = None  # dense inverse Hessian approximation
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    gamma = 1.0

    def direction(g):
        if dense:
            return -g if H is None else -(H @ g)
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        r = gamma * q
        for (s, y, rho), a in zip(pairs, reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        return -r

    def has_curvature():
        return (H is not None) if dense else bool(pairs)

    reason = "max-iterations"
    it = 0
    for it in range(cfg.max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.grad_tol:
            reason = "tolerance"
            break
        d = direction(g)
        if not g @ d < 0:
            H, pairs = None, []
            d = -g
        alpha0 = 1.0 if has_curvature() else min(1.0, 1.0 / gnorm)
        ls = line_search_strong_wolfe(obj, x, f, g, d, alpha0, cfg.c1, cfg.c2, cfg.max_line_search)
        if ls is None and has_curvature():
            H, pairs = None, []
            d = -g
            ls = line_search_strong_wolfe(obj, x, f, g, d, min(1.0, 1.0 / gnorm), cfg.c1, cfg.c2,
                                          cfg.max_line_search)
        if ls is None:
            reason = "line-search-failure"
            break
        alpha, f_new, g_new, evals = ls
        n_evals += evals
        s = alpha * d
        y = g_new - g
        if callback is not None:
            callback(StepInfo(it, alpha, f, f_new, float(g @ d), float(g_new @ d)))
        ys = float(y @ s)
        if ys > 1e-12 * float(np.linalg.norm(y) * np.linalg.norm(s)):
            if dense:
                if H is None:
                    H = np.eye(n) * (ys / float(y @ y))
                Hy = H @ y
                H += (ys + y @ Hy) / ys**2 * np.outer(s, s) - (np.outer(Hy, s) + np.outer(s, Hy)) / ys
            else:
                pairs.append((s, y, 1.0 / ys))
                if len(pairs) > cfg.memory:
                    pairs.pop(0)
                gamma = ys / float(y @ y)
        x = x + s
        f, g = f_new, g_new
        history.append(f)
    else:
        it = cfg.max_iter
    if reason == "max-iterations" and float(np.linalg.norm(g)) <= cfg.grad_tol:
        reason = "tolerance"
    return SolveReport(x, f, float(np.linalg.norm(g)), it, reason, n_evals, history)


# ---------------------------------------------------------------------------
# L1-regularized least squares


def soft_threshold(v, lam):
    """``sign(v) * max(|v| - lam, 0)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def l1_objective(A, b, q, lam) -> float:
    r = b - A @ q
    return 0.5 * float(r @ r) / len(b) + lam * float(np.abs(q).sum())


@dataclass
class L1Config:
    max_iter: int = 100_000
    tol: float = 1e-12


def solve_l1_linear(A, b, lam: float, cfg: L1Config | None = None, *, trace: list | None = None) -> np.ndarray:
    """Minimize ``0.5 ||b - A q||^2 / n + lam ||q||_1`` by FISTA with restart.

    A momentum step that increases the objective is replaced by a plain
    proximal-gradient step from the last iterate, so the objective is
    non-increasing.  Stops when the iterate moves by at most ``cfg.tol``
    (max-norm, relative to the iterate scale).
    """
    cfg = cfg or L1Config()
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValueError(f"design rows {A.shape} do not match target length {b.shape}")
    if lam < 0:
        raise ValueError("penalty must be non-negative")
    n, p = A.shape
    if lam == 0 and np.any(np.all(A == 0, axis=0)):
        raise RankDeficiencyError("design has an all-zero column and no penalty")
    G = A.T @ A / n
    c = A.T @ b / n
    bb = 0.5 * float(b @ b) / n
    L = float(np.linalg.eigvalsh(G)[-1]) if p else 0.0
    if L <= 0:
        return np.zeros(p)

    def F(q):
        return bb - float(q @ c) + 0.5 * float(q @ G @ q) + lam * float(np.abs(q).sum())

    def prox_step(y):
        return soft_threshold(y - (G @ y - c) / L, lam / L)

    x = np.zeros(p)
    fx = F(x)
    y = x.copy()
    t = 1.0
    for _ in range(cfg.max_iter):
        z = prox_step(y)
        fz = F(z)
        if fz > fx:
            t = 1.0
            z = prox_step(x)
            fz = F(z)
            if fz > fx:  # rounding at the optimum
                z, fz = x, fx
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        step = float(np.max(np.abs(z - x)))
        x, fx, t = z, fz, t_next
        if trace is not None:
            trace.append(fx)
        if step <= cfg.tol * max(1.0, float(np.max(np.abs(x)))):
            break
    return x
