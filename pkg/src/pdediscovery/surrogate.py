"""Stage one: fit a tanh network surrogate to the raw samples."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .derivnet import JetTable, Mlp, forward, input_jets, output_and_param_gradient
from .optim import QuasiNewtonConfig, SolveReport, minimize_quasi_newton
from .transforms import AffineTransform

log = logging.getLogger(__name__)


@dataclass
class SurrogateFitConfig:
    hidden: tuple[int, ...] = (10, 10, 10, 10, 10)
    alpha_p: float = 0.0
    optimizer: QuasiNewtonConfig = field(default_factory=lambda: QuasiNewtonConfig(max_iter=15000))
    seed: int = 0
    validation_fraction: float = 0.1
    # rows used for training after the validation split; None keeps all
    max_train_rows: int | None = 20000

    def __post_init__(self):
        if any(h <= 0 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if not 0.0 <= self.validation_fraction <= 0.5:
            raise ValueError("validation fraction must lie in [0, 0.5]")
        if self.alpha_p < 0:
            raise ValueError("alpha_p must be non-negative")


@dataclass
class FitReport:
    train_mse: float
    validation_mse: float | None
    objective: float  # 0.5 * mean squared misfit + alpha_p / 2 * |p|^2
    param_norm_sq: float
    n_train: int
    n_validation: int
    solve: SolveReport


def surrogate_objective(mlp: Mlp, inputs: np.ndarray, targets: np.ndarray, alpha_p: float):
    """``p -> (0.5 mean |u - net(p)|^2 + alpha_p / 2 |p|^2, gradient)``."""
    n = inputs.shape[0]

    def misfit(out):
        r = out - targets
        return 0.5 * float(np.sum(r * r)) / n, r / n

    def obj(p):
        f, g = output_and_param_gradient(mlp.with_params(p), inputs, misfit)
        return f + 0.5 * alpha_p * float(p @ p), g + alpha_p * p

    return obj


def split_rows(data: Dataset, cfg: SurrogateFitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation row indices, independent of the storage order."""
    order = data.canonical_order()
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(order))
    n_val = int(round(cfg.validation_fraction * len(perm)))
    val, train = perm[:n_val], perm[n_val:]
    if cfg.max_train_rows is not None and len(train) > cfg.max_train_rows:
        train = train[: cfg.max_train_rows]
    # positions in canonical order, so the rows come out in the same sequence for any storage order
    return order[np.sort(train)], order[np.sort(val)]


def fit_surrogate(data: Dataset, cfg: SurrogateFitConfig | None = None,
                  transform: AffineTransform | None = None) -> tuple[Mlp, FitReport]:
    """Minimize the L2-regularized mean-square misfit over network parameters.

    Inputs are ``(t, x)`` treated alike, optionally after ``transform``.
    Rows are taken in canonical order so a shuffled copy of the dataset
    gives the identical fit.
    """
    cfg = cfg or SurrogateFitConfig()
    if len(data) == 0:
        raise ValueError("cannot fit a surrogate to an empty dataset")
    train, val = split_rows(data, cfg)
    inputs = data.inputs if transform is None else transform.apply_points(data.inputs)
    dims = (inputs.shape[1], *cfg.hidden, data.n_out)
    net = Mlp.initialize(dims, cfg.seed)
    x_tr, y_tr = inputs[train], data.u[train]
    obj = surrogate_objective(net, x_tr, y_tr, cfg.alpha_p)
    log.info("fitting surrogate %s on %d rows", dims, len(train))
    rep = minimize_quasi_newton(obj, net.params(), cfg.optimizer)
    net = net.with_params(rep.x)
    train_mse = float(np.mean((forward(net, x_tr) - y_tr) ** 2))
    val_mse = float(np.mean((forward(net, inputs[val]) - data.u[val]) ** 2)) if len(val) else None
    report = FitReport(train_mse, val_mse, rep.loss, float(rep.x @ rep.x), len(train), len(val), rep)
    log.info("surrogate done: %s after %d iterations, train mse %.3e", rep.reason, rep.iterations, train_mse)
    return net, report


def predict_with_derivatives(model: Mlp, points, order: int) -> JetTable:
    """Values and all partials up to ``order`` at ``(t, x)`` points.

    The time derivative ``u_t`` is the entry with multi-index ``(1, 0, .., 0)``.
    """
    return input_jets(model, points, order)
