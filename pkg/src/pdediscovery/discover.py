"""Stage two: minimize the PDE residual ``u_t - L(u, du, ...)``.

Three parameterizations of ``L``: a linear model over a fixed set of
library columns, a linear model over the full polynomial library (same
code path, more columns) and a dense tanh operator network.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .derivnet import Mlp, forward, param_gradient
from .features import CoordinateFeature, DesignMatrix, LibrarySpec, Term, parse_column
from .optim import L1Config, QuasiNewtonConfig, minimize_quasi_newton, solve_l1_linear
from .transforms import AffineTransform

log = logging.getLogger(__name__)

DIRECT_SOLVE_MAX_COLUMNS = 2000


@dataclass
class ResidualConfig:
    alpha_q: float = 0.0
    solver: str = "auto"  # auto | lstsq | proximal
    prune_cutoff: float = 0.0
    l1: L1Config = field(default_factory=L1Config)

    def __post_init__(self):
        if self.alpha_q < 0 or self.prune_cutoff < 0:
            raise ValueError("alpha_q and prune_cutoff must be non-negative")
        if self.solver not in ("auto", "lstsq", "proximal"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class OperatorFitConfig:
    hidden: tuple[int, ...] = (2, 2)
    seed: int = 0
    optimizer: QuasiNewtonConfig = field(default_factory=lambda: QuasiNewtonConfig(memory=10, max_iter=3000))
    max_rows: int | None = 20000


@dataclass
class LinearPdeModel:
    terms: list
    coefficients: np.ndarray
    coordinates: str = "physical"  # physical | transformed
    transform: AffineTransform | None = None
    residual: float | None = None
    target_name: str = "u_t"
    rank_deficient: bool = False
    spec: LibrarySpec | None = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (len(self.terms),):
            raise ValueError("one coefficient per term required")
        if self.coordinates not in ("physical", "transformed"):
            raise ValueError("coordinates flag must be 'physical' or 'transformed'")

    @property
    def names(self) -> list[str]:
        return [str(t) for t in self.terms]

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def predict(self, values: np.ndarray) -> np.ndarray:
        return values @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "terms": self.names,
            "coefficients": self.coefficients.tolist(),
            "coordinates": self.coordinates,
            "transform": None if self.transform is None else self.transform.to_dict(),
            "residual": self.residual,
            "target": self.target_name,
            "rank_deficient": self.rank_deficient,
            "library": None if self.spec is None else spec_to_dict(self.spec),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearPdeModel":
        spec = spec_from_dict(doc["library"]) if doc.get("library") else None
        terms = [parse_column(n, spec) for n in doc["terms"]] if spec else list(doc["terms"])
        tr = AffineTransform.from_dict(doc["transform"]) if doc.get("transform") else None
        return cls(terms, np.array(doc["coefficients"]), doc["coordinates"], tr, doc.get("residual"),
                   doc.get("target", "u_t"), doc.get("rank_deficient", False), spec)


@dataclass
class OperatorNet:
    net: Mlp
    inputs: list
    residual: float | None = None
    coordinates: str = "physical"
    transform: AffineTransform | None = None
    target_name: str = "u_t"
    spec: LibrarySpec | None = None

    def __post_init__(self):
        if self.net.n_inputs != len(self.inputs):
            raise ValueError("network input width must equal the number of features")

    @property
    def names(self) -> list[str]:
        return [str(c) for c in self.inputs]

    def predict(self, values: np.ndarray) -> np.ndarray:
        return forward(self.net, values)[:, 0]

    def to_dict(self) -> dict:
        return {
            "kind": "operator-net",
            "inputs": self.names,
            "network": self.net.to_dict(),
            "coordinates": self.coordinates,
            "transform": None if self.transform is None else self.transform.to_dict(),
            "residual": self.residual,
            "target": self.target_name,
            "library": None if self.spec is None else spec_to_dict(self.spec),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OperatorNet":
        spec = spec_from_dict(doc["library"]) if doc.get("library") else None
        cols = [parse_column(n, spec) for n in doc["inputs"]] if spec else list(doc["inputs"])
        tr = AffineTransform.from_dict(doc["transform"]) if doc.get("transform") else None
        return cls(Mlp.from_dict(doc["network"]), cols, doc.get("residual"), doc["coordinates"], tr,
                   doc.get("target", "u_t"), spec)


def spec_to_dict(spec: LibrarySpec) -> dict:
    return {f.name: (list(v) if isinstance(v, tuple) else v)
            for f in dataclasses.fields(spec) for v in [getattr(spec, f.name)]}


def spec_from_dict(doc: dict) -> LibrarySpec:
    kw = dict(doc)
    for key in ("space_names", "output_names"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    return LibrarySpec(**kw)


def model_from_dict(doc: dict):
    if doc.get("kind") == "operator-net":
        return OperatorNet.from_dict(doc)
    return LinearPdeModel.from_dict(doc)


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# linear models


def residual_loss(values: np.ndarray, target: np.ndarray, coefficients: np.ndarray) -> float:
    r = target - values @ coefficients
    return 0.5 * float(np.mean(r * r))


def _column_scales(design: DesignMatrix) -> np.ndarray:
    s = np.sqrt(np.mean(design.values ** 2, axis=0)) if design.n_rows else np.ones(len(design.columns))
    s = np.where(design.stds > 0, design.stds, s)
    return np.where(s > 0, s, 1.0)


def fit_linear_pde(design: DesignMatrix, cfg: ResidualConfig | None = None, coordinates: str = "physical",
                   transform: AffineTransform | None = None) -> LinearPdeModel:
    """Coefficients of ``u_t = sum q_i column_i`` with optional L1 penalty.

    Columns are divided by their standard deviation before solving (no
    centering, so the model keeps no intercept unless the library has a
    bias column) and the coefficients are mapped back afterwards.  The
    penalty ``alpha_q`` acts on the standardized coefficients.
    """
    cfg = cfg or ResidualConfig()
    if design.n_rows == 0 or not design.columns:
        raise ValueError("design matrix is empty after row filtering")
    if any(isinstance(c, CoordinateFeature) for c in design.columns) and coordinates == "transformed":
        log.warning("coordinate columns in a transformed-coordinate model cannot be back-transformed")
    scale = _column_scales(design)
    Z = design.values / scale
    y = design.target
    solver = cfg.solver
    if solver == "auto":
        solver = "lstsq" if cfg.alpha_q == 0 and Z.shape[1] <= DIRECT_SOLVE_MAX_COLUMNS else "proximal"
    rank_deficient = False
    if solver == "lstsq":
        if cfg.alpha_q != 0:
            raise ValueError("the direct least-squares solver does not support an L1 penalty")
        w, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
        rank_deficient = bool(rank < Z.shape[1])
        if rank_deficient:
            log.warning("rank-deficient design (rank %d of %d); minimum-norm solution", rank, Z.shape[1])
    else:
        w = solve_l1_linear(Z, y, cfg.alpha_q, cfg.l1)
    q = w / scale
    model = LinearPdeModel(list(design.columns), q, coordinates, transform,
                           residual_loss(design.values, y, q), design.target_name, rank_deficient, design.spec)
    if cfg.prune_cutoff > 0:
        model = prune(model, cfg.prune_cutoff, design)
    return model


def prune(model: LinearPdeModel, cutoff: float, design: DesignMatrix | None = None) -> LinearPdeModel:
    """Zero every coefficient with magnitude below ``cutoff``; recompute the residual."""
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    q = np.where(np.abs(model.coefficients) < cutoff, 0.0, model.coefficients)
    residual = model.residual
    if design is not None:
        residual = residual_loss(design.select(model.names).values, design.target, q)
    elif cutoff > 0:
        residual = None
    return dataclasses.replace(model, coefficients=q, residual=residual)


# ---------------------------------------------------------------------------
# operator networks


def fit_operator_net(features: np.ndarray, target: np.ndarray, hidden: Sequence[int] = (2, 2),
                     cfg: OperatorFitConfig | None = None, inputs: list | None = None,
                     coordinates: str = "physical", transform: AffineTransform | None = None,
                     spec: LibrarySpec | None = None, target_name: str = "u_t") -> OperatorNet:
    """Train ``u_t ~ net(features)`` by quasi-Newton on the mean-square residual.

    Inputs and target are standardized for training; the affine maps are
    folded into the first and last layers so the returned network acts on
    raw feature values.
    """
    cfg = cfg or OperatorFitConfig()
    X = np.asarray(features, dtype=float)
    y = np.asarray(target, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("operator features and target must be finite")
    n, p = X.shape
    rows = np.arange(n)
    if cfg.max_rows is not None and n > cfg.max_rows:
        rows = np.sort(np.random.default_rng(cfg.seed).choice(n, cfg.max_rows, replace=False))
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    ym, ys = float(y.mean()), float(y.std()) or 1.0
    Xs = (X[rows] - mu) / sd
    yt = ((y[rows] - ym) / ys)[:, None]
    net = Mlp.initialize((p, *hidden, 1), cfg.seed)
    m = len(rows)

    def obj(params):
        cur = net.with_params(params)
        r = forward(cur, Xs) - yt
        return 0.5 * float(np.sum(r * r)) / m, param_gradient(cur, Xs, r / m)

    rep = minimize_quasi_newton(obj, net.params(), cfg.optimizer)
    log.info("operator net %s: %s after %d iterations", (p, *hidden, 1), rep.reason, rep.iterations)
    trained = net.with_params(rep.x)
    raw = fold_standardization(trained, mu, sd, ym, ys)
    residual = 0.5 * float(np.mean((forward(raw, X)[:, 0] - y) ** 2))
    names = inputs if inputs is not None else [f"f{i}" for i in range(p)]
    return OperatorNet(raw, list(names), residual, coordinates, transform, target_name, spec)


def fold_standardization(net: Mlp, mu, sd, ym: float, ys: float) -> Mlp:
    """Network acting on raw inputs equal to ``ym + ys * net((x - mu) / sd)``."""
    ws = [np.array(w) for w in net.weights]
    bs = [np.array(b) for b in net.biases]
    bs[0] = bs[0] - ws[0] @ (mu / sd)
    ws[0] = ws[0] / sd
    ws[-1] = ws[-1] * ys
    bs[-1] = bs[-1] * ys + ym
    return Mlp(net.layer_dims, tuple(ws), tuple(bs), net.seed)


def fit_operator_on_design(design: DesignMatrix, hidden: Sequence[int], cfg: OperatorFitConfig | None = None,
                           coordinates: str = "physical", transform: AffineTransform | None = None) -> OperatorNet:
    return fit_operator_net(design.values, design.target, hidden, cfg, list(design.columns), coordinates,
                            transform, design.spec, design.target_name)


# ---------------------------------------------------------------------------
# symbolic output


def format_number(c: float) -> str:
    """Scientific notation with 5 significant digits, e.g. ``1.0000e-2``."""
    mant, exp = f"{c:.4e}".split("e")
    return f"{mant}e{int(exp)}"


def _signed_sum(pairs) -> str:
    out = ""
    for c, label in pairs:
        body = format_number(abs(c)) + (f"*{label}" if label else "")
        if not out:
            out = ("-" if c < 0 else "") + body
        else:
            out += (" - " if c < 0 else " + ") + body
    return out or "0"


def emit_symbolic(model) -> str:
    """Human-readable ``u_t = ...`` equation for a linear model or operator net."""
    if isinstance(model, LinearPdeModel):
        pairs = [(float(c), str(t) if str(t) != "1" else "") for c, t in zip(model.coefficients, model.terms)
                 if c != 0]
        return f"{model.target_name} = {_signed_sum(pairs)}"
    if isinstance(model, OperatorNet):
        exprs = model.names
        net = model.net
        last = net.n_layers - 1
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            new = []
            for j in range(w.shape[0]):
                pairs = [(float(w[j, i]), e) for i, e in enumerate(exprs) if w[j, i] != 0]
                if b[j] != 0:
                    pairs.append((float(b[j]), ""))
                s = _signed_sum(pairs)
                new.append(s if l == last else f"tanh({s})")
            exprs = new
        return f"{model.target_name} = {exprs[0]}"
    raise TypeError(f"cannot render {type(model).__name__}")
