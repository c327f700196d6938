"""Model selection: residual grid searches and feature diagnostics."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .derivnet import Mlp, input_jets
from .discover import OperatorFitConfig, ResidualConfig, fit_linear_pde, fit_operator_on_design
from .features import DesignMatrix, LibrarySpec, design_from_jets
from .optim import L1Config, solve_l1_linear

log = logging.getLogger(__name__)


@dataclass
class CostGrid:
    """log10 residual per cell; ``nan`` with a reason for failed cells."""
    row_name: str
    row_labels: list[str]
    col_name: str
    col_labels: list[str]
    values: np.ndarray
    reasons: dict[tuple[int, int], str] = field(default_factory=dict)
    meta: dict[tuple[int, int], dict] = field(default_factory=dict)

    def cell(self, row, col) -> float:
        return float(self.values[self.row_labels.index(str(row)), self.col_labels.index(str(col))])

    def failed(self) -> list[tuple[str, str, str]]:
        return [(self.row_labels[i], self.col_labels[j], r) for (i, j), r in sorted(self.reasons.items())]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"{self.row_name}\\{self.col_name}"] + self.col_labels)
            for i, lab in enumerate(self.row_labels):
                row = []
                for j in range(len(self.col_labels)):
                    row.append(f"failed: {self.reasons[(i, j)]}" if (i, j) in self.reasons
                               else repr(float(self.values[i, j])))
                w.writerow([lab] + row)

    @classmethod
    def from_csv(cls, path) -> "CostGrid":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        row_name, col_name = rows[0][0].split("\\")
        vals = np.full((len(rows) - 1, len(rows[0]) - 1), np.nan)
        reasons = {}
        for i, r in enumerate(rows[1:]):
            for j, v in enumerate(r[1:]):
                if v.startswith("failed"):
                    reasons[(i, j)] = v.partition(": ")[2]
                else:
                    vals[i, j] = float(v)
        return cls(row_name, [r[0] for r in rows[1:]], col_name, rows[0][1:], vals, reasons)


@dataclass
class GridSearchConfig:
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    operator: OperatorFitConfig = field(default_factory=OperatorFitConfig)
    include_bias: bool = False
    include_coords: bool = False
    max_terms: int = 20000
    threads: int = 1


def _run_cells(tasks: list[Callable], threads: int) -> list:
    def guarded(task):
        try:
            return task(), None
        except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the search
            return None, f"{type(exc).__name__}: {exc}"

    if threads <= 1:
        return [guarded(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, tasks))


def _fill(grid: CostGrid, results, shape) -> CostGrid:
    for flat, (res, err) in enumerate(results):
        i, j = divmod(flat, shape[1])
        if err is not None:
            grid.reasons[(i, j)] = err
            continue
        cost, meta = res
        if not (cost > 0 and math.isfinite(cost)):
            grid.values[i, j] = -np.inf if cost == 0 else np.nan
            if cost != 0:
                grid.reasons[(i, j)] = f"non-finite residual {cost}"
        else:
            grid.values[i, j] = math.log10(cost)
        grid.meta[(i, j)] = meta
    return grid


def _spec(surrogate: Mlp, m: int, k: int, cfg: GridSearchConfig, names=None, bias=None) -> LibrarySpec:
    kw = {} if names is None else names
    return LibrarySpec(m=m, k=k, n_space=surrogate.n_inputs - 1, n_out=surrogate.n_outputs,
                       include_coords=cfg.include_coords,
                       include_bias=cfg.include_bias if bias is None else bias,
                       max_terms=cfg.max_terms, **kw)


def grid_search_mk(surrogate: Mlp, points, m_values: Sequence[int], k_values: Sequence[int],
                   cfg: GridSearchConfig | None = None, names: dict | None = None) -> CostGrid:
    """log10 of the linear-model residual for every (m, k) library.

    Surrogate jets are computed once at the largest order and shared by
    all cells; only the operator is refit per cell.
    """
    cfg = cfg or GridSearchConfig()
    if not m_values or not k_values:
        raise ValueError("m and k ranges must be non-empty")
    jets = input_jets(surrogate, points, max(max(m_values), 1))

    def cell(m, k):
        def run():
            design = design_from_jets(jets, _spec(surrogate, m, k, cfg, names))
            model = fit_linear_pde(design, cfg.residual)
            return model.residual, {"n_terms": len(design.columns), "rank_deficient": model.rank_deficient,
                                    "n_rows": design.n_rows}
        return run

    tasks = [cell(m, k) for m in m_values for k in k_values]
    grid = CostGrid("m", [str(m) for m in m_values], "k", [str(k) for k in k_values],
                    np.full((len(m_values), len(k_values)), np.nan))
    return _fill(grid, _run_cells(tasks, cfg.threads), grid.values.shape)


def architecture_label(hidden: Sequence[int]) -> str:
    """``linear``, ``LxN`` for L hidden layers of N neurons, else widths joined by ``-``."""
    if not len(hidden):
        return "linear"
    if len(set(hidden)) == 1:
        return f"{len(hidden)}x{hidden[0]}"
    return "-".join(str(h) for h in hidden)


def parse_architecture(text: str) -> list[int]:
    """Inverse of :func:`architecture_label`; ``0`` and the empty string also mean linear."""
    text = text.strip()
    if text in ("", "0", "linear"):
        return []
    try:
        if "x" in text:
            layers, width = (int(v) for v in text.split("x"))
            hidden = [width] * layers
        else:
            hidden = [int(v) for v in text.split("-")]
    except ValueError:
        raise ValueError(f"architecture {text!r} is not 'linear', 'LxN' or 'w1-w2-..'") from None
    if not hidden or min(hidden) < 1:
        raise ValueError(f"architecture {text!r} needs positive layer counts and widths")
    return hidden


def grid_search_architecture(surrogate: Mlp, points, architectures: Sequence[Sequence[int]],
                             m_values: Sequence[int], cfg: GridSearchConfig | None = None,
                             names: dict | None = None) -> CostGrid:
    """log10 residual of operator networks on the degree-one library of order m.

    An empty architecture is a network without hidden layers, i.e. an
    affine model of the inputs.  Every cell uses the seed of ``cfg.operator``.
    """
    cfg = cfg or GridSearchConfig()
    if not architectures or not m_values:
        raise ValueError("architecture and m ranges must be non-empty")
    jets = input_jets(surrogate, points, max(max(m_values), 1))
    designs = {}
    for m in m_values:
        # networks carry their own biases
        designs[m] = design_from_jets(jets, _spec(surrogate, m, 1, cfg, names, bias=False))

    def cell(hidden, m):
        def run():
            op = fit_operator_on_design(designs[m], tuple(hidden), cfg.operator)
            return op.residual, {"n_inputs": len(op.names), "hidden": list(hidden)}
        return run

    tasks = [cell(h, m) for h in architectures for m in m_values]
    grid = CostGrid("architecture", [architecture_label(h) for h in architectures], "m",
                    [str(m) for m in m_values], np.full((len(architectures), len(m_values)), np.nan))
    return _fill(grid, _run_cells(tasks, cfg.threads), grid.values.shape)


# ---------------------------------------------------------------------------
# feature diagnostics


@dataclass
class StabilityConfig:
    n_subsamples: int = 100
    fraction: float = 0.5
    jitter: tuple[float, float] = (0.2, 1.0)
    alpha: float = 0.01
    seed: int = 0
    threshold: float = 1e-8  # standardized coefficient counted as selected
    l1: L1Config = field(default_factory=lambda: L1Config(max_iter=20000, tol=1e-12))

    def __post_init__(self):
        lo, hi = self.jitter
        if not 0 < lo <= hi <= 1:
            raise ValueError("jitter range must satisfy 0 < low <= high <= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError("subsample fraction must lie in (0, 1]")


@dataclass
class FeatureReport:
    names: list[str]
    variance: np.ndarray
    stability: np.ndarray
    rfe_rank: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["term", "variance", "stability", "rfe_rank"])
            for n, v, s, r in zip(self.names, self.variance, self.stability, self.rfe_rank):
                w.writerow([n, repr(float(v)), repr(float(s)), int(r)])

    def top(self, n: int) -> list[str]:
        order = np.argsort(self.rfe_rank, kind="stable")
        return [self.names[i] for i in order[:n]]


def _standardize(values: np.ndarray) -> np.ndarray:
    s = values.std(axis=0)
    return values / np.where(s > 0, s, 1.0)


def stability_scores(values: np.ndarray, target: np.ndarray, cfg: StabilityConfig | None = None) -> np.ndarray:
    """Selection frequency under subsampled rows and randomly down-weighted columns.

    Each round draws ``fraction`` of the rows without replacement, multiplies
    every standardized column by a weight from ``jitter`` (so its penalty is
    effectively divided by that weight) and solves the L1 problem.
    """
    cfg = cfg or StabilityConfig()
    Z = _standardize(values)
    ys = float(target.std()) or 1.0
    y = target / ys
    n, p = Z.shape
    rng = np.random.default_rng(cfg.seed)
    size = max(2, int(round(cfg.fraction * n)))
    hits = np.zeros(p)
    for _ in range(cfg.n_subsamples):
        rows = rng.choice(n, size, replace=False)
        w = rng.uniform(cfg.jitter[0], cfg.jitter[1], p)
        q = solve_l1_linear(Z[rows] * w, y[rows], cfg.alpha, cfg.l1)
        hits += np.abs(q) > cfg.threshold
    return hits / cfg.n_subsamples


def rfe_ranking(values: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rank 1 is the last surviving column.

    Least squares on standardized columns is refit after every single
    elimination; equal magnitudes drop the later column first.
    """
    Z = _standardize(values)
    p = Z.shape[1]
    alive = list(range(p))
    rank = np.zeros(p, dtype=int)
    for r in range(p, 0, -1):
        if len(alive) == 1:
            rank[alive[0]] = 1
            break
        q = np.linalg.lstsq(Z[:, alive], target, rcond=None)[0]
        mag = np.abs(q)
        # smallest magnitude, ties to the larger canonical index
        worst = max(range(len(alive)), key=lambda i: (-mag[i], i))
        rank[alive.pop(worst)] = r
    return rank


def feature_report(design: DesignMatrix, cfg: StabilityConfig | None = None) -> FeatureReport:
    if len(design.columns) < 2:
        raise ValueError("feature diagnostics need at least two columns")
    variance = design.values.var(axis=0)
    return FeatureReport(list(design.names), variance, stability_scores(design.values, design.target, cfg),
                         rfe_ranking(design.values, design.target))
