"""Candidate library: partial-derivative terms and their monomials.

With ``N`` space variables, ``M`` outputs and maximal derivative order ``m``
there are ``M * (1 + sum_{i=1..m} C(i + N - 1, N - 1))`` derivative terms;
monomials of degree 1..k in those number ``sum_{i=1..k} C(i + P - 1, P - 1)``
for ``P`` derivative terms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .dataset import default_output_names, default_space_names
from .derivnet import JetTable, Mlp, index_of, input_jets, multi_indices

DEFAULT_MAX_TERMS = 10**6


class LibrarySizeError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DerivativeTerm:
    """``d^alpha u_output`` with ``alpha`` over the space variables only."""

    output: int
    alpha: tuple[int, ...]

    @property
    def order(self) -> int:
        return sum(self.alpha)


@dataclass(frozen=True)
class Term:
    """Monomial ``prod factor^power``; factors kept in canonical library order."""

    factors: tuple[tuple[DerivativeTerm, int], ...]
    name: str = field(default="", compare=False)

    @property
    def degree(self) -> int:
        return sum(p for _, p in self.factors)

    @property
    def max_order(self) -> int:
        return max((d.order for d, _ in self.factors), default=0)

    def __str__(self) -> str:
        return self.name or "1"


@dataclass(frozen=True)
class CoordinateFeature:
    """Raw input coordinate used as a feature; axis 0 is time."""

    axis: int
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class LibrarySpec:
    m: int
    k: int
    n_space: int = 1
    n_out: int = 1
    include_coords: bool = False
    include_bias: bool = False
    space_names: tuple[str, ...] | None = None
    output_names: tuple[str, ...] | None = None
    time_name: str = "t"
    max_terms: int = DEFAULT_MAX_TERMS

    def __post_init__(self):
        if self.m < 0 or self.k < 1:
            raise ValueError("library needs m >= 0 and k >= 1")
        if self.n_space < 1 and self.m >= 1:
            raise ValueError("spatial derivatives need at least one space variable")
        if self.space_names is None:
            object.__setattr__(self, "space_names", default_space_names(self.n_space))
        if self.output_names is None:
            object.__setattr__(self, "output_names", default_output_names(self.n_out))

    def derivative_name(self, d: DerivativeTerm) -> str:
        base = self.output_names[d.output]
        if d.order == 0:
            return base
        return base + "_" + "".join(self.space_names[i] * a for i, a in enumerate(d.alpha))

    def term_name(self, factors) -> str:
        if not factors:
            return "1"
        parts = []
        for d, p in factors:
            parts.append(self.derivative_name(d) + (f"^{p}" if p > 1 else ""))
        return "*".join(parts)

    def target_name(self, output: int = 0) -> str:
        return f"{self.output_names[output]}_{self.time_name}"

    def columns(self) -> list:
        cols: list = []
        if self.include_bias:
            cols.append(Term((), "1"))
        cols.extend(enumerate_monomials(enumerate_derivative_terms(self.n_space, self.n_out, self.m), self.k,
                                        spec=self))
        if self.include_coords:
            cols.append(CoordinateFeature(0, self.time_name))
            cols.extend(CoordinateFeature(i + 1, s) for i, s in enumerate(self.space_names))
        return cols


def count_derivative_terms(n_space: int, n_out: int, m: int) -> int:
    return n_out * (1 + sum(math.comb(i + n_space - 1, n_space - 1) for i in range(1, m + 1)))


def count_monomials(n_terms: int, k: int) -> int:
    return sum(math.comb(i + n_terms - 1, n_terms - 1) for i in range(1, k + 1))


def enumerate_derivative_terms(n_space: int, n_out: int, m: int) -> list[DerivativeTerm]:
    """By order, then output, then graded-lexicographic multi-index."""
    if m >= 1 and n_space < 1:
        raise ValueError("spatial derivatives need at least one space variable")
    all_alpha = multi_indices(n_space, m) if n_space else ((),)
    out = []
    for order in range(m + 1):
        for j in range(n_out):
            out.extend(DerivativeTerm(j, a) for a in all_alpha if sum(a) == order)
    return out


def enumerate_monomials(derivs: Sequence[DerivativeTerm], k: int, spec: LibrarySpec | None = None,
                        max_terms: int | None = None) -> list[Term]:
    """All monomials of degree 1..k, by degree then lexicographic factor indices."""
    if k < 1:
        raise ValueError("monomial degree k must be >= 1")
    cap = max_terms if max_terms is not None else (spec.max_terms if spec else DEFAULT_MAX_TERMS)
    total = count_monomials(len(derivs), k)
    if total > cap:
        raise LibrarySizeError(f"library of {total} terms exceeds the cap of {cap}")
    if spec is None:
        n_space = max((len(d.alpha) for d in derivs), default=1)
        n_out = max((d.output for d in derivs), default=0) + 1
        spec = LibrarySpec(m=max((d.order for d in derivs), default=0), k=k, n_space=max(n_space, 1), n_out=n_out)
    terms = []
    for deg in range(1, k + 1):
        for combo in combinations_with_replacement(range(len(derivs)), deg):
            factors = []
            for i in combo:
                if factors and factors[-1][0] == derivs[i]:
                    factors[-1] = (derivs[i], factors[-1][1] + 1)
                else:
                    factors.append((derivs[i], 1))
            factors = tuple(factors)
            terms.append(Term(factors, spec.term_name(factors)))
    return terms


def parse_term(name: str, spec: LibrarySpec) -> Term:
    """Inverse of the canonical term name for the given library naming."""
    if name == "1":
        return Term((), "1")
    derivs = enumerate_derivative_terms(spec.n_space, spec.n_out, spec.m)
    by_name = {spec.derivative_name(d): d for d in derivs}
    order = {d: i for i, d in enumerate(derivs)}
    factors: dict[DerivativeTerm, int] = {}
    for part in name.split("*"):
        base, _, power = part.partition("^")
        if base not in by_name:
            raise ValueError(f"unknown factor {base!r} in term {name!r}")
        d = by_name[base]
        factors[d] = factors.get(d, 0) + (int(power) if power else 1)
    ordered = tuple(sorted(factors.items(), key=lambda kv: order[kv[0]]))
    return Term(ordered, spec.term_name(ordered))


def parse_column(name: str, spec: LibrarySpec):
    coords = {spec.time_name: 0, **{s: i + 1 for i, s in enumerate(spec.space_names)}}
    if name in coords and name not in {spec.derivative_name(d) for d in enumerate_derivative_terms(
            spec.n_space, spec.n_out, 0)}:
        return CoordinateFeature(coords[name], name)
    return parse_term(name, spec)


# ---------------------------------------------------------------------------
# design matrix


@dataclass
class DesignMatrix:
    columns: list
    names: list[str]
    values: np.ndarray
    target: np.ndarray
    target_name: str
    points: np.ndarray
    spec: LibrarySpec
    means: np.ndarray = None
    stds: np.ndarray = None
    n_excluded: int = 0

    def __post_init__(self):
        if self.values.shape != (self.target.shape[0], len(self.columns)):
            raise ValueError("design values do not match columns and target")
        if self.means is None:
            self.means = self.values.mean(axis=0) if len(self.target) else np.zeros(len(self.columns))
        if self.stds is None:
            self.stds = self.values.std(axis=0) if len(self.target) else np.ones(len(self.columns))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def select(self, names: Sequence[str]) -> "DesignMatrix":
        idx = [self.names.index(n) for n in names]
        return DesignMatrix([self.columns[i] for i in idx], [self.names[i] for i in idx], self.values[:, idx],
                            self.target, self.target_name, self.points, self.spec, self.means[idx],
                            self.stds[idx], self.n_excluded)

    def rows(self, idx) -> "DesignMatrix":
        return DesignMatrix(self.columns, self.names, self.values[idx], self.target[idx], self.target_name,
                            self.points[idx], self.spec, n_excluded=self.n_excluded)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.names + [self.target_name])
            for row, y in zip(self.values, self.target):
                w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def _derivative_values(jets: JetTable, d: DerivativeTerm) -> np.ndarray:
    return jets.values[:, d.output, index_of((0,) + tuple(d.alpha), jets.order)]


def evaluate_columns(columns, jets: JetTable, points: np.ndarray | None = None) -> np.ndarray:
    """Column values from surrogate jets; products of jet entries raised to powers."""
    n = jets.values.shape[0]
    pts = jets.points if points is None else points
    out = np.empty((n, len(columns)))
    cache: dict[DerivativeTerm, np.ndarray] = {}
    for c, col in enumerate(columns):
        if isinstance(col, CoordinateFeature):
            out[:, c] = pts[:, col.axis]
            continue
        v = np.ones(n)
        for d, p in col.factors:
            if d not in cache:
                cache[d] = _derivative_values(jets, d)
            v = v * cache[d] if p == 1 else v * cache[d] ** p
        out[:, c] = v
    return out


def design_from_jets(jets: JetTable, spec: LibrarySpec, target_output: int = 0,
                     columns: list | None = None) -> DesignMatrix:
    if jets.order < max(spec.m, 1):
        raise ValueError(f"jets of order {jets.order} cannot supply library order {spec.m}")
    cols = spec.columns() if columns is None else columns
    values = evaluate_columns(cols, jets)
    target = jets.values[:, target_output, index_of((1,) + (0,) * spec.n_space, jets.order)]
    ok = np.all(np.isfinite(values), axis=1) & np.isfinite(target)
    n_bad = int((~ok).sum())
    if n_bad:
        values, target = values[ok], target[ok]
    return DesignMatrix(cols, [str(c) for c in cols], values, target, spec.target_name(target_output),
                        jets.points[ok], spec, n_excluded=n_bad)


def build_design_matrix(model: Mlp, points, spec: LibrarySpec, target_output: int = 0) -> DesignMatrix:
    """Evaluate every library column and the target ``u_t`` at ``points``.

    Rows with a non-finite entry are dropped; the count is kept in
    ``n_excluded``.
    """
    if model.n_inputs != spec.n_space + 1:
        raise ValueError(f"surrogate takes {model.n_inputs} inputs, library expects {spec.n_space + 1}")
    jets = input_jets(model, points, max(spec.m, 1))
    return design_from_jets(jets, spec, target_output)
