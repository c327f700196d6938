"""Unordered space-time samples ``(t, x_1..x_N, u_1..u_M)``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def default_space_names(n: int) -> tuple[str, ...]:
    if n <= 3:
        return ("x", "y", "z")[:n]
    return tuple(f"x{i + 1}" for i in range(n))


def default_output_names(m: int) -> tuple[str, ...]:
    if m == 1:
        return ("u",)
    return tuple(f"u{i + 1}" for i in range(m))


@dataclass
class Dataset:
    """Rows of time, space coordinates and observed values.

    No ordering of the rows is assumed.  ``space_names`` and
    ``output_names`` are display names used for library terms; the CSV
    header is always ``t,x1..xN,u1..uM``.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    space_names: tuple[str, ...] = field(default=None)
    output_names: tuple[str, ...] = field(default=None)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        n = self.t.shape[0]
        self.x = np.asarray(self.x, dtype=float).reshape(n, -1) if n else np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float).reshape(n, -1) if n else np.asarray(self.u, dtype=float)
        if self.x.ndim != 2:
            self.x = self.x.reshape(0, 0)
        if self.u.ndim != 2 or self.u.shape[1] < 1:
            raise ValueError("a dataset needs at least one observed output column")
        if self.x.shape[0] != n or self.u.shape[0] != n:
            raise ValueError("t, x and u must have the same number of rows")
        for name, arr in (("t", self.t), ("x", self.x), ("u", self.u)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in column group {name!r}")
        if self.space_names is None:
            self.space_names = default_space_names(self.n_space)
        if self.output_names is None:
            self.output_names = default_output_names(self.n_out)
        self.space_names = tuple(self.space_names)
        self.output_names = tuple(self.output_names)
        if len(self.space_names) != self.n_space or len(self.output_names) != self.n_out:
            raise ValueError("axis names do not match the column counts")

    @property
    def n_space(self) -> int:
        return self.x.shape[1]

    @property
    def n_out(self) -> int:
        return self.u.shape[1]

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        """Network inputs ``(t, x_1..x_N)``, shape ``(n, N + 1)``."""
        return np.column_stack([self.t, self.x])

    def subset(self, rows) -> "Dataset":
        return Dataset(self.t[rows], self.x[rows], self.u[rows], self.space_names, self.output_names)

    def canonical_order(self) -> np.ndarray:
        """Row permutation sorting by (t, x_1, .., u_M); independent of storage order."""
        keys = [self.u[:, j] for j in range(self.n_out - 1, -1, -1)]
        keys += [self.x[:, j] for j in range(self.n_space - 1, -1, -1)]
        keys.append(self.t)
        return np.lexsort(keys)

    def with_columns(self, t=None, x=None, u=None) -> "Dataset":
        return Dataset(self.t if t is None else t, self.x if x is None else x,
                       self.u if u is None else u, self.space_names, self.output_names)
