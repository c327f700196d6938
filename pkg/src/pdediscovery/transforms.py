"""Per-axis shift/scale of the inputs and its effect on discovered PDEs.

Under ``tau = (t - t0) / s_t`` and ``xi_i = (x_i - x0_i) / s_i`` every
derivative in ``x_i`` picks up a factor ``1 / s_i``; a model fitted in
``(tau, xi)`` is restated in ``(t, x)`` by rescaling each coefficient.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset


class UnsupportedTransformError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Diagonal affine map of ``(t, x_1..x_N)``; index 0 is time."""

    shifts: np.ndarray
    scales: np.ndarray
    names: tuple[str, ...] = ()
    constant_axes: tuple[int, ...] = ()

    def __post_init__(self):
        shifts = np.asarray(self.shifts, dtype=float).reshape(-1)
        scales = np.asarray(self.scales, dtype=float).reshape(-1)
        if shifts.shape != scales.shape:
            raise ValueError("shifts and scales must have equal length")
        if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
            raise ValueError("scales must be positive and finite")
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "scales", scales)
        names = tuple(self.names) or ("t",) + tuple(f"x{i + 1}" for i in range(len(shifts) - 1))
        object.__setattr__(self, "names", names)

    @classmethod
    def identity(cls, n_inputs: int, names: Sequence[str] = ()) -> "AffineTransform":
        return cls(np.zeros(n_inputs), np.ones(n_inputs), tuple(names))

    @property
    def n_inputs(self) -> int:
        return self.shifts.size

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.shifts == 0) and np.all(self.scales == 1))

    def jacobian(self) -> np.ndarray:
        """``d(tau, xi) / d(t, x)``, a diagonal matrix."""
        return np.diag(1.0 / self.scales)

    def apply_points(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.shifts) / self.scales

    def invert_points(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) * self.scales + self.shifts

    def apply(self, data: Dataset) -> Dataset:
        z = self.apply_points(data.inputs)
        return data.with_columns(t=z[:, 0], x=z[:, 1:])

    def invert(self, data: Dataset) -> Dataset:
        z = self.invert_points(data.inputs)
        return data.with_columns(t=z[:, 0], x=z[:, 1:])

    def to_dict(self) -> dict:
        return {"shifts": self.shifts.tolist(), "scales": self.scales.tolist(), "names": list(self.names),
                "constant_axes": list(self.constant_axes)}

    @classmethod
    def from_dict(cls, doc: dict) -> "AffineTransform":
        return cls(np.array(doc["shifts"]), np.array(doc["scales"]), tuple(doc.get("names", ())),
                   tuple(doc.get("constant_axes", ())))


@dataclass(frozen=True, eq=False)
class LinearTransform:
    """General affine map ``z = matrix @ (v - shifts)``; apply/invert only."""

    shifts: np.ndarray
    matrix: np.ndarray

    def apply_points(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.shifts) @ np.asarray(self.matrix).T

    def invert_points(self, points) -> np.ndarray:
        return np.linalg.solve(self.matrix, np.asarray(points, dtype=float).T).T + self.shifts

    def diagonal(self) -> AffineTransform:
        m = np.asarray(self.matrix, dtype=float)
        if np.any(m - np.diag(np.diag(m))):
            raise UnsupportedTransformError("only diagonal (per-axis) transforms can be pushed through a model")
        return AffineTransform(self.shifts, 1.0 / np.diag(m))


def fit_shift_scale(data: Dataset) -> AffineTransform:
    """Per-axis mean and population standard deviation of ``(t, x)``.

    An axis with a single distinct value keeps scale 1 and is listed in
    ``constant_axes``.
    """
    z = data.inputs
    shifts = z.mean(axis=0)
    scales = z.std(axis=0)
    constant = []
    for i in range(z.shape[1]):
        if np.unique(z[:, i]).size < 2 or scales[i] == 0:
            scales[i] = 1.0
            constant.append(i)
    if constant:
        warnings.warn(f"constant input axes {constant}: scale fixed to 1", stacklevel=2)
    names = ("t",) + tuple(data.space_names)
    return AffineTransform(shifts, scales, names, tuple(constant))


def _as_diagonal(transform) -> AffineTransform:
    if isinstance(transform, AffineTransform):
        return transform
    if isinstance(transform, LinearTransform):
        return transform.diagonal()
    raise UnsupportedTransformError(f"unsupported transform type {type(transform).__name__}")


def derivative_factor(term, transform, direction: str = "to_physical") -> float:
    """Scalar relating physical and transformed derivatives of a term.

    ``term`` is a space multi-index (length N), a full multi-index
    including time (length N + 1), or a library ``Term``.  With
    ``direction="to_physical"`` the result ``f`` satisfies
    ``d_x^a u = f * d_xi^a u``, i.e. ``f = prod 1 / s_i^{a_i}``;
    ``"to_transformed"`` gives the reciprocal.
    """
    tr = _as_diagonal(transform)
    space_scales = tr.scales[1:]
    if hasattr(term, "factors"):
        f = 1.0
        for (deriv, power) in term.factors:
            f *= _alpha_factor(deriv.alpha, tr.scales, space_scales) ** power
    else:
        f = _alpha_factor(tuple(term), tr.scales, space_scales)
    if direction == "to_physical":
        return f
    if direction == "to_transformed":
        return 1.0 / f
    raise ValueError(f"unknown direction {direction!r}")


def _alpha_factor(alpha, scales, space_scales) -> float:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size == space_scales.size:
        return float(np.prod(space_scales ** -alpha))
    if alpha.size == scales.size:
        return float(np.prod(scales ** -alpha))
    raise ValueError(f"multi-index of length {alpha.size} does not fit a transform of {scales.size} axes")


def coefficient_factor(term, transform) -> float:
    """Multiplier taking a transformed-coordinate coefficient to physical coordinates.

    ``u_tau = sum c_i T_i(xi)`` becomes ``u_t = sum c_i * F_i * T_i(x)`` with
    ``F_i = prod(s^a) / s_t``.
    """
    if not hasattr(term, "factors"):
        raise UnsupportedTransformError(f"cannot back-transform non-derivative column {term!r}")
    tr = _as_diagonal(transform)
    return 1.0 / (tr.scales[0] * derivative_factor(term, tr))


def back_transform_model(model, transform=None):
    """Restate a transformed-coordinate linear model in physical coordinates."""
    if model.coordinates != "transformed":
        raise ValueError("model is not flagged as fitted in transformed coordinates")
    tr = _as_diagonal(transform if transform is not None else model.transform)
    factors = np.array([coefficient_factor(t, tr) for t in model.terms])
    return dataclasses.replace(model, coefficients=model.coefficients * factors, coordinates="physical",
                               transform=tr, residual=None)


def forward_transform_model(model, transform=None):
    """Inverse of :func:`back_transform_model` (pure algebra)."""
    if model.coordinates != "physical":
        raise ValueError("model is not flagged as physical-coordinate")
    tr = _as_diagonal(transform if transform is not None else model.transform)
    factors = np.array([coefficient_factor(t, tr) for t in model.terms])
    return dataclasses.replace(model, coefficients=model.coefficients / factors, coordinates="transformed",
                               transform=tr, residual=None)
