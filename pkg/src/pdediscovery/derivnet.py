"""Dense tanh networks with exact input derivatives of arbitrary order.

Input partials are obtained by pushing truncated multivariate Taylor
polynomials ("jets") through the network.  A jet over ``D`` variables and
order ``m`` is stored as an array of shape ``(K, ...)`` holding normalized
Taylor coefficients ``d^a f / a!`` for the ``K = C(m + D, D)`` multi-indices
``a`` in graded lexicographic order.  Affine layers act coefficientwise and
``tanh`` is composed through its polynomial-in-tanh derivative recurrence.

Parameters are flattened layer by layer, each layer contributing its weight
matrix (row-major, shape ``(out, in)``) followed by its bias vector.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

MAX_JET_ORDER = 8
FORMAT_VERSION = 1
_CHUNK = 8192


class ConfigurationError(ValueError):
    """Raised for requests outside the supported configuration."""


# ---------------------------------------------------------------------------
# multi-indices


@lru_cache(maxsize=None)
def multi_indices(dim: int, order: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices of ``dim`` variables with total order <= ``order``.

    Graded lexicographic: by total order, then lexicographically descending
    in the exponents, so ``(2, 0) < (1, 1) < (0, 2)`` within order two.
    """
    out = []
    for d in range(order + 1):
        for combo in combinations_with_replacement(range(dim), d):
            alpha = [0] * dim
            for v in combo:
                alpha[v] += 1
            out.append(tuple(alpha))
    return tuple(out)


@lru_cache(maxsize=None)
def _position(dim: int, order: int) -> dict[tuple[int, ...], int]:
    return {a: i for i, a in enumerate(multi_indices(dim, order))}


def index_of(alpha: Sequence[int], order: int) -> int:
    """Position of ``alpha`` in the graded ordering up to ``order``."""
    alpha = tuple(int(a) for a in alpha)
    try:
        return _position(len(alpha), order)[alpha]
    except KeyError:
        raise ConfigurationError(
            f"multi-index {alpha} exceeds propagated order {order}"
        ) from None


@lru_cache(maxsize=None)
def _factorials(dim: int, order: int) -> np.ndarray:
    return np.array(
        [math.prod(math.factorial(a) for a in alpha) for alpha in multi_indices(dim, order)],
        dtype=float,
    )


@lru_cache(maxsize=None)
def _product_table(dim: int, order: int) -> tuple[tuple[int, int, int], ...]:
    """Triples ``(i, j, k)`` with ``alpha_i + alpha_j = alpha_k``."""
    idx = multi_indices(dim, order)
    pos = _position(dim, order)
    table = []
    for i, a in enumerate(idx):
        for j, b in enumerate(idx):
            c = tuple(x + y for x, y in zip(a, b))
            k = pos.get(c)
            if k is not None:
                table.append((i, j, k))
    return tuple(table)


def _jet_mul(a: np.ndarray, b: np.ndarray, table, skip_const: bool = False) -> np.ndarray:
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for i, j, k in table:
        if skip_const and (i == 0 or j == 0):
            continue
        out[k] += a[i] * b[j]
    return out


@lru_cache(maxsize=None)
def _tanh_polys(order: int) -> tuple[np.ndarray, ...]:
    """Polynomials ``P_n`` with ``tanh^(n)(z) = P_n(tanh z)``, n = 0..order.

    ``P_{n+1}(T) = P_n'(T) (1 - T^2)``; coefficients in increasing powers.
    """
    polys = [np.array([0.0, 1.0])]
    one_minus_sq = np.array([1.0, 0.0, -1.0])
    for _ in range(order):
        deriv = np.polynomial.polynomial.polyder(polys[-1])
        polys.append(np.polynomial.polynomial.polymul(deriv, one_minus_sq))
    return tuple(polys)


def _tanh_taylor(t: np.ndarray, order: int) -> list[np.ndarray]:
    """Normalized Taylor coefficients ``tanh^(n)(z) / n!`` given ``t = tanh z``."""
    polys = _tanh_polys(order)
    return [np.polynomial.polynomial.polyval(t, polys[n]) / math.factorial(n) for n in range(order + 1)]


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True, eq=False)
class Mlp:
    """Feedforward network, tanh on hidden layers, affine output."""

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ConfigurationError(f"invalid layer_dims {self.layer_dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ConfigurationError("one weight matrix and bias per layer required")
        ws, bs = [], []
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=float).reshape(dims[l + 1], dims[l])
            b = np.array(b, dtype=float).reshape(dims[l + 1])
            w.flags.writeable = False
            b.flags.writeable = False
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], seed: int = 0) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in layer_dims)
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(dims, tuple(ws), tuple(bs), seed)

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_params(self, flat: np.ndarray) -> "Mlp":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        ws, bs, o = [], [], 0
        for w in self.weights:
            n_out, n_in = w.shape
            ws.append(flat[o:o + n_out * n_in].reshape(n_out, n_in))
            o += n_out * n_in
            bs.append(flat[o:o + n_out])
            o += n_out
        return Mlp(self.layer_dims, tuple(ws), tuple(bs), self.seed)

    def __call__(self, points) -> np.ndarray:
        return forward(self, points)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "layer_dims": list(self.layer_dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "activation": "tanh",
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        if "version" not in doc:
            raise ValueError("network document lacks a version field")
        if doc["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {doc['version']}")
        if doc.get("activation", "tanh") != "tanh":
            raise ValueError(f"unsupported activation {doc['activation']!r}")
        return cls(tuple(doc["layer_dims"]), tuple(np.array(w) for w in doc["weights"]),
                   tuple(np.array(b) for b in doc["biases"]), doc.get("seed"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mlp":
        return cls.from_dict(json.loads(text))


def _as_batch(mlp: Mlp, points) -> tuple[np.ndarray, bool]:
    x = np.asarray(points, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != mlp.n_inputs:
        raise ValueError(f"points must have {mlp.n_inputs} coordinates, got shape {np.shape(points)}")
    return x, single


def forward(mlp: Mlp, points) -> np.ndarray:
    """Evaluate the network at one point ``(D,)`` or a batch ``(n, D)``."""
    x, single = _as_batch(mlp, points)
    a = x
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = a @ w.T + b
        if l < last:
            a = np.tanh(a)
    return a[0] if single else a


def param_gradient(mlp: Mlp, points, adjoint) -> np.ndarray:
    """Reverse-mode gradient of ``sum(adjoint * mlp(points))`` w.r.t. parameters.

    ``adjoint`` holds per-sample output cotangents, shape ``(n, n_outputs)``.
    Samples are reduced in fixed chunk order.
    """
    x, _ = _as_batch(mlp, points)
    adj = np.asarray(adjoint, dtype=float).reshape(x.shape[0], mlp.n_outputs)
    grad = np.zeros(mlp.n_params)
    for s in range(0, x.shape[0], _CHUNK * 4):
        grad += _backprop(mlp, x[s:s + _CHUNK * 4], adj[s:s + _CHUNK * 4])[1]
    return grad


def _activations(mlp: Mlp, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    a = x
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = a @ w.T + b
        if l < last:
            a = np.tanh(a)
        acts.append(a)
    return acts


def _backward(mlp: Mlp, acts: list[np.ndarray], adj: np.ndarray) -> np.ndarray:
    g = adj
    parts = []
    for l in range(mlp.n_layers - 1, -1, -1):
        parts.append((g.T @ acts[l], g.sum(axis=0)))
        if l > 0:
            g = (g @ mlp.weights[l]) * (1.0 - acts[l] ** 2)
    flat = []
    for gw, gb in reversed(parts):
        flat.append(gw.ravel())
        flat.append(gb)
    return np.concatenate(flat)


def _backprop(mlp: Mlp, x: np.ndarray, adj: np.ndarray | None):
    acts = _activations(mlp, x)
    if adj is None:
        return acts[-1], None
    return acts[-1], _backward(mlp, acts, adj)


def output_and_param_gradient(mlp: Mlp, points, residual_fn) -> tuple[float, np.ndarray]:
    """Loss and parameter gradient for a loss of the network outputs.

    ``residual_fn(outputs) -> (loss, d loss / d outputs)`` is called once on
    the full batch output; activations are kept for the backward sweep.
    """
    x, _ = _as_batch(mlp, points)
    acts = _activations(mlp, x)
    loss, adj = residual_fn(acts[-1])
    adj = np.asarray(adj, dtype=float).reshape(x.shape[0], mlp.n_outputs)
    return loss, _backward(mlp, acts, adj)


# ---------------------------------------------------------------------------
# jets


class JetTable:
    """All input partials up to ``order`` of every output at a batch of points.

    ``values[p, j, i]`` is the partial of output ``j`` at point ``p`` for the
    ``i``-th multi-index of ``multi_indices(D, order)``.
    """

    def __init__(self, points: np.ndarray, order: int, values: np.ndarray):
        self.points = points
        self.order = order
        self.values = values

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.values.shape[1]

    @property
    def indices(self) -> tuple[tuple[int, ...], ...]:
        return multi_indices(self.dim, self.order)

    def __len__(self) -> int:
        """Entries per point: ``M * C(m + D, D)``."""
        return self.values.shape[1] * self.values.shape[2]

    def get(self, output: int, alpha: Sequence[int]) -> np.ndarray:
        if len(alpha) != self.dim:
            raise ValueError(f"multi-index must have {self.dim} entries")
        return self.values[:, output, index_of(alpha, self.order)]

    def at(self, p: int) -> dict[tuple[int, tuple[int, ...]], float]:
        """Entries of a single point as ``{(output, alpha): value}``."""
        return {
            (j, alpha): float(self.values[p, j, i])
            for j in range(self.n_outputs)
            for i, alpha in enumerate(self.indices)
        }


def _check_order(order: int) -> None:
    if order < 0:
        raise ConfigurationError("jet order must be non-negative")
    if order > MAX_JET_ORDER:
        raise ConfigurationError(f"jet order {order} exceeds the limit {MAX_JET_ORDER}")


def _seed_jet(x: np.ndarray, order: int) -> np.ndarray:
    n, dim = x.shape
    jet = np.zeros((len(multi_indices(dim, order)), n, dim))
    jet[0] = x
    if order >= 1:
        for i in range(dim):
            jet[1 + i][:, i] = 1.0
    return jet


def _jet_forward(mlp: Mlp, x: np.ndarray, order: int, tape: list | None = None) -> np.ndarray:
    dim = x.shape[1]
    table = _product_table(dim, order)
    jet = _seed_jet(x, order)
    last = mlp.n_layers - 1
    for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = jet @ w.T
        z[0] += b
        if l == last:
            if tape is not None:
                tape.append((jet,))
            return z
        t = np.tanh(z[0])
        coef = _tanh_taylor(t, order + (1 if tape is not None else 0))
        h = z.copy()
        h[0] = 0.0
        y = np.zeros_like(z)
        y[0] = coef[0]
        powers = [None, h]
        if order >= 1:
            y += coef[1] * h
        for n in range(2, order + 1):
            powers.append(_jet_mul(powers[-1], h, table, skip_const=True))
            y += coef[n] * powers[-1]
        if tape is not None:
            tape.append((jet, coef, powers))
        jet = y
    raise AssertionError("unreachable")


def input_jets(mlp: Mlp, points, order: int) -> JetTable:
    """All partials of every output w.r.t. the inputs, total order <= ``order``."""
    _check_order(order)
    x, _ = _as_batch(mlp, points)
    dim = x.shape[1]
    fact = _factorials(dim, order)
    values = np.empty((x.shape[0], mlp.n_outputs, len(fact)))
    for s in range(0, x.shape[0], _CHUNK):
        coeffs = _jet_forward(mlp, x[s:s + _CHUNK], order)
        values[s:s + _CHUNK] = np.transpose(coeffs, (1, 2, 0)) * fact
    # the zero multi-index is the plain forward pass, bit for bit; batched
    # matrix products over the jet axis may round differently
    values[:, :, 0] = forward(mlp, x)
    return JetTable(x, order, values)


def jet_param_gradient(mlp: Mlp, points, order: int, cotangent) -> np.ndarray:
    """Parameter gradient of ``sum(cotangent * input_jets(mlp, points, order).values)``.

    ``cotangent`` has the JetTable value shape ``(n, n_outputs, K)``; a scalar
    loss of jet entries is handled by passing its derivative w.r.t. each entry.
    """
    _check_order(order)
    x, _ = _as_batch(mlp, points)
    dim = x.shape[1]
    fact = _factorials(dim, order)
    cot = np.asarray(cotangent, dtype=float)
    if cot.shape != (x.shape[0], mlp.n_outputs, len(fact)):
        raise ConfigurationError(
            f"cotangent shape {cot.shape} does not match jets of order {order} "
            f"({x.shape[0]}, {mlp.n_outputs}, {len(fact)})"
        )
    grad = np.zeros(mlp.n_params)
    for s in range(0, x.shape[0], _CHUNK):
        seed = np.transpose(cot[s:s + _CHUNK], (2, 0, 1)) * fact[:, None, None]
        grad += _jet_backward(mlp, x[s:s + _CHUNK], order, seed)
    return grad


def jet_loss_and_gradient(mlp: Mlp, points, order: int, loss_fn) -> tuple[float, np.ndarray]:
    """``loss_fn(JetTable) -> (loss, cotangent)``; returns loss and parameter gradient."""
    jets = input_jets(mlp, points, order)
    loss, cot = loss_fn(jets)
    return float(loss), jet_param_gradient(mlp, jets.points, order, cot)


def _jet_backward(mlp: Mlp, x: np.ndarray, order: int, dout: np.ndarray) -> np.ndarray:
    dim = x.shape[1]
    table = _product_table(dim, order)
    tape: list = []
    _jet_forward(mlp, x, order, tape)
    last = mlp.n_layers - 1
    grads = []
    dz = dout
    for l in range(last, -1, -1):
        w = mlp.weights[l]
        jet_in = tape[l][0]
        gw = np.einsum("kno,kni->oi", dz, jet_in)
        gb = dz[0].sum(axis=0)
        grads.append((gw, gb))
        if l == 0:
            break
        dy = dz @ w
        # back through y = sum_n coef[n](z0) * h^n
        _, coef, powers = tape[l - 1]
        dz0 = np.zeros_like(dy[0])
        dz0 += dy[0] * coef[1]
        d_pow = [None] * (order + 1)
        for n in range(1, order + 1):
            dcoef = np.sum(dy * powers[n], axis=0)
            dz0 += dcoef * (n + 1) * coef[n + 1]
            d_pow[n] = coef[n] * dy
        for n in range(order, 1, -1):
            # powers[n] = powers[n-1] * h
            dp = d_pow[n]
            left = np.zeros_like(dp)
            right = np.zeros_like(dp)
            h = powers[1]
            prev = powers[n - 1]
            for i, j, k in table:
                if i == 0 or j == 0:
                    continue
                left[i] += dp[k] * h[j]
                right[j] += dp[k] * prev[i]
            d_pow[n - 1] = d_pow[n - 1] + left
            d_pow[1] = d_pow[1] + right
        dz = d_pow[1] if order >= 1 else np.zeros_like(dy)
        dz = dz.copy()
        dz[0] = dz0
    flat = []
    for gw, gb in reversed(grads):
        flat.append(gw.ravel())
        flat.append(gb)
    return np.concatenate(flat)
