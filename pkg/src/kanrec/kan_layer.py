"""A single KAN layer: one learnable activation per (output, input) edge.

Edge ``(q, p)`` computes ``scales[q, p] * (base(x_p) + spline_qp(x_p))`` where
``spline_qp`` is a B-spline with coefficients ``coeffs[q, p, :]`` on the layer's
shared grid. Node ``q`` sums its incoming edges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spline import SplineGrid, basis_values_and_derivatives

# per-chunk element budget for (batch, n_out, n_in) edge tensors
_EDGE_CHUNK = 1 << 22


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _tanh_grad(x):
    return 1.0 - np.tanh(x) ** 2


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(np.float64)


ACTIVATIONS = {
    "silu": (_silu, _silu_grad),
    "elu": (_elu, _elu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
}


def activation(name: str):
    try:
        return ACTIVATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown base activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass
class LayerActivationRecord:
    """Forward cache for one layer.

    ``edge_outputs_l1`` is the batch mean of ``|phi_qp(x_bp)|`` and is only
    filled in when the forward pass was asked for edge statistics.
    """

    inputs: np.ndarray
    base: np.ndarray
    base_grad: np.ndarray
    bases: np.ndarray
    bases_grad: np.ndarray
    outputs: np.ndarray
    edge_outputs_l1: np.ndarray | None = None


class KanLayer:
    kind = "kan"

    def __init__(self, n_in: int, n_out: int, grid: SplineGrid, coeffs, scales, base_activation="silu"):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        scales = np.asarray(scales, dtype=np.float64)
        if coeffs.shape != (n_out, n_in, grid.n_basis):
            raise ValueError(f"coeffs shape {coeffs.shape} != {(n_out, n_in, grid.n_basis)}")
        if scales.shape != (n_out, n_in):
            raise ValueError(f"scales shape {scales.shape} != {(n_out, n_in)}")
        activation(base_activation)
        self.n_in = n_in
        self.n_out = n_out
        self.grid = grid
        self.coeffs = coeffs
        self.scales = scales
        self.base_activation = base_activation.lower()

    @classmethod
    def init_he(cls, n_in, n_out, grid: SplineGrid, base_activation="silu", rng_seed=0):
        if n_in < 1 or n_out < 1:
            raise ValueError("layer dimensions must be positive")
        rng = np.random.default_rng(rng_seed)
        std = np.sqrt(2.0 / n_in)
        scales = rng.normal(0.0, std, size=(n_out, n_in))
        coeffs = rng.normal(0.0, std / np.sqrt(grid.n_basis), size=(n_out, n_in, grid.n_basis))
        return cls(n_in, n_out, grid, coeffs, scales, base_activation)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"scales": self.scales, "coeffs": self.coeffs}

    @property
    def n_params(self) -> int:
        return self.scales.size + self.coeffs.size

    def _check_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise ValueError(f"expected input of shape (batch, {self.n_in}), got {X.shape}")
        return X

    def _chunks(self, batch):
        step = max(1, _EDGE_CHUNK // max(1, self.n_in * self.n_out))
        for start in range(0, batch, step):
            yield slice(start, min(batch, start + step))

    def _edge_parts(self, rec, rows):
        """Per-edge ``base + spline`` and ``base' + spline'`` for a slice of the batch."""
        spline = np.einsum("bpi,qpi->bqp", rec.bases[rows], self.coeffs)
        dspline = np.einsum("bpi,qpi->bqp", rec.bases_grad[rows], self.coeffs)
        inner = rec.base[rows, None, :] + spline
        dinner = rec.base_grad[rows, None, :] + dspline
        return inner, dinner

    def edge_outputs(self, rec: LayerActivationRecord) -> np.ndarray:
        """phi_qp(x_bp) for every sample and edge, shape (batch, n_out, n_in)."""
        out = np.empty((rec.inputs.shape[0], self.n_out, self.n_in))
        for rows in self._chunks(rec.inputs.shape[0]):
            inner, _ = self._edge_parts(rec, rows)
            out[rows] = self.scales * inner
        return out

    def forward(self, X, edge_stats: bool = True):
        X = self._check_input(X)
        sigma, dsigma = activation(self.base_activation)
        bases, dbases = basis_values_and_derivatives(self.grid, X)
        base = sigma(X)
        b, nb = X.shape[0], self.grid.n_basis
        weighted = (self.scales[..., None] * self.coeffs).reshape(self.n_out, self.n_in * nb)
        Y = base @ self.scales.T + bases.reshape(b, self.n_in * nb) @ weighted.T
        rec = LayerActivationRecord(X, base, dsigma(X), bases, dbases, Y)
        if edge_stats:
            rec.edge_outputs_l1 = self.edge_l1(rec)
        return Y, rec

    def edge_l1(self, rec: LayerActivationRecord) -> np.ndarray:
        b = rec.inputs.shape[0]
        total = np.zeros((self.n_out, self.n_in))
        for rows in self._chunks(b):
            inner, _ = self._edge_parts(rec, rows)
            total += np.abs(self.scales * inner).sum(axis=0)
        return total / b

    def backward(self, rec: LayerActivationRecord, dL_dY, edge_coef=None):
        """Gradients of a scalar loss.

        ``dL_dY`` is the upstream gradient of the outputs. ``edge_coef``, if
        given, is ``dL/d|phi_qp|_1`` for the batch-mean edge magnitudes and adds
        the regularization path.
        """
        dY = np.asarray(dL_dY, dtype=np.float64)
        b = rec.inputs.shape[0]
        if dY.shape != (b, self.n_out):
            raise ValueError(f"expected upstream gradient of shape {(b, self.n_out)}, got {dY.shape}")
        nb = self.grid.n_basis
        flat_bases = rec.bases.reshape(b, self.n_in * nb)
        M = (dY.T @ flat_bases).reshape(self.n_out, self.n_in, nb)
        d_scales = dY.T @ rec.base + np.einsum("qpi,qpi->qp", M, self.coeffs)
        d_coeffs = M * self.scales[..., None]
        weighted = (self.scales[..., None] * self.coeffs).reshape(self.n_out, self.n_in * nb)
        dX = rec.base_grad * (dY @ self.scales)
        dX += np.einsum("bpi,bpi->bp", (dY @ weighted).reshape(b, self.n_in, nb), rec.bases_grad)

        if edge_coef is not None:
            edge_coef = np.asarray(edge_coef, dtype=np.float64)
            for rows in self._chunks(b):
                inner, dinner = self._edge_parts(rec, rows)
                phi = self.scales * inner
                g = edge_coef * np.sign(phi) / b
                d_scales += (g * inner).sum(axis=0)
                gw = g * self.scales
                d_coeffs += np.einsum("bqp,bpi->qpi", gw, rec.bases[rows])
                dX[rows] += (gw * dinner).sum(axis=1)

        return dX, {"scales": d_scales, "coeffs": d_coeffs}


def layer_l1(rec: LayerActivationRecord) -> float:
    if rec.edge_outputs_l1 is None:
        raise ValueError("record was produced without edge statistics")
    return float(rec.edge_outputs_l1.sum())


def _entropy(a: np.ndarray) -> float:
    total = a.sum()
    if total <= 0:
        return 0.0
    p = a[a > 0] / total
    return float(-(p * np.log(p)).sum())


def layer_entropy(rec: LayerActivationRecord) -> float:
    if rec.edge_outputs_l1 is None:
        raise ValueError("record was produced without edge statistics")
    return _entropy(rec.edge_outputs_l1)


def regularizer_edge_grad(a: np.ndarray) -> np.ndarray:
    """d(l1 + entropy)/d a_e for edge magnitudes ``a``.

    With p = a / sum(a) and S the entropy, dS/da_e = -(log p_e + S) / sum(a).
    Zero-magnitude edges get only the l1 term.
    """
    total = a.sum()
    grad = np.ones_like(a)
    if total <= 0:
        return grad
    S = _entropy(a)
    pos = a > 0
    grad[pos] += -(np.log(a[pos] / total) + S) / total
    return grad
