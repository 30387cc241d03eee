"""CF-KAN autoencoder and its MLP control variant."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .kan_layer import KanLayer, layer_entropy, layer_l1, regularizer_edge_grad
from .spline import make_grid

KINDS = ("kan", "mlp")
LOSSES = ("mse", "bce")


@dataclass(frozen=True)
class ModelConfig:
    n_items: int
    latent: int = 512
    layers: int = 1
    kind: str = "kan"
    grids: int = 2
    order: int = 3
    activation: str = "silu"
    loss: str = "mse"
    lam: float = 0.0
    seed: int = 0
    grid_min: float = -1.0
    grid_max: float = 1.0

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        for name in ("n_items", "latent", "layers", "grids", "order"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not self.grid_min < self.grid_max:
            raise ValueError("grid_min must be < grid_max")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class MlpRecord:
    inputs: np.ndarray
    pre: np.ndarray
    outputs: np.ndarray


class MlpLayer:
    """Affine map followed by tanh (hidden) or identity (output)."""

    kind = "mlp"

    def __init__(self, weight, bias, nonlinearity="tanh"):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.n_out, self.n_in = self.weight.shape
        if self.bias.shape != (self.n_out,):
            raise ValueError("bias shape mismatch")
        if nonlinearity not in ("tanh", "identity"):
            raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
        self.nonlinearity = nonlinearity

    @classmethod
    def init_he(cls, n_in, n_out, nonlinearity="tanh", rng_seed=0):
        rng = np.random.default_rng(rng_seed)
        return cls(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)), np.zeros(n_out), nonlinearity)

    @property
    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    @property
    def n_params(self):
        return self.weight.size + self.bias.size

    def forward(self, X, edge_stats=False):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise ValueError(f"expected input of shape (batch, {self.n_in}), got {X.shape}")
        pre = X @ self.weight.T + self.bias
        out = np.tanh(pre) if self.nonlinearity == "tanh" else pre
        return out, MlpRecord(X, pre, out)

    def backward(self, rec, dL_dY, edge_coef=None):
        dY = np.asarray(dL_dY, dtype=np.float64)
        if self.nonlinearity == "tanh":
            dY = dY * (1.0 - rec.outputs**2)
        return dY @ self.weight, {"weight": dY.T @ rec.inputs, "bias": dY.sum(axis=0)}


def layer_widths(n_items: int, latent: int, layers: int) -> list[int]:
    """Encoder widths from n_items down to latent, linearly interpolated."""
    return [int(round(n_items + (latent - n_items) * i / layers)) for i in range(layers + 1)]


def kan_param_count(cfg: ModelConfig) -> int:
    w = layer_widths(cfg.n_items, cfg.latent, cfg.layers)
    per_edge = cfg.grids + cfg.order + 1
    return 2 * per_edge * sum(a * b for a, b in zip(w[:-1], w[1:]))


def _mlp_widths(n_items, hidden):
    return [n_items, *hidden, n_items]


def _mlp_count(widths):
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def matched_mlp_hidden(cfg: ModelConfig) -> list[int]:
    """Hidden widths for the MLP variant with the KAN variant's parameter count.

    Every non-boundary width of the symmetric stack is multiplied by a common
    factor, found by bisection and then rounded.
    """
    target = kan_param_count(cfg)
    enc = layer_widths(cfg.n_items, cfg.latent, cfg.layers)[1:]
    base = enc + enc[-2::-1]

    def hidden(s):
        return [max(1, int(round(s * w))) for w in base]

    lo, hi = 0.0, 1.0
    while _mlp_count(_mlp_widths(cfg.n_items, hidden(hi))) < target:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _mlp_count(_mlp_widths(cfg.n_items, hidden(mid))) < target:
            lo = mid
        else:
            hi = mid
    best = min((hidden(lo), hidden(hi)), key=lambda h: abs(_mlp_count(_mlp_widths(cfg.n_items, h)) - target))
    return best


class CfModel:
    """Encoder/decoder stack over item vectors.

    Both variants expose the same surface: ``predict``, ``loss``, ``gradients``
    and a flat ``parameters()`` dict keyed like ``"enc.0.scales"``.
    """

    def __init__(self, config: ModelConfig, encoder: list, decoder: list):
        self.config = config
        self.encoder = encoder
        self.decoder = decoder

    @property
    def kind(self):
        return self.config.kind

    @property
    def lam(self):
        return self.config.lam

    @property
    def n_items(self):
        return self.config.n_items

    @property
    def layers(self):
        return self.encoder + self.decoder

    def named_layers(self):
        for i, layer in enumerate(self.encoder):
            yield f"enc.{i}", layer
        for i, layer in enumerate(self.decoder):
            yield f"dec.{i}", layer

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{prefix}.{name}": arr for prefix, layer in self.named_layers() for name, arr in layer.params.items()}

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def copy_parameters(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_parameters(self, values):
        params = self.parameters()
        for k, v in values.items():
            params[k][...] = v

    def predict(self, U, edge_stats=None):
        """Scores (logits under BCE) for a batch of user vectors, plus layer records."""
        U = np.asarray(U, dtype=np.float64)
        if U.ndim != 2 or U.shape[1] != self.n_items:
            raise ValueError(f"expected user batch of shape (batch, {self.n_items}), got {U.shape}")
        if edge_stats is None:
            edge_stats = self.kind == "kan" and self.lam > 0
        records = []
        h = U
        for layer in self.layers:
            h, rec = layer.forward(h, edge_stats=edge_stats)
            records.append(rec)
        return h, records

    def reconstruction(self, U, scores):
        """Batch mean of the per-user loss summed over items, and its gradient."""
        U = np.asarray(U, dtype=np.float64)
        b = U.shape[0]
        if self.config.loss == "mse":
            resid = scores - U
            return float((resid**2).sum() / b), 2.0 * resid / b
        # binary cross-entropy with logits
        per = np.logaddexp(0.0, scores) - U * scores
        prob = 0.5 * (1.0 + np.tanh(0.5 * scores))
        return float(per.sum() / b), (prob - U) / b

    def regularization(self, records) -> float:
        if self.kind != "kan":
            return 0.0
        return float(sum(layer_l1(r) + layer_entropy(r) for r in records))

    def loss(self, U, scores, records):
        recon, _ = self.reconstruction(U, scores)
        if self.kind == "kan" and all(r.edge_outputs_l1 is not None for r in records):
            reg = self.regularization(records)
        elif self.kind == "kan" and self.lam > 0:
            raise ValueError("regularized loss needs records with edge statistics")
        else:
            reg = 0.0
        return recon + self.lam * reg, recon, reg

    def gradients(self, U, scores=None, records=None):
        """Exact gradients of the total loss for every parameter.

        Returns ``(grads, (total, recon, reg))``.
        """
        if scores is None or records is None:
            scores, records = self.predict(U)
        total, recon, reg = self.loss(U, scores, records)
        _, upstream = self.reconstruction(U, scores)
        use_reg = self.kind == "kan" and self.lam > 0
        grads = {}
        named = list(self.named_layers())
        for (prefix, layer), rec in zip(reversed(named), reversed(records)):
            edge_coef = self.lam * regularizer_edge_grad(rec.edge_outputs_l1) if use_reg else None
            upstream, g = layer.backward(rec, upstream, edge_coef=edge_coef)
            for name, arr in g.items():
                grads[f"{prefix}.{name}"] = arr
        return grads, (total, recon, reg)

    def with_config(self, **changes):
        return CfModel(replace(self.config, **changes), self.encoder, self.decoder)


def build_model(config: ModelConfig) -> CfModel:
    config.validate()
    seeds = np.random.SeedSequence([config.seed, 0]).spawn(2 * config.layers)
    if config.kind == "kan":
        grid = make_grid(config.grid_min, config.grid_max, config.grids, config.order)
        w = layer_widths(config.n_items, config.latent, config.layers)
        dims = list(zip(w[:-1], w[1:]))
        dims += [(b, a) for a, b in reversed(dims)]
        stack = [
            KanLayer.init_he(n_in, n_out, grid, config.activation, rng_seed=s)
            for (n_in, n_out), s in zip(dims, seeds)
        ]
    else:
        w = _mlp_widths(config.n_items, matched_mlp_hidden(config))
        n = len(w) - 1
        stack = [
            MlpLayer.init_he(a, b, "identity" if i == n - 1 else "tanh", rng_seed=s)
            for i, ((a, b), s) in enumerate(zip(zip(w[:-1], w[1:]), seeds))
        ]
    return CfModel(config, stack[: config.layers], stack[config.layers :])
