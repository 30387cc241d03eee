"""Adam training loop, continual fine-tuning and parameter-delta tracing."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .metrics import continual_report, evaluate_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    clip_norm: float | None = None
    finetune_epochs: int | None = None
    eval_k: int = 20

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")

    def to_dict(self):
        return asdict(self)


class Adam:
    """Bias-corrected Adam updating the given arrays in place."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.reset()

    def reset(self):
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads, max_norm):
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class DeltaTrace:
    """Snapshots of |theta_t - theta_{t-n}| for one tracked parameter slice."""

    every: int
    steps: list = field(default_factory=list)
    deltas: list = field(default_factory=list)

    def locality(self, rel=0.1) -> float:
        """Mean over snapshots of the fraction of entries above ``rel`` x snapshot max."""
        if not self.deltas:
            return 0.0
        fracs = []
        for d in self.deltas:
            top = d.max()
            fracs.append(float((d > rel * top).mean()) if top > 0 else 0.0)
        return float(np.mean(fracs))

    def export_csv(self, directory, prefix="delta"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for step, d in zip(self.steps, self.deltas):
            p = directory / f"{prefix}_step{step:07d}.csv"
            with open(p, "w", newline="") as fh:
                csv.writer(fh).writerows(d.tolist())
            paths.append(p)
        return paths


def default_tracked_slice(model, rows=10, cols=10, coef_index=0):
    """First encoder layer: c_{coef_index} of each edge for KAN, the weights for MLP."""
    layer = model.encoder[0]
    r, c = min(rows, layer.n_out), min(cols, layer.n_in)
    if model.kind == "kan":
        return "enc.0.coeffs", (slice(0, r), slice(0, c), coef_index)
    return "enc.0.weight", (slice(0, r), slice(0, c))


class DeltaTracker:
    """Step callback recording parameter deltas every ``every`` optimizer steps."""

    def __init__(self, model, param_name=None, index=None, every=1, rows=10, cols=10, coef_index=0):
        if param_name is None:
            param_name, index = default_tracked_slice(model, rows, cols, coef_index)
        self.array = model.parameters()[param_name]
        self.param_name = param_name
        self.index = index
        self.trace = DeltaTrace(every)
        self.count = 0
        self.last = self.array[index].copy()

    def __call__(self, step):
        self.count += 1
        if self.count % self.trace.every:
            return
        now = self.array[self.index].copy()
        self.trace.steps.append(self.count)
        self.trace.deltas.append(np.abs(now - self.last))
        self.last = now


def track_deltas(model, tracked_slice=None, every_n_steps=1, **kw):
    name, index = tracked_slice if tracked_slice is not None else (None, None)
    return DeltaTracker(model, name, index, every_n_steps, **kw)


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val: float | None
    steps: int


def _rows_with_data(m):
    return np.flatnonzero(np.diff(m.indptr) > 0)


def train(model, split, config: TrainConfig, on_step=None, max_epochs=None, on_best=None) -> TrainResult:
    """Fit ``model`` on ``split``'s train view.

    Validation R@K (train items masked) is computed each epoch when the split
    has validation interactions; the best-scoring parameters are restored at
    the end. ``patience=0`` disables early stopping.
    """
    train_m = sp.csr_matrix(split.train_matrix())
    val_m = split.val_matrix()
    return fit_matrix(model, train_m, val_m, config, on_step=on_step, max_epochs=max_epochs, on_best=on_best)


def fit_matrix(model, train_m, val_m, config: TrainConfig, on_step=None, max_epochs=None, on_best=None):
    train_m = sp.csr_matrix(train_m)
    users = _rows_with_data(train_m)
    has_val = val_m is not None and val_m.nnz > 0
    params = model.parameters()
    opt = Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    epochs = config.max_epochs if max_epochs is None else max_epochs
    K = config.eval_k

    history = []
    best_val, best_epoch, best_params, stale, steps = -np.inf, 0, None, 0, 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(users)
        tot = rec = reg = 0.0
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            U = train_m[rows].toarray()
            grads, (t, r, g) = model.gradients(U)
            if not np.isfinite(t):
                raise TrainingDiverged(epoch)
            if config.clip_norm:
                clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
            steps += 1
            if on_step is not None:
                on_step(steps)
            w = len(rows) / len(order)
            tot, rec, reg = tot + w * t, rec + w * r, reg + w * g
        for p in params.values():
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged(epoch, "non-finite parameters")
        row = {"epoch": epoch, "loss": tot, "recon": rec, "reg": reg}
        if has_val:
            report = evaluate_model(model, train_m, train_m, val_m, Ks=(K,))
            row[f"val_recall@{K}"] = report.recall[K]
            row[f"val_ndcg@{K}"] = report.ndcg[K]
            if report.recall[K] > best_val:
                best_val, best_epoch, stale = report.recall[K], epoch, 0
                best_params = model.copy_parameters()
                if on_best is not None:
                    on_best(epoch, model)
            else:
                stale += 1
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
        if has_val and config.patience and stale >= config.patience:
            break
    if best_params is not None:
        model.load_parameters(best_params)
    return TrainResult(history, best_epoch if has_val else len(history), best_val if has_val else None, steps)


def write_history(history, path):
    keys = list(dict.fromkeys(k for row in history for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(history)


@dataclass
class ContinualResult:
    a: list
    report: object
    histories: list
    trace: DeltaTrace | None = None


def continual_train(model, blocks, config: TrainConfig, K=None, tracker=None) -> ContinualResult:
    """Train on the base block, then fine-tune block by block.

    After block i the model is scored on the test view of each block j <= i,
    using that block's train interactions as input and masking its train and
    validation items. Adam moments are reset for every block.
    """
    K = config.eval_k if K is None else K
    views = list(blocks.all) if hasattr(blocks, "all") else list(blocks)
    base, increments = views[0], views[1:]
    on_step = tracker if tracker is not None else None
    histories = [train(model, base, config, on_step=on_step).history]
    a = []
    ft_epochs = config.finetune_epochs or config.max_epochs
    for i, view in enumerate(increments):
        histories.append(train(model, view, config, on_step=on_step, max_epochs=ft_epochs).history)
        row = []
        for past in increments[: i + 1]:
            inputs = past.train_matrix()
            mask = (inputs + past.val_matrix()) > 0
            row.append(evaluate_model(model, inputs, mask, past.test_matrix(), Ks=(K,)).recall[K])
        a.append(row)
        log.info("after block %d: %s", i + 1, row)
    report = continual_report(a) if a else None
    return ContinualResult(a, report, histories, tracker.trace if tracker is not None else None)
