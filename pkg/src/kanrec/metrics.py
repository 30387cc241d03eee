"""Top-K ranking metrics and continual-learning summaries."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


def rank_topk(scores, mask, K: int) -> np.ndarray:
    """Indices of the K best unmasked items, ties broken by ascending index."""
    if K < 1:
        raise ValueError("K must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.arange(scores.shape[0])
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype != bool:
            keep = np.ones(scores.shape[0], dtype=bool)
            keep[mask.astype(np.intp)] = False
        else:
            keep = ~mask
        candidates = candidates[keep]
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:K]]


def recall_at_k(topk, test_set, K: int) -> float:
    test = set(int(i) for i in test_set)
    if not test:
        raise ValueError("recall is undefined for an empty test set")
    hits = sum(1 for i in list(topk)[:K] if int(i) in test)
    return hits / len(test)


def ndcg_at_k(topk, test_set, K: int) -> float:
    test = set(int(i) for i in test_set)
    if not test:
        raise ValueError("ndcg is undefined for an empty test set")
    dcg = sum(1.0 / np.log2(r + 2) for r, i in enumerate(list(topk)[:K]) if int(i) in test)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(K, len(test))))
    return float(dcg / idcg)


def _batch_topk(scores, mask, K):
    """Row-wise ``rank_topk``; masked slots come back as -1."""
    S = np.array(scores, dtype=np.float64)
    S[mask] = -np.inf
    top = np.argsort(-S, axis=1, kind="stable")[:, :K]
    hidden = np.take_along_axis(mask, top, axis=1)
    top = np.where(hidden, -1, top)
    if top.shape[1] < K:
        top = np.pad(top, ((0, 0), (0, K - top.shape[1])), constant_values=-1)
    return top


@dataclass
class EvalReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users: int
    per_user: dict | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "n_users": self.n_users,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'K':>4}  {'Recall':>8}  {'NDCG':>8}"]
        for k in sorted(self.recall):
            lines.append(f"{k:>4}  {self.recall[k]:>8.4f}  {self.ndcg[k]:>8.4f}")
        lines.append(f"users evaluated: {self.n_users}")
        return "\n".join(lines)


def evaluate_scores(scores, mask, test, Ks=(10, 20), keep_per_user=False) -> EvalReport:
    """Mean Recall@K / NDCG@K over rows of ``test`` that have any positives.

    ``scores`` is dense (users x items); ``mask`` and ``test`` may be dense or
    sparse boolean matrices of the same shape.
    """
    mask = mask.toarray() if sp.issparse(mask) else np.asarray(mask)
    mask = mask.astype(bool)
    test = sp.csr_matrix(test)
    users = np.flatnonzero(np.diff(test.indptr) > 0)
    Ks = sorted(int(k) for k in Ks)
    rec = {k: np.zeros(len(users)) for k in Ks}
    nd = {k: np.zeros(len(users)) for k in Ks}
    if len(users):
        top = _batch_topk(np.asarray(scores)[users], mask[users], max(Ks))
        discounts = 1.0 / np.log2(np.arange(2, max(Ks) + 2))
        for row, u in enumerate(users):
            items = test.indices[test.indptr[u] : test.indptr[u + 1]]
            hits = np.isin(top[row], items) & (top[row] >= 0)
            for k in Ks:
                h = hits[:k]
                rec[k][row] = h.sum() / len(items)
                nd[k][row] = (h * discounts[:k]).sum() / discounts[: min(k, len(items))].sum()
    report = EvalReport(
        recall={k: float(rec[k].mean()) if len(users) else 0.0 for k in Ks},
        ndcg={k: float(nd[k].mean()) if len(users) else 0.0 for k in Ks},
        n_users=int(len(users)),
    )
    if keep_per_user:
        report.per_user = {"users": users, "recall": rec, "ndcg": nd}
    return report


def evaluate_model(model, inputs, mask, test, Ks=(10, 20), batch_size=1024) -> EvalReport:
    """Score ``inputs`` with ``model`` and evaluate against ``test``."""
    inputs = sp.csr_matrix(inputs)
    test = sp.csr_matrix(test)
    users = np.flatnonzero(np.diff(test.indptr) > 0)
    scores = np.zeros((inputs.shape[0], inputs.shape[1]))
    for start in range(0, len(users), batch_size):
        rows = users[start : start + batch_size]
        scores[rows], _ = model.predict(inputs[rows].toarray(), edge_stats=False)
    return evaluate_scores(scores, mask, test, Ks)


@dataclass
class ContinualReport:
    a: list[list[float]]
    la: float
    ra: float
    hmean: float

    def to_dict(self):
        return {"a": self.a, "la": self.la, "ra": self.ra, "hmean": self.hmean}

    def table(self) -> str:
        k = len(self.a)
        head = "after  " + "".join(f"{'D' + str(j + 1):>9}" for j in range(k))
        rows = [head]
        for i, row in enumerate(self.a):
            rows.append(f"{'D' + str(i + 1):<7}" + "".join(f"{v:>9.4f}" for v in row[: i + 1]))
        rows.append(f"LA {self.la:.4f}  RA {self.ra:.4f}  H-mean {self.hmean:.4f}")
        return "\n".join(rows)


def continual_metrics(a, k: int | None = None):
    """(LA, RA, H-mean) from a lower-triangular block-performance matrix.

    ``a[i][j]`` is the metric on block j+1 after training through block i+1.
    Entries above the diagonal are never read.
    """
    k = len(a) if k is None else k
    if k < 1 or len(a) < k:
        raise ValueError(f"matrix has {len(a)} rows, need {k}")
    for i in range(k):
        row = a[i]
        if len(row) < i + 1 or any(row[j] is None or not np.isfinite(row[j]) for j in range(i + 1)):
            raise ValueError(f"row {i + 1} of the performance matrix is incomplete")
    la = float(np.mean([a[i][i] for i in range(k)]))
    ra = float(np.mean([a[k - 1][j] for j in range(k)]))
    hmean = 0.0 if la + ra == 0 else 2.0 * la * ra / (la + ra)
    return la, ra, hmean


def continual_report(a) -> ContinualReport:
    tri = [[float(a[i][j]) for j in range(i + 1)] for i in range(len(a))]
    return ContinualReport(tri, *continual_metrics(tri))
