"""Edge importance, threshold pruning and path-based explanations for KAN models.

Node layers are numbered 0 (input items) .. n_layers (output items). Edge
layer ``l`` connects node layer ``l`` to ``l + 1`` and its score matrix has
shape (n_out, n_in). Pruning only flips flags; scores are never modified.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class NotKanModel(TypeError):
    pass


@dataclass
class ImportanceGraph:
    scores: list
    edge_pruned: list
    node_active: list
    input_labels: list
    output_labels: list
    thresholds: tuple | None = field(default=None)

    @property
    def n_layers(self):
        return len(self.scores)

    def layer_sizes(self):
        return [self.scores[0].shape[1]] + [s.shape[0] for s in self.scores]

    def surviving(self, l):
        """Score matrix of edge layer ``l`` with pruned edges zeroed."""
        return np.where(self.edge_pruned[l], 0.0, self.scores[l])

    def n_edges(self):
        return int(sum((~p).sum() for p in self.edge_pruned))

    def to_dict(self):
        return {
            "layer_sizes": self.layer_sizes(),
            "scores": [s.tolist() for s in self.scores],
            "edge_pruned": [p.astype(int).tolist() for p in self.edge_pruned],
            "node_active": [a.astype(int).tolist() for a in self.node_active],
            "input_labels": list(self.input_labels),
            "output_labels": list(self.output_labels),
            "thresholds": None if self.thresholds is None else list(self.thresholds),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scores=[np.asarray(s, dtype=np.float64) for s in d["scores"]],
            edge_pruned=[np.asarray(p, dtype=bool) for p in d["edge_pruned"]],
            node_active=[np.asarray(a, dtype=bool) for a in d["node_active"]],
            input_labels=list(d["input_labels"]),
            output_labels=list(d["output_labels"]),
            thresholds=None if d.get("thresholds") is None else tuple(d["thresholds"]),
        )

    def __eq__(self, other):
        if not isinstance(other, ImportanceGraph):
            return NotImplemented
        same = lambda xs, ys: len(xs) == len(ys) and all(np.array_equal(x, y) for x, y in zip(xs, ys))
        return (
            same(self.scores, other.scores)
            and same(self.edge_pruned, other.edge_pruned)
            and same(self.node_active, other.node_active)
            and list(self.input_labels) == list(other.input_labels)
            and list(self.output_labels) == list(other.output_labels)
            and self.thresholds == other.thresholds
        )


def graph_from_scores(scores, input_labels=None, output_labels=None) -> ImportanceGraph:
    scores = [np.asarray(s, dtype=np.float64) for s in scores]
    sizes = [scores[0].shape[1]] + [s.shape[0] for s in scores]
    return ImportanceGraph(
        scores=scores,
        edge_pruned=[np.zeros(s.shape, dtype=bool) for s in scores],
        node_active=[np.ones(n, dtype=bool) for n in sizes],
        input_labels=list(range(sizes[0])) if input_labels is None else list(input_labels),
        output_labels=list(range(sizes[-1])) if output_labels is None else list(output_labels),
    )


def compute_importance(model, reference_batch, item_labels=None, batch_size=512) -> ImportanceGraph:
    """Batch-mean |phi_qp| for every edge of every layer over ``reference_batch``."""
    if model.kind != "kan":
        raise NotKanModel("importance scores are defined for KAN models only")
    X = np.asarray(reference_batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("reference batch must be a non-empty matrix")
    totals = [np.zeros((layer.n_out, layer.n_in)) for layer in model.layers]
    for start in range(0, X.shape[0], batch_size):
        h = X[start : start + batch_size]
        n = h.shape[0]
        for l, layer in enumerate(model.layers):
            h, rec = layer.forward(h, edge_stats=True)
            totals[l] += rec.edge_outputs_l1 * n
    scores = [t / X.shape[0] for t in totals]
    return graph_from_scores(scores, item_labels, item_labels)


def prune(graph: ImportanceGraph, tau1: float, tau2: float) -> ImportanceGraph:
    """Flag edges scoring below ``tau2`` and hidden nodes whose best incoming
    and best outgoing edges both score below ``tau1``.

    Hidden nodes left without any surviving incident edge are dropped too;
    every edge touching a dropped node is pruned.
    """
    if tau1 < 0 or tau2 < 0:
        raise ValueError("thresholds must be non-negative")
    L = graph.n_layers
    pruned = [s < tau2 for s in graph.scores]
    active = [np.ones(s, dtype=bool) for s in graph.layer_sizes()]
    for l in range(1, L):
        best_in = graph.scores[l - 1].max(axis=1)
        best_out = graph.scores[l].max(axis=0)
        weak = (best_in < tau1) & (best_out < tau1)
        isolated = pruned[l - 1].all(axis=1) & pruned[l].all(axis=0)
        active[l] = ~(weak | isolated)
    for l in range(L):
        pruned[l] = pruned[l] | ~active[l + 1][:, None] | ~active[l][None, :]
    return replace(graph, edge_pruned=pruned, node_active=active, thresholds=(float(tau1), float(tau2)))


def _path_mass(graph, target):
    """Summed product of surviving edge scores from each input to ``target``,
    and a flag for whether any surviving path exists."""
    vec = np.zeros(graph.layer_sizes()[-1])
    vec[target] = 1.0
    reach = vec > 0
    for l in reversed(range(graph.n_layers)):
        alive = ~graph.edge_pruned[l]
        vec = graph.surviving(l).T @ vec
        reach = (alive.T.astype(np.int64) @ reach.astype(np.int64)) > 0
    return vec, reach


def explain_item(graph: ImportanceGraph, target_item: int, max_paths: int = 10, inputs=None):
    """Input items ranked by total strength of surviving paths to ``target_item``.

    Path strength is the product of edge scores along the path. ``inputs``
    optionally restricts the candidates, e.g. to one user's history. Returns
    ``[(input_index, label, strength), ...]``; empty when nothing survives.
    """
    n_out = graph.layer_sizes()[-1]
    if not 0 <= target_item < n_out:
        raise IndexError(f"target item {target_item} outside output layer of size {n_out}")
    mass, reach = _path_mass(graph, target_item)
    candidates = np.flatnonzero(reach)
    if inputs is not None:
        candidates = np.intersect1d(candidates, np.asarray(list(inputs), dtype=np.int64))
    order = candidates[np.argsort(-mass[candidates], kind="stable")]
    return [(int(p), graph.input_labels[p], float(mass[p])) for p in order[:max_paths]]


def target_subgraph(graph: ImportanceGraph, target_item: int) -> ImportanceGraph:
    """Prune every edge that is not on a surviving path into ``target_item``."""
    sizes = graph.layer_sizes()
    down = [None] * len(sizes)  # nodes that can reach the target
    down[-1] = np.zeros(sizes[-1], dtype=bool)
    down[-1][target_item] = True
    for l in reversed(range(graph.n_layers)):
        down[l] = ((~graph.edge_pruned[l]) & down[l + 1][:, None]).any(axis=0)
    up = [None] * len(sizes)  # nodes reachable from an input
    up[0] = np.ones(sizes[0], dtype=bool)
    for l in range(graph.n_layers):
        up[l + 1] = ((~graph.edge_pruned[l]) & up[l][None, :]).any(axis=1)
    pruned = [
        graph.edge_pruned[l] | ~(down[l + 1] & up[l + 1])[:, None] | ~(down[l] & up[l])[None, :]
        for l in range(graph.n_layers)
    ]
    return replace(graph, edge_pruned=pruned)


def _node_id(l, j, L):
    if l == 0:
        return f"in_{j}"
    if l == L:
        return f"out_{j}"
    return f"h{l}_{j}"


def _quote(s):
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: ImportanceGraph, max_width: float = 6.0, hide_isolated: bool = False) -> str:
    """Graphviz source: one node per surviving unit, edge pen width ~ score.

    Input and output items are always drawn unless ``hide_isolated`` drops
    the ones without a surviving edge.
    """
    L = graph.n_layers
    sizes = graph.layer_sizes()
    touched_in = (~graph.edge_pruned[0]).any(axis=0)
    touched_out = (~graph.edge_pruned[-1]).any(axis=1)
    top = max((float(s.max()) for s in graph.scores if s.size), default=0.0)
    lines = ["digraph kan {", "  rankdir=LR;", "  node [shape=circle, fontsize=10];"]
    for l, n in enumerate(sizes):
        lines.append(f"  subgraph cluster_{l} {{ style=invis;")
        for j in range(n):
            if l == 0:
                if hide_isolated and not touched_in[j]:
                    continue
                lines.append(f"    {_node_id(l, j, L)} [shape=box, label={_quote(graph.input_labels[j])}];")
            elif l == L:
                if hide_isolated and not touched_out[j]:
                    continue
                lines.append(f"    {_node_id(l, j, L)} [shape=box, label={_quote(graph.output_labels[j])}];")
            elif graph.node_active[l][j]:
                lines.append(f'    {_node_id(l, j, L)} [label="", width=0.2];')
        lines.append("  }")
    for l in range(L):
        qs, ps = np.nonzero(~graph.edge_pruned[l])
        for q, p in zip(qs, ps):
            s = float(graph.scores[l][q, p])
            width = max_width * s / top if top > 0 else 1.0
            lines.append(
                f'  {_node_id(l, p, L)} -> {_node_id(l + 1, q, L)} [penwidth={width:.4f}, tooltip="{s:.6g}"];'
            )
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(graph: ImportanceGraph, path, format: str = "dot"):
    fmt = format.lower()
    if fmt == "dot":
        text = to_dot(graph)
    elif fmt == "json":
        text = json.dumps(graph.to_dict())
    else:
        raise ValueError(f"unknown graph format {format!r}")
    Path(path).write_text(text)
    return Path(path)


def load_graph(path) -> ImportanceGraph:
    return ImportanceGraph.from_dict(json.loads(Path(path).read_text()))
