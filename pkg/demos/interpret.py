"""Prune a trained KAN and explain one item. Item 1 is only ever held next to
item 0, so item 0 should come out as the strongest path."""
from pathlib import Path

from kanrec.data import split_static
from kanrec.interpret import compute_importance, explain_item, prune, target_subgraph, to_dot
from kanrec.model import ModelConfig, build_model
from kanrec.synthetic import cooccurrence_interactions
from kanrec.training import TrainConfig, train

ds = cooccurrence_interactions(seed=0)
split = split_static(ds, seed=0)
model = build_model(ModelConfig(n_items=ds.n_items, latent=4))
train(model, split, TrainConfig(batch_size=32, learning_rate=1e-2, max_epochs=100, patience=0))

reference = split.train_matrix().toarray()
graph = prune(compute_importance(model, reference, list(ds.item_ids)), tau1=0.1, tau2=0.09)
print(f"{graph.n_edges()} edges survive pruning")

target = ds.item_index["item1"]
others = [i for i in range(ds.n_items) if i != target]
for rank, (_, label, strength) in enumerate(explain_item(graph, target, max_paths=5, inputs=others), 1):
    print(f"{rank}. {label:8s} {strength:.4f}")

out = Path(__file__).with_name("item1.dot")
out.write_text(to_dot(target_subgraph(graph, target), hide_isolated=True))
print("graph written to", out)
