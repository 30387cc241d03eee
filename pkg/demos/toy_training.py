"""Train a KAN autoencoder and its parameter-matched MLP on clustered toy data."""
from kanrec.data import split_static
from kanrec.metrics import evaluate_model
from kanrec.model import ModelConfig, build_model
from kanrec.synthetic import clustered_interactions
from kanrec.training import TrainConfig, train

ds = clustered_interactions(n_users=300, n_items=40, per_user=8, seed=0)
split = split_static(ds, seed=0)
print(ds.summary())

for kind in ("kan", "mlp"):
    model = build_model(ModelConfig(n_items=ds.n_items, latent=16, kind=kind))
    res = train(model, split, TrainConfig(batch_size=32, learning_rate=3e-3, max_epochs=60))
    tr = split.train_matrix()
    rep = evaluate_model(model, tr, (tr + split.val_matrix()) > 0, split.test_matrix())
    print(f"\n{kind.upper()}: {model.n_params} parameters, best epoch {res.best_epoch}")
    print(rep.table())
