"""Compare analytic gradients with central differences on a tiny model."""
import numpy as np

from kanrec.model import ModelConfig, build_model

model = build_model(ModelConfig(n_items=6, latent=3, layers=2, lam=0.01, loss="bce", seed=1))
U = (np.random.default_rng(0).random((4, 6)) < 0.5).astype(float)
grads, (total, recon, reg) = model.gradients(U)
print(f"loss {total:.6f} = recon {recon:.6f} + 0.01 * reg {reg:.6f}")


def loss():
    return model.loss(U, *model.predict(U))[0]


h = 1e-5
for name, arr in model.parameters().items():
    worst = 0.0
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = loss()
        arr[idx] = old - h
        down = loss()
        arr[idx] = old
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - grads[name][idx]) / max(abs(fd), abs(grads[name][idx]), 1e-6))
    print(f"{name:14s} {arr.size:4d} entries, worst relative error {worst:.1e}")
