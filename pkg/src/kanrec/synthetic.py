"""Small synthetic interaction sets for tests and demos."""
from __future__ import annotations

import numpy as np

from .data import from_arrays


def random_interactions(n_users=50, n_items=30, density=0.2, seed=0, timestamps=True):
    rng = np.random.default_rng(seed)
    hit = rng.random((n_users, n_items)) < density
    # every user gets at least one item
    hit[np.arange(n_users), rng.integers(0, n_items, n_users)] = True
    u, i = np.nonzero(hit)
    ts = rng.integers(0, 10**6, len(u)) if timestamps else None
    return from_arrays(u, i, ts, [f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)])


def clustered_interactions(n_users=200, n_items=40, n_clusters=4, per_user=8, noise=0.1, seed=0):
    """Users prefer one item cluster; timestamps drift so later periods favour
    later clusters, which gives the continual split a distribution shift."""
    rng = np.random.default_rng(seed)
    clusters = np.array_split(np.arange(n_items), n_clusters)
    users, items, ts = [], [], []
    for u in range(n_users):
        c = u % n_clusters
        pool = clusters[c]
        k = min(per_user, len(pool))
        chosen = list(rng.choice(pool, size=k, replace=False))
        chosen += [int(x) for x in rng.choice(n_items, size=max(1, int(noise * per_user)), replace=False)]
        for it in dict.fromkeys(int(x) for x in chosen):
            users.append(u)
            items.append(it)
            ts.append(int(c * 1000 + rng.integers(0, 1500)))
    return from_arrays(users, items, ts, [f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)])


def cooccurrence_interactions(n_users=200, n_items=20, anchor=0, follower=1, n_other=1, seed=0):
    """Every other user holds both ``anchor`` and ``follower``; everyone also
    holds ``n_other`` random items drawn from the rest."""
    rng = np.random.default_rng(seed)
    others = np.array([i for i in range(n_items) if i not in (anchor, follower)])
    rows = []
    for u in range(n_users):
        picked = set(int(x) for x in rng.choice(others, size=n_other, replace=False))
        if u % 2 == 0:
            picked |= {anchor, follower}
        rows.extend((u, i) for i in sorted(picked))
    u, i = zip(*rows)
    ts = np.arange(len(u))
    return from_arrays(u, i, ts, [f"u{k}" for k in range(n_users)], [f"item{k}" for k in range(n_items)])


def write_interactions(dataset, path, delimiter=","):
    """Write ``user,item,rating,timestamp`` rows (rating is always 1)."""
    with open(path, "w") as fh:
        for r in range(dataset.n_interactions):
            cells = [dataset.user_ids[dataset.users[r]], dataset.item_ids[dataset.items[r]], 1]
            if dataset.timestamps is not None:
                cells.append(int(dataset.timestamps[r]))
            fh.write(delimiter.join(str(c) for c in cells) + "\n")
    return path
