"""Interaction ingestion, split views and checkpoint files."""
from __future__ import annotations

import errno
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DataError(Exception):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingColumnError(DataError):
    pass


class CheckpointError(Exception):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class KindMismatch(CheckpointError):
    pass


TRAIN, VAL, TEST = 0, 1, 2


@dataclass(frozen=True)
class InteractionDataset:
    """Deduplicated implicit-feedback interactions with dense indices.

    ``users``/``items``/``timestamps`` are parallel arrays sorted by
    (user, item). ``timestamps`` is None when the source had none.
    """

    user_ids: tuple
    item_ids: tuple
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray | None = None

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def n_interactions(self):
        return len(self.users)

    @property
    def user_index(self):
        return {u: i for i, u in enumerate(self.user_ids)}

    @property
    def item_index(self):
        return {v: i for i, v in enumerate(self.item_ids)}

    def user_items(self, u):
        lo, hi = np.searchsorted(self.users, [u, u + 1])
        return self.items[lo:hi]

    def matrix(self, rows=None):
        """Binary user x item CSR matrix over all or the selected interactions."""
        rows = slice(None) if rows is None else rows
        u, i = self.users[rows], self.items[rows]
        m = sp.csr_matrix((np.ones(len(u)), (u, i)), shape=(self.n_users, self.n_items))
        m.sum_duplicates()
        return m

    def summary(self):
        density = self.n_interactions / max(1, self.n_users * self.n_items)
        return {
            "users": self.n_users,
            "items": self.n_items,
            "interactions": self.n_interactions,
            "density": density,
            "timestamps": self.timestamps is not None,
        }


def from_arrays(users, items, timestamps=None, user_ids=None, item_ids=None) -> InteractionDataset:
    """Build a dataset from already-dense integer indices."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    n_u = int(users.max()) + 1 if user_ids is None else len(user_ids)
    n_i = int(items.max()) + 1 if item_ids is None else len(item_ids)
    ts = None if timestamps is None else np.asarray(timestamps, dtype=np.int64)
    order = np.lexsort((ts if ts is not None else np.zeros_like(users), items, users))
    users, items = users[order], items[order]
    ts = None if ts is None else ts[order]
    first = np.ones(len(users), dtype=bool)
    first[1:] = (users[1:] != users[:-1]) | (items[1:] != items[:-1])
    return InteractionDataset(
        tuple(range(n_u)) if user_ids is None else tuple(user_ids),
        tuple(range(n_i)) if item_ids is None else tuple(item_ids),
        users[first],
        items[first],
        None if ts is None else ts[first],
    )


def _resolve_column(spec, header, name):
    if spec is None:
        return None
    if isinstance(spec, int):
        return spec
    if isinstance(spec, str) and spec.isdigit():
        return int(spec)
    if header is None:
        raise MissingColumnError(f"column {name}={spec!r} given by name but the file has no header")
    # RecBole-style headers carry a type suffix, e.g. "user_id:token"
    bare = [h.split(":")[0] for h in header]
    for names in (header, bare):
        if spec in names:
            return names.index(spec)
    raise MissingColumnError(f"column {spec!r} not found in header {header}")


def load_interactions(
    path,
    fmt: str = "csv",
    delimiter: str | None = None,
    columns: dict | None = None,
    header: bool | None = None,
    min_rating: float | None = None,
    core: int = 0,
) -> InteractionDataset:
    """Read user/item[/rating][/timestamp] rows from a delimited text file.

    ``columns`` maps ``user``, ``item``, ``rating``, ``timestamp`` to positions
    or header names; defaults to positions 0..3 where present. MovieLens
    ``::`` files work with ``delimiter="::"``. Rows with a rating below
    ``min_rating`` are dropped; duplicate pairs keep the earliest timestamp.
    ``core > 0`` applies an iterative k-core filter to users and items.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(errno.ENOENT, "file not found", str(path))
    if fmt not in ("csv", "tsv"):
        raise ValueError(f"format must be csv or tsv, got {fmt!r}")
    delim = delimiter if delimiter is not None else ("," if fmt == "csv" else "\t")

    with open(path, encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()

    first = 0
    while first < len(lines) and not lines[first].strip():
        first += 1
    head = None
    if header is None:
        if first < len(lines):
            cells = [c.strip() for c in lines[first].split(delim)]
            header = len(cells) >= 2 and not _looks_numeric(cells[0]) and not _looks_numeric(cells[1])
            if header and columns is None:
                # bare ids can be non-numeric; only treat as header when names look like names
                header = any(c.split(":")[0].lower() in _KNOWN_NAMES for c in cells)
        else:
            header = False
    if header:
        head = [c.strip() for c in lines[first].split(delim)]
        first += 1

    columns = dict(columns or {})
    if head is not None and not columns:
        bare = [h.split(":")[0].lower() for h in head]
        for key, aliases in _ALIASES.items():
            for a in aliases:
                if a in bare:
                    columns[key] = bare.index(a)
                    break
    cu = _resolve_column(columns.get("user", 0), head, "user")
    ci = _resolve_column(columns.get("item", 1), head, "item")
    cr = _resolve_column(columns.get("rating", 2 if "rating" not in columns else None), head, "rating")
    ct = _resolve_column(columns.get("timestamp", 3 if "timestamp" not in columns else None), head, "timestamp")

    raw_u, raw_i, raw_t = [], [], []
    any_ts = None
    for lineno in range(first, len(lines)):
        line = lines[lineno]
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(delim)]
        n = len(cells)
        if cu >= n or ci >= n:
            raise ParseError(f"expected at least {max(cu, ci) + 1} fields, got {n}", lineno + 1)
        if cr is not None and cr < n and min_rating is not None:
            try:
                rating = float(cells[cr])
            except ValueError:
                raise ParseError(f"bad rating {cells[cr]!r}", lineno + 1) from None
            if rating < min_rating:
                continue
        has_ts = ct is not None and ct < n and cells[ct] != ""
        if any_ts is None:
            any_ts = has_ts
        elif any_ts != has_ts:
            raise ParseError("timestamps must be present on every row or on none", lineno + 1)
        if has_ts:
            try:
                raw_t.append(int(float(cells[ct])))
            except ValueError:
                raise ParseError(f"bad timestamp {cells[ct]!r}", lineno + 1) from None
        raw_u.append(cells[cu])
        raw_i.append(cells[ci])

    if not raw_u:
        raise DataError(f"no interactions in {path}")
    if core > 0:
        keep = _k_core(raw_u, raw_i, core)
        raw_u = [x for x, k in zip(raw_u, keep) if k]
        raw_i = [x for x, k in zip(raw_i, keep) if k]
        raw_t = [x for x, k in zip(raw_t, keep) if k] if raw_t else raw_t
        if not raw_u:
            raise DataError(f"{core}-core filter removed every interaction")

    user_ids = tuple(dict.fromkeys(raw_u))
    item_ids = tuple(dict.fromkeys(raw_i))
    uidx = {u: i for i, u in enumerate(user_ids)}
    iidx = {v: i for i, v in enumerate(item_ids)}
    users = np.fromiter((uidx[u] for u in raw_u), dtype=np.int64, count=len(raw_u))
    items = np.fromiter((iidx[v] for v in raw_i), dtype=np.int64, count=len(raw_i))
    ts = np.asarray(raw_t, dtype=np.int64) if raw_t else None
    return from_arrays(users, items, ts, user_ids, item_ids)


_ALIASES = {
    "user": ("user", "user_id", "userid", "uid"),
    "item": ("item", "item_id", "itemid", "movie_id", "movieid", "iid"),
    "rating": ("rating", "score"),
    "timestamp": ("timestamp", "time", "ts"),
}
_KNOWN_NAMES = {a for aliases in _ALIASES.values() for a in aliases}


def _looks_numeric(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _k_core(users, items, k):
    keep = np.ones(len(users), dtype=bool)
    u = np.unique(users, return_inverse=True)[1]
    i = np.unique(items, return_inverse=True)[1]
    while True:
        uc = np.bincount(u[keep], minlength=u.max() + 1)
        ic = np.bincount(i[keep], minlength=i.max() + 1)
        new = keep & (uc[u] >= k) & (ic[i] >= k)
        if new.sum() == keep.sum():
            return new
        keep = new


@dataclass(frozen=True)
class SplitView:
    """Per-user train/validation/test partition of a subset of interactions.

    ``rows`` indexes into the dataset's interaction arrays and ``part`` holds
    TRAIN, VAL or TEST for each of them.
    """

    dataset: InteractionDataset
    rows: np.ndarray
    part: np.ndarray

    def _select(self, which):
        return self.rows[self.part == which]

    def train_matrix(self):
        return self.dataset.matrix(self._select(TRAIN))

    def val_matrix(self):
        return self.dataset.matrix(self._select(VAL))

    def test_matrix(self):
        return self.dataset.matrix(self._select(TEST))

    def counts(self):
        return {name: int((self.part == p).sum()) for name, p in (("train", TRAIN), ("val", VAL), ("test", TEST))}

    def manifest(self):
        ds = self.dataset
        names = {TRAIN: "train", VAL: "val", TEST: "test"}
        out = {"train": [], "val": [], "test": []}
        for r, p in zip(self.rows, self.part):
            out[names[int(p)]].append([ds.user_ids[ds.users[r]], ds.item_ids[ds.items[r]]])
        return out


def largest_remainder(n: int, ratios) -> list[int]:
    raw = np.asarray(ratios, dtype=np.float64) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts.tolist()


def _check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    return ratios


def _split_rows(dataset, rows, ratios, rng):
    part = np.full(len(rows), TRAIN, dtype=np.int8)
    users = dataset.users[rows]
    bounds = np.flatnonzero(np.diff(users)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(rows)]):
        n = hi - lo
        if n < 3:
            continue
        n_tr, n_va, _ = largest_remainder(n, ratios)
        perm = lo + rng.permutation(n)
        part[perm[n_tr : n_tr + n_va]] = VAL
        part[perm[n_tr + n_va :]] = TEST
    return part


def split_static(dataset: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitView:
    """Random per-user split; users with fewer than 3 interactions stay in train."""
    ratios = _check_ratios(ratios)
    rows = np.arange(dataset.n_interactions)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    return SplitView(dataset, rows, _split_rows(dataset, rows, ratios, rng))


@dataclass(frozen=True)
class ContinualBlocks:
    base: SplitView
    increments: tuple

    @property
    def all(self):
        return (self.base, *self.increments)


def split_continual(
    dataset: InteractionDataset, base_fraction=0.5, n_blocks=5, inner_ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> ContinualBlocks:
    """Time-ordered base block plus equal-count incremental blocks."""
    if dataset.timestamps is None:
        raise DataError("continual split needs timestamps")
    if not 0 < base_fraction < 1:
        raise ValueError("base_fraction must be in (0, 1)")
    if n_blocks < 1:
        raise ValueError("n_blocks must be positive")
    inner_ratios = _check_ratios(inner_ratios)
    order = np.lexsort((dataset.items, dataset.users, dataset.timestamps))
    n_base = int(round(dataset.n_interactions * base_fraction))
    chunks = [order[:n_base], *np.array_split(order[n_base:], n_blocks)]
    seeds = np.random.SeedSequence([seed, 3]).spawn(len(chunks))
    views = []
    for chunk, s in zip(chunks, seeds):
        rows = np.sort(chunk)  # back to (user, item) order for per-user grouping
        views.append(SplitView(dataset, rows, _split_rows(dataset, rows, inner_ratios, np.random.default_rng(s))))
    return ContinualBlocks(views[0], tuple(views[1:]))


def save_manifest(view_or_blocks, path):
    if isinstance(view_or_blocks, ContinualBlocks):
        doc = {"blocks": [v.manifest() for v in view_or_blocks.all]}
    else:
        doc = view_or_blocks.manifest()
    Path(path).write_text(json.dumps(doc))


# checkpoint layout: MAGIC | u32 version | u32 header length | JSON header |
# little-endian float64 parameter blocks | sha256 of everything before it
MAGIC = b"KANRECCK"
VERSION = 1


def save_checkpoint(model, path, extra: dict | None = None):
    params = model.parameters()
    entries, blobs, offset = [], [], 0
    for name, arr in params.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    layer_info = []
    for prefix, layer in model.named_layers():
        info = {"name": prefix, "kind": layer.kind, "n_in": layer.n_in, "n_out": layer.n_out}
        if layer.kind == "kan":
            g = layer.grid
            info.update(grid=[g.range_min, g.range_max, g.G, g.k], activation=layer.base_activation)
        else:
            info.update(nonlinearity=layer.nonlinearity)
        layer_info.append(info)
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "layers": layer_info,
        "params": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body + digest)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint_header(path):
    header, _ = _read_checkpoint(path)
    return header


def _read_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32 or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file or truncated")
    version, hlen = struct.unpack("<II", data[len(MAGIC) : len(MAGIC) + 8])
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start : start + hlen])
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    return header, body[start + hlen :]


def load_checkpoint(path, expected_kind: str | None = None):
    """Rebuild a model from a checkpoint; returns ``(model, extra)``."""
    from .model import ModelConfig, build_model

    header, payload = _read_checkpoint(path)
    if expected_kind is not None and header["kind"] != expected_kind:
        raise KindMismatch(f"{path}: checkpoint holds a {header['kind']} model, expected {expected_kind}")
    model = build_model(ModelConfig(**header["config"]))
    params = model.parameters()
    if set(params) != {e["name"] for e in header["params"]}:
        raise CorruptCheckpoint(f"{path}: parameter set does not match the model layout")
    for e in header["params"]:
        arr = np.frombuffer(payload, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        if list(params[e["name"]].shape) != e["shape"]:
            raise CorruptCheckpoint(f"{path}: shape mismatch for {e['name']}")
        params[e["name"]][...] = arr.reshape(e["shape"])
    return model, header.get("extra", {})
