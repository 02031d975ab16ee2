"""Graph data model, dataset ingestion, normalization and homophily statistics."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import SparseMatrix, from_coo

log = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "val", "test")

# validation sizes of the standard citation/webpage splits, keyed by node count
STANDARD_VAL_SIZES = {2708: 1083, 3327: 1330, 19717: 7886, 7600: 3040, 2277: 910, 5201: 2080}


class BundleParseError(ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class MissingFileError(BundleParseError):
    pass


class MalformedLineError(BundleParseError):
    pass


class LabelRangeError(BundleParseError):
    pass


class UnknownSplitError(BundleParseError):
    pass


class DuplicateEdgeError(BundleParseError):
    pass


class SelfLoopError(BundleParseError):
    pass


class UndefinedValueError(ValueError):
    """Statistic is undefined for this input (e.g. a ratio over zero edges)."""


@dataclass(frozen=True)
class GraphBundle:
    """Undirected attributed graph with labels and a node split.

    ``edges`` holds each undirected edge once as ``(min, max)``; ``split`` holds
    one of ``"train"``, ``"val"``, ``"test"`` per node.
    """

    n: int
    edges: np.ndarray
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    split: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges = np.sort(edges, axis=1)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        object.__setattr__(self, "split", np.asarray(self.split, dtype="<U5"))
        if self.x.ndim != 2 or self.x.shape[0] != self.n:
            raise ValueError("feature matrix must have one row per node")
        if self.y.shape != (self.n,) or self.split.shape != (self.n,):
            raise ValueError("labels and split must have one entry per node")
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loops are not stored")
            keys = edges[:, 0] * self.n + edges[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate undirected edge")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("label out of range")
        if not np.all(np.isin(self.split, SPLIT_TAGS)):
            raise ValueError("unknown split tag")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def mask(self, tag: str) -> np.ndarray:
        return self.split == tag

    def index(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Normalized propagation matrix plus the undirected edge id of each entry.

    ``edge_id[k]`` is the row of ``GraphBundle.edges`` that stored entry ``k``
    came from, or ``-1`` for a self-loop.
    """

    matrix: SparseMatrix
    mode: str
    edge_id: np.ndarray


# ---------------------------------------------------------------------------
# loaders


def _read_lines(path: Path):
    if not path.is_file():
        raise MissingFileError(path, None, "file not found")
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            yield lineno, line, raw


def load_bundle(directory) -> GraphBundle:
    """Load ``edges.tsv``, ``features.csv``, ``labels.csv`` and ``splits.csv``."""
    d = Path(directory)
    if not d.is_dir():
        raise MissingFileError(d, None, "dataset directory not found")

    feats = []
    fpath = d / "features.csv"
    arity = None
    for lineno, line, _ in _read_lines(fpath):
        if not line:
            continue
        try:
            row = [float(t) for t in line.split(",")]
        except ValueError:
            raise MalformedLineError(fpath, lineno, "non-numeric feature") from None
        if not all(np.isfinite(row)):
            raise MalformedLineError(fpath, lineno, "non-finite feature")
        if arity is None:
            arity = len(row)
        elif len(row) != arity:
            raise MalformedLineError(fpath, lineno, f"expected {arity} features, got {len(row)}")
        feats.append(row)
    n = len(feats)
    x = np.array(feats, dtype=np.float64).reshape(n, arity or 0)

    lpath = d / "labels.csv"
    declared_c = None
    labels = {}
    if lpath.is_file():
        with open(lpath) as fh:
            first = fh.readline().strip()
        if first.startswith("#") and "num_classes=" in first:
            declared_c = int(first.split("num_classes=", 1)[1].split()[0])
    for lineno, line, _ in _read_lines(lpath):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedLineError(lpath, lineno, "expected 'node,label'")
        try:
            node, lab = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedLineError(lpath, lineno, "non-integer field") from None
        if not 0 <= node < n:
            raise MalformedLineError(lpath, lineno, f"node {node} out of range")
        if node in labels:
            raise MalformedLineError(lpath, lineno, f"node {node} labeled twice")
        if lab < 0 or (declared_c is not None and lab >= declared_c):
            raise LabelRangeError(lpath, lineno, f"label {lab} outside [0, {declared_c})")
        labels[node] = lab
    if len(labels) != n:
        missing = sorted(set(range(n)) - labels.keys())[:5]
        raise MalformedLineError(lpath, None, f"nodes without labels, e.g. {missing}")
    y = np.array([labels[i] for i in range(n)], dtype=np.int64)
    num_classes = declared_c if declared_c is not None else (int(y.max()) + 1 if n else 0)

    spath = d / "splits.csv"
    split = np.full(n, "test", dtype="<U5")
    seen = set()
    for lineno, line, _ in _read_lines(spath):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedLineError(spath, lineno, "expected 'node,tag'")
        try:
            node = int(parts[0])
        except ValueError:
            raise MalformedLineError(spath, lineno, "non-integer node") from None
        tag = parts[1].strip()
        if tag not in SPLIT_TAGS:
            raise UnknownSplitError(spath, lineno, f"unknown split tag {tag!r}")
        if not 0 <= node < n:
            raise MalformedLineError(spath, lineno, f"node {node} out of range")
        if node in seen:
            raise MalformedLineError(spath, lineno, f"node {node} tagged twice")
        seen.add(node)
        split[node] = tag

    epath = d / "edges.tsv"
    edges = []
    keys = set()
    for lineno, line, _ in _read_lines(epath):
        if not line:
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise MalformedLineError(epath, lineno, "expected 'src<TAB>dst'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedLineError(epath, lineno, "non-integer endpoint") from None
        if not (0 <= u < n and 0 <= v < n):
            raise MalformedLineError(epath, lineno, f"endpoint out of range [0, {n})")
        if u == v:
            raise SelfLoopError(epath, lineno, f"self-loop on node {u}")
        key = (min(u, v), max(u, v))
        if key in keys:
            raise DuplicateEdgeError(epath, lineno, f"duplicate edge {key}")
        keys.add(key)
        edges.append(key)

    return GraphBundle(n, np.array(edges, dtype=np.int64).reshape(-1, 2), x, y,
                       num_classes, split, meta={"source": str(d)})


def write_bundle(g: GraphBundle, directory) -> Path:
    """Write ``g`` in the four-file directory format read by :func:`load_bundle`."""
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    with open(d / "edges.tsv", "w") as fh:
        fh.write("# src\tdst (undirected, stored once)\n")
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    with open(d / "features.csv", "w") as fh:
        for row in g.x:
            fh.write(",".join(repr(float(t)) for t in row) + "\n")
    with open(d / "labels.csv", "w") as fh:
        fh.write(f"# num_classes={g.num_classes}\n")
        for i, lab in enumerate(g.y):
            fh.write(f"{i},{lab}\n")
    with open(d / "splits.csv", "w") as fh:
        for i, tag in enumerate(g.split):
            fh.write(f"{i},{tag}\n")
    return d


def stratified_split(y: np.ndarray, num_classes: int, train_per_class: int,
                     val_size: int, rng: np.random.Generator) -> np.ndarray:
    n = len(y)
    split = np.full(n, "test", dtype="<U5")
    train = []
    for c in range(num_classes):
        members = np.flatnonzero(y == c)
        k = min(train_per_class, len(members))
        train.extend(rng.choice(members, size=k, replace=False).tolist())
    split[train] = "train"
    rest = rng.permutation(np.flatnonzero(split != "train"))
    split[rest[:val_size]] = "val"
    return split


def load_content_cites(content, cites, seed: int = 0, train_per_class: int = 20,
                       val_size: int | None = None) -> GraphBundle:
    """Read the raw ``<id> <features...> <label>`` / ``<cited> <citing>`` format.

    Ids and label strings are mapped to dense indices in first-seen order.
    Citations with unknown ids or self-citations are dropped; duplicates (in
    either direction) collapse to one undirected edge. Counts are kept in
    ``meta``.
    """
    content, cites = Path(content), Path(cites)
    ids, feats, labels = {}, [], []
    label_ids = {}
    arity = None
    for lineno, line, _ in _read_lines(content):
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise MalformedLineError(content, lineno, "expected id, features, label")
        row = parts[1:-1]
        if arity is None:
            arity = len(row)
        elif len(row) != arity:
            raise MalformedLineError(content, lineno,
                                     f"feature arity {len(row)} differs from {arity}")
        if parts[0] in ids:
            raise MalformedLineError(content, lineno, f"duplicate id {parts[0]!r}")
        try:
            feats.append([float(t) for t in row])
        except ValueError:
            raise MalformedLineError(content, lineno, "non-numeric feature") from None
        ids[parts[0]] = len(ids)
        labels.append(label_ids.setdefault(parts[-1], len(label_ids)))
    n = len(ids)

    keys = set()
    raw_lines = dropped = self_cites = 0
    for lineno, line, _ in _read_lines(cites):
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MalformedLineError(cites, lineno, "expected 'cited citing'")
        raw_lines += 1
        if parts[0] not in ids or parts[1] not in ids:
            dropped += 1
            continue
        u, v = ids[parts[0]], ids[parts[1]]
        if u == v:
            self_cites += 1
            continue
        keys.add((min(u, v), max(u, v)))
    if dropped:
        log.warning("dropped %d citation(s) referencing unknown ids", dropped)

    y = np.array(labels, dtype=np.int64)
    c = len(label_ids)
    if val_size is None:
        val_size = STANDARD_VAL_SIZES.get(n, (n - train_per_class * c) // 2)
    split = stratified_split(y, c, train_per_class, val_size, np.random.default_rng(seed))
    edges = np.array(sorted(keys), dtype=np.int64).reshape(-1, 2)
    meta = {
        "source": str(content),
        "citation_lines": raw_lines,
        "dropped_citations": dropped,
        "self_citations": self_cites,
        "undirected_edges": len(edges),
        "directed_edges": 2 * len(edges),
        "label_names": list(label_ids),
    }
    return GraphBundle(n, edges, np.array(feats).reshape(n, arity or 0), y, c, split, meta)


# ---------------------------------------------------------------------------
# propagation matrices and statistics


def normalize(g: GraphBundle, mode: str = "sym-selfloop") -> NormalizedAdjacency:
    """``row``: D^-1 A (isolated nodes get empty rows).
    ``sym-selfloop``: (D+I)^-1/2 (A+I) (D+I)^-1/2.
    """
    e = g.edges
    eid = np.arange(len(e))
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    ids = np.concatenate([eid, eid])
    deg = g.degrees().astype(np.float64)
    if mode == "row":
        vals = 1.0 / deg[src] if len(src) else np.zeros(0)
    elif mode in ("sym-selfloop", "sym"):
        mode = "sym-selfloop"
        vals = 1.0 / np.sqrt((deg[src] + 1.0) * (deg[dst] + 1.0))
        loops = np.arange(g.n)
        src = np.concatenate([src, loops])
        dst = np.concatenate([dst, loops])
        ids = np.concatenate([ids, np.full(g.n, -1)])
        vals = np.concatenate([vals, 1.0 / (deg + 1.0)])
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    order = np.lexsort((dst, src))
    mat = from_coo(g.n, g.n, src[order], dst[order], vals[order])
    return NormalizedAdjacency(mat, mode, ids[order])


def global_homophily(g: GraphBundle) -> float:
    if g.num_edges == 0:
        raise UndefinedValueError("global homophily is undefined without edges")
    same = g.y[g.edges[:, 0]] == g.y[g.edges[:, 1]]
    return float(same.mean())


def local_homophily(g: GraphBundle) -> np.ndarray:
    """Per-node fraction of same-label neighbors; isolated nodes get 0."""
    same = (g.y[g.edges[:, 0]] == g.y[g.edges[:, 1]]).astype(np.float64)
    agree = np.bincount(g.edges[:, 0], same, minlength=g.n) + \
        np.bincount(g.edges[:, 1], same, minlength=g.n)
    deg = g.degrees()
    out = np.zeros(g.n)
    nz = deg > 0
    out[nz] = agree[nz] / deg[nz]
    return out


def smoothing_metric(h: np.ndarray) -> float:
    """Frobenius distance of ``h`` from its column-mean broadcast."""
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ValueError("smoothing_metric of an empty matrix")
    return float(np.linalg.norm(h - h.mean(axis=0, keepdims=True)))


def edge_agreement_score(g: GraphBundle, predictions) -> float:
    """Fraction of edges whose endpoints receive the same predicted class."""
    if g.num_edges == 0:
        raise UndefinedValueError("agreement score is undefined without edges")
    p = np.asarray(predictions)
    return float((p[g.edges[:, 0]] == p[g.edges[:, 1]]).mean())


def true_edge_error(g: GraphBundle, predictions) -> float:
    """Fraction of edges whose predicted same/different relation is wrong."""
    if g.num_edges == 0:
        raise UndefinedValueError("edge error is undefined without edges")
    p = np.asarray(predictions)
    if p.shape != (g.n,):
        raise ValueError("predictions must cover every node")
    u, v = g.edges[:, 0], g.edges[:, 1]
    return float(((p[u] == p[v]) != (g.y[u] == g.y[v])).mean())
