"""Node-attributed graphs: data model, text loaders, SBM generator, neighbour sampling.

File formats (UTF-8, lines starting with ``#`` and blank lines are ignored):

* edges: two whitespace-separated node indices per line
* features: comma-separated floats, one row per node; the row count fixes n
* labels: one integer per line, one line per node
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, ParseError


@dataclass(frozen=True)
class NeighborSample:
    node: int
    neighbor: int


@dataclass(frozen=True, eq=False)
class NodeGraph:
    """Immutable graph. ``edges`` holds each undirected edge in both directions."""

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray = None
    train_mask: np.ndarray = None
    val_mask: np.ndarray = None
    test_mask: np.ndarray = None
    _indptr: np.ndarray = field(init=False, repr=False)
    _indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise InvalidArgumentError(f"features must be an n x d matrix, got shape {feats.shape}")
        n = feats.shape[0]
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise InvalidArgumentError(f"edge endpoint outside [0, {n})")
        edges = edges[edges[:, 0] != edges[:, 1]]
        edges = np.unique(np.concatenate([edges, edges[:, ::-1]]), axis=0)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        counts = np.bincount(edges[:, 0], minlength=n)
        indptr = np.concatenate([[0], np.cumsum(counts)])

        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "_indptr", _frozen(indptr))
        object.__setattr__(self, "_indices", _frozen(edges[:, 1].copy()))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise InvalidArgumentError(f"labels must have length {n}, got shape {labels.shape}")
            if labels.min() < 0:
                raise InvalidArgumentError("labels must be nonnegative")
            object.__setattr__(self, "labels", _frozen(labels))
        for name in ("train_mask", "val_mask", "test_mask"):
            mask = getattr(self, name)
            if mask is not None:
                mask = np.asarray(mask, dtype=bool)
                if mask.shape != (n,):
                    raise InvalidArgumentError(f"{name} must have length {n}")
                object.__setattr__(self, name, _frozen(mask))

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def num_edges(self):
        """Undirected edge count."""
        return self.edges.shape[0] // 2

    @property
    def num_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    @property
    def has_masks(self):
        return self.train_mask is not None

    def neighbors(self, node):
        return self._indices[self._indptr[node]:self._indptr[node + 1]]

    def degrees(self):
        return np.diff(self._indptr)

    def with_(self, **changes):
        return replace(self, **changes)


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_edges(path):
    pairs = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected two node indices, got {line!r}", path, lineno)
        try:
            pairs.append((int(parts[0]), int(parts[1]), lineno))
        except ValueError:
            raise ParseError(f"non-integer node index in {line!r}", path, lineno) from None
    return pairs


def read_features(path):
    rows, width = [], None
    for lineno, line in _data_lines(path):
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise ParseError(f"non-numeric feature value in {line!r}", path, lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"expected {width} columns, got {len(row)}", path, lineno)
        if not all(np.isfinite(row)):
            raise ParseError("non-finite feature value", path, lineno)
        rows.append(row)
    if not rows:
        raise ParseError("feature file has no rows", path)
    return np.asarray(rows)


def read_labels(path):
    labels = []
    for lineno, line in _data_lines(path):
        try:
            value = int(line)
        except ValueError:
            raise ParseError(f"non-integer label {line!r}", path, lineno) from None
        if value < 0:
            raise ParseError(f"negative label {value}", path, lineno)
        labels.append(value)
    return np.asarray(labels, dtype=np.int64)


def load_graph(edge_path, feature_path, label_path=None):
    features = read_features(feature_path)
    n = features.shape[0]
    pairs = read_edges(edge_path)
    for i, j, lineno in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"node index out of range [0, {n}): {i} {j}", edge_path, lineno)
    labels = None
    if label_path is not None:
        labels = read_labels(label_path)
        if labels.shape[0] != n:
            raise ParseError(f"label file has {labels.shape[0]} rows, feature file has {n}", label_path)
    edges = np.array([(i, j) for i, j, _ in pairs], dtype=np.int64).reshape(-1, 2)
    return NodeGraph(features, edges, labels)


def save_graph(g, edge_path, feature_path, label_path=None):
    """Write the text formats read by :func:`load_graph` (each edge once, i < j)."""
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes {g.num_nodes} edges {g.num_edges}\n")
        for i, j in g.edges:
            if i < j:
                fh.write(f"{i} {j}\n")
    with open(feature_path, "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if label_path is not None and g.labels is not None:
        with open(label_path, "w", encoding="utf-8") as fh:
            fh.writelines(f"{int(v)}\n" for v in g.labels)


def generate_sbm(blocks, nodes_per_block, p_in, p_out, feat_dim, feat_shift, seed,
                 topology="complete"):
    """Stochastic block model with Gaussian node features.

    Block ``b`` has feature mean ``feat_shift * e_(b mod feat_dim)``; labels are
    block ids. With ``topology="chain"`` the between-block probability
    ``p_out`` only applies to consecutive blocks, so blocks form a path.
    """
    if not 0 <= p_out < p_in <= 1:
        raise InvalidArgumentError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if blocks < 1 or nodes_per_block < 1 or feat_dim < 1:
        raise InvalidArgumentError("blocks, nodes_per_block and feat_dim must be positive")
    if topology not in ("complete", "chain"):
        raise InvalidArgumentError(f"unknown topology {topology!r}")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    if topology == "chain":
        prob = np.where(~same & (np.abs(labels[iu] - labels[ju]) != 1), 0.0, prob)
    hit = rng.random(iu.size) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    centers = np.zeros((blocks, feat_dim))
    centers[np.arange(blocks), np.arange(blocks) % feat_dim] = feat_shift
    features = centers[labels] + rng.standard_normal((n, feat_dim))
    return NodeGraph(features, edges, labels)


def sample_neighbor(g, node, rng):
    """Uniform draw from N(node); an isolated node returns itself."""
    nbrs = g.neighbors(node)
    if nbrs.size == 0:
        return NeighborSample(int(node), int(node))
    return NeighborSample(int(node), int(nbrs[rng.integers(nbrs.size)]))


def sample_neighbors(g, rng, nodes=None):
    """Vectorized :func:`sample_neighbor` for ``nodes`` (default: all)."""
    nodes = np.arange(g.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    deg = g.degrees()[nodes]
    offset = rng.integers(0, np.maximum(deg, 1))
    if g._indices.size == 0:
        return nodes.copy()
    pos = np.where(deg > 0, g._indptr[nodes] + offset, 0)
    return np.where(deg > 0, g._indices[pos], nodes)


def adjacency(g):
    n = g.num_nodes
    a = np.zeros((n, n))
    if g.edges.size:
        a[g.edges[:, 0], g.edges[:, 1]] = 1.0
    return a


def normalized_adjacency(g):
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = adjacency(g) + np.eye(g.num_nodes)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def mean_adjacency(g):
    """Row-normalized A without self-loops; isolated rows average over the node itself."""
    a = adjacency(g)
    deg = a.sum(axis=1)
    isolated = deg == 0
    a[isolated, isolated] = 1.0
    return a / np.maximum(deg, 1.0)[:, None]


def split_masks(g, fractions, seed):
    """Random disjoint train/val/test masks.

    Sizes are ``floor(f * n)`` with the leftover nodes handed out one at a
    time by largest fractional part (ties to the earlier split).
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise InvalidArgumentError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = g.num_nodes
    raw = fr * n
    sizes = np.floor(raw + 1e-9).astype(int)
    rem = raw - sizes
    for k in np.argsort(-rem, kind="stable")[: n - sizes.sum()]:
        sizes[k] += 1
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(sizes)
    masks = []
    for start, stop in zip([0, *bounds[:-1]], bounds):
        m = np.zeros(n, dtype=bool)
        m[perm[start:stop]] = True
        masks.append(m)
    return g.with_(train_mask=masks[0], val_mask=masks[1], test_mask=masks[2])


def standardize_features(g, mask=None):
    """Per-feature standardization using statistics of the ``mask`` rows (default: train mask)."""
    if mask is None:
        mask = g.train_mask if g.train_mask is not None else np.ones(g.num_nodes, dtype=bool)
    ref = g.features[np.asarray(mask, dtype=bool)]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    return g.with_(features=(g.features - mu) / sd)
