"""Network data model, edge-list I/O, and the edge mutations used by the experiments.

Networks are immutable after construction: every mutation returns a new value,
so instances are safe to share across threads.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

ANOMALOUS = "anomalous"
REGULAR = "regular"


class EdgeListError(ValueError):
    """Raised for malformed or unusable edge-list input."""


def _norm_pair(i, j):
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Network:
    """Weighted directed/undirected adjacency over ``n_nodes`` dense node indices.

    ``entries`` maps ordered pairs (i, j), i != j, to positive integer weights;
    an absent pair means weight 0.  Undirected networks store both orientations
    with equal weight.  ``node_labels`` keeps the external string ids,
    ``attributes`` optional per-node category strings (candidate ground truth).
    """

    n_nodes: int
    directed: bool
    entries: dict
    node_labels: tuple = None
    attributes: tuple = None

    def __post_init__(self):
        if self.n_nodes <= 0:
            raise ValueError("n_nodes must be positive")
        for (i, j), a in self.entries.items():
            if i == j:
                raise ValueError(f"self-pair ({i},{i}) not allowed")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"pair ({i},{j}) out of range for n_nodes={self.n_nodes}")
            if a < 0:
                raise ValueError(f"negative weight {a} on pair ({i},{j})")
        if not self.directed:
            for (i, j), a in self.entries.items():
                if self.entries.get((j, i), 0) != a:
                    raise ValueError(f"undirected network asymmetric at pair ({i},{j})")
        if self.node_labels is not None and len(self.node_labels) != self.n_nodes:
            raise ValueError("node_labels length mismatch")
        if self.attributes is not None and len(self.attributes) != self.n_nodes:
            raise ValueError("attributes length mismatch")

    def weight(self, i, j):
        """A_ij, 0 when the pair is absent."""
        return self.entries.get((i, j), 0)

    @property
    def n_edges(self):
        """Number of edges: unordered pairs if undirected, ordered entries if directed."""
        if self.directed:
            return sum(1 for a in self.entries.values() if a > 0)
        return len(self.adjacent_pairs())

    def adjacent_pairs(self):
        """Unordered pairs (i<j) connected in either direction."""
        return {_norm_pair(i, j) for (i, j), a in self.entries.items() if a > 0}

    def nonadjacent_pairs(self):
        """All unordered disconnected pairs, in lexicographic order."""
        adj = self.adjacent_pairs()
        return [
            (i, j)
            for i in range(self.n_nodes)
            for j in range(i + 1, self.n_nodes)
            if (i, j) not in adj
        ]

    def to_dense(self):
        """Dense adjacency matrix of shape (n_nodes, n_nodes)."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        for (i, j), w in self.entries.items():
            a[i, j] = w
        return a

    @classmethod
    def from_dense(cls, a, directed, node_labels=None, attributes=None):
        a = np.asarray(a)
        if a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(np.diag(a) != 0):
            raise ValueError("nonzero diagonal: self-pairs not allowed")
        if not directed and not np.array_equal(a, a.T):
            raise ValueError("undirected adjacency must be symmetric")
        entries = {
            (int(i), int(j)): int(a[i, j])
            for i, j in zip(*np.nonzero(a))
        }
        return cls(a.shape[0], directed, entries, node_labels, attributes)


@dataclass(frozen=True)
class PairLabeling:
    """Anomalous/regular labels over a set of unordered node pairs."""

    pairs: tuple
    labels: tuple

    def __post_init__(self):
        if len(self.pairs) != len(self.labels):
            raise ValueError("pairs/labels length mismatch")
        for (i, j), lab in zip(self.pairs, self.labels):
            if i >= j:
                raise ValueError(f"pair ({i},{j}) not normalized i<j")
            if lab not in (ANOMALOUS, REGULAR):
                raise ValueError(f"unknown label {lab!r}")

    @property
    def anomalous(self):
        return frozenset(p for p, lab in zip(self.pairs, self.labels) if lab == ANOMALOUS)

    @property
    def regular(self):
        return frozenset(p for p, lab in zip(self.pairs, self.labels) if lab == REGULAR)

    @classmethod
    def from_sets(cls, anomalous, regular):
        anom = sorted(_norm_pair(*p) for p in anomalous)
        reg = sorted(_norm_pair(*p) for p in regular)
        return cls(tuple(anom + reg), (ANOMALOUS,) * len(anom) + (REGULAR,) * len(reg))

    def to_json(self):
        return {"pairs": [list(p) for p in self.pairs], "labels": list(self.labels)}

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(_norm_pair(*p) for p in obj["pairs"]), tuple(obj["labels"]))


def _split_line(line):
    if "," in line:
        return [t.strip() for t in line.split(",")]
    return line.split()


def _parse_weight(tok, lineno):
    try:
        x = float(tok)
    except ValueError:
        raise EdgeListError(f"line {lineno}: weight {tok!r} is not a number") from None
    if x < 0:
        raise EdgeListError(f"line {lineno}: negative weight {tok!r} rejected")
    if x != int(x):
        raise EdgeListError(f"line {lineno}: non-integer weight {tok!r} rejected")
    return int(x)


def load_edgelist(path, directed, weighted):
    """Read a tab/comma/space separated edge list into a Network.

    Node ids are arbitrary strings, mapped to dense indices in first-appearance
    order.  Duplicate lines sum weights; undirected input is symmetrized.
    Lines starting with '#' and blank lines are skipped.  Self-loops and
    negative weights are rejected with the offending line number.
    """
    index = {}
    labels = []
    sums = {}

    def node(tok):
        if tok not in index:
            index[tok] = len(labels)
            labels.append(tok)
        return index[tok]

    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = _split_line(line)
            if len(toks) not in (2, 3):
                raise EdgeListError(f"line {lineno}: expected 'src dst [weight]', got {line!r}")
            if toks[0] == toks[1]:
                raise EdgeListError(f"line {lineno}: self-loop {toks[0]!r} rejected")
            w = _parse_weight(toks[2], lineno) if (weighted and len(toks) == 3) else 1
            i, j = node(toks[0]), node(toks[1])
            key = _norm_pair(i, j) if not directed else (i, j)
            sums[key] = sums.get(key, 0) + w

    if not sums:
        raise EdgeListError(f"{path}: no edges")

    entries = {}
    for key, w in sums.items():
        if w == 0:
            continue
        entries[key] = w
        if not directed:
            entries[(key[1], key[0])] = w
    return Network(len(labels), directed, entries, tuple(labels))


def save_edgelist(net, path):
    """Write a tab-separated edge list plus a ``<path>.idmap.json`` sidecar.

    Undirected networks emit one line per unordered pair; the sidecar stores
    the index -> label map so loads reproduce the same ordering.
    """
    labels = net.node_labels or tuple(str(i) for i in range(net.n_nodes))
    with open(path, "w") as fh:
        if net.directed:
            keys = sorted(net.entries)
        else:
            keys = sorted(net.adjacent_pairs())
        for i, j in keys:
            fh.write(f"{labels[i]}\t{labels[j]}\t{net.entries[(i, j)]}\n")
    with open(f"{path}.idmap.json", "w") as fh:
        json.dump({"labels": list(labels)}, fh)


def load_attributes(path, net):
    """Attach per-node category strings from a `node<sep>category` file."""
    cats = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = _split_line(line)
            if len(toks) != 2:
                raise EdgeListError(f"line {lineno}: expected 'node category', got {line!r}")
            cats[toks[0]] = toks[1]
    labels = net.node_labels or tuple(str(i) for i in range(net.n_nodes))
    missing = [lab for lab in labels if lab not in cats]
    if missing:
        raise EdgeListError(f"attributes missing for nodes: {missing[:5]}")
    return replace(net, attributes=tuple(cats[lab] for lab in labels))


def inject_anomalies(net, rho_a, rng_seed):
    """Add ``round(rho_a * E)`` weight-1 edges on uniformly sampled disconnected pairs.

    Returns the mutated network and a labeling that marks the injected pairs
    anomalous and every pre-existing edge regular.  Both orientations are set,
    also for directed networks.
    """
    if not 0 <= rho_a < 1:
        raise ValueError("rho_a must be in [0, 1)")
    existing = sorted(net.adjacent_pairs())
    m = int(round(rho_a * len(existing)))
    free = net.nonadjacent_pairs()
    if m > len(free):
        raise ValueError(f"cannot inject {m} pairs: only {len(free)} disconnected pairs available")
    rng = np.random.default_rng(rng_seed)
    picked = [free[k] for k in sorted(rng.choice(len(free), size=m, replace=False))] if m else []

    entries = dict(net.entries)
    for i, j in picked:
        entries[(i, j)] = 1
        entries[(j, i)] = 1
    labeling = PairLabeling(
        tuple(picked) + tuple(existing),
        (ANOMALOUS,) * len(picked) + (REGULAR,) * len(existing),
    )
    return replace(net, entries=entries), labeling


def remove_pairs(net, pairs):
    """Delete both orientations of each unordered pair; absent pairs are an error."""
    adj = net.adjacent_pairs()
    entries = dict(net.entries)
    for p in pairs:
        q = _norm_pair(*p)
        if q not in adj:
            raise ValueError(f"pair {q} is not an edge")
        entries.pop(q, None)
        entries.pop((q[1], q[0]), None)
    return replace(net, entries=entries)


def add_pairs(net, pairs):
    """Add weight-1 edges (both orientations) on currently disconnected pairs."""
    adj = net.adjacent_pairs()
    entries = dict(net.entries)
    for p in pairs:
        q = _norm_pair(*p)
        if q in adj:
            raise ValueError(f"pair {q} is already an edge")
        entries[q] = 1
        entries[(q[1], q[0])] = 1
    return replace(net, entries=entries)
