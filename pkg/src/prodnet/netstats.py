"""Undirected networks, random-graph ensembles and correlation statistics on graphs."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import ContractError, DomainError, ParseError, UndefinedMeanError
from .seeding import derive_seed

logger = logging.getLogger(__name__)


def _canonical_edges(edges, n):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise DomainError("edge endpoint out of range")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if e.size:
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Network:
    """Simple undirected graph on ``n`` labelled nodes.

    ``edges`` is an (m, 2) integer array of pairs ``i < j``, sorted and
    without duplicates; self-loops and repeated pairs passed to the
    constructor are discarded.
    """

    n: int
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    node_ids: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "edges", _canonical_edges(self.edges, self.n))
        ids = self.node_ids
        ids = tuple(str(k) for k in range(self.n)) if ids is None else tuple(ids)
        if len(ids) != self.n:
            raise ContractError("node_ids must have length n")
        object.__setattr__(self, "node_ids", ids)

    @property
    def m(self):
        return int(self.edges.shape[0])

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def adjacency(self):
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * self.m)
        return sparse.csr_matrix(
            (data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(self.n, self.n)
        )

    def edge_set(self):
        return {(int(a), int(b)) for a, b in self.edges}

    def relabel(self, perm):
        """Network with node ``k`` moved to position ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        ids = [None] * self.n
        for k, p in enumerate(perm):
            ids[p] = self.node_ids[k]
        return Network(self.n, perm[self.edges], tuple(ids))

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.n == other.n
            and self.node_ids == other.node_ids
            and np.array_equal(self.edges, other.edges)
        )

    def __hash__(self):
        return hash((self.n, self.edges.tobytes()))


@dataclass
class BlockScheme:
    """Block labels per node with a symmetric matrix of block densities.

    Rows and columns of ``densities`` follow ``blocks``, the sorted distinct
    labels.
    """

    partition: list
    densities: np.ndarray

    def __post_init__(self):
        self.partition = [str(x) for x in self.partition]
        self.densities = np.asarray(self.densities, dtype=float)
        B = len(self.blocks)
        if self.densities.shape != (B, B):
            raise ContractError(f"densities must be {B}x{B} for {B} blocks")
        if not np.allclose(self.densities, self.densities.T):
            raise ContractError("block densities must be symmetric")
        if np.any(self.densities < 0) or np.any(self.densities > 1):
            raise DomainError("block densities must lie in [0, 1]")

    @property
    def blocks(self):
        return sorted(set(self.partition))

    def members(self):
        """Node indices per block, in block order."""
        labels = np.asarray(self.partition)
        return [np.flatnonzero(labels == b) for b in self.blocks]


def summary(net):
    deg = net.degrees()
    n, m = net.n, net.m
    pairs = n * (n - 1)
    return {
        "n": n,
        "m": m,
        "density": 2.0 * m / pairs if pairs else 0.0,
        "density_ordered": m / pairs if pairs else 0.0,
        "median_degree": float(np.median(deg)) if n else 0.0,
        "max_degree": int(deg.max()) if n else 0,
    }


def er_density(net):
    """``m / (n (n - 1))``: the edge count over ordered pairs."""
    if net.n < 2:
        raise DomainError("er_density needs at least two nodes")
    return net.m / (net.n * (net.n - 1))


def decode_upper(k, n):
    """Row-major index of the strict upper triangle back to pairs ``(i, j)``, ``i < j``."""
    k = np.asarray(k, dtype=np.int64)
    # count of pairs before row i is i*n - i*(i+1)/2
    i = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8.0 * k)) / 2).astype(np.int64)
    i = np.clip(i, 0, max(n - 2, 0))
    before = i * n - i * (i + 1) // 2
    over = k < before
    i[over] -= 1
    before = i * n - i * (i + 1) // 2
    under = k >= before + (n - 1 - i)
    i[under] += 1
    before = i * n - i * (i + 1) // 2
    j = k - before + i + 1
    return i, j


def _sample_indices(rng, total, p):
    if total == 0 or p <= 0:
        return np.zeros(0, dtype=np.int64)
    if p >= 1:
        return np.arange(total, dtype=np.int64)
    count = rng.binomial(total, p)
    return np.sort(rng.choice(total, size=count, replace=False)).astype(np.int64)


def generate_er(n, p, seed, node_ids=None):
    if not 0 <= p <= 1:
        raise DomainError(f"edge probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(derive_seed(seed, "er"))
    k = _sample_indices(rng, n * (n - 1) // 2, p)
    i, j = decode_upper(k, n)
    return Network(n, np.column_stack([i, j]), node_ids)


def generate_sbm(scheme, seed, node_ids=None):
    rng = np.random.default_rng(derive_seed(seed, "sbm"))
    members = scheme.members()
    parts = []
    for a, ma in enumerate(members):
        for b in range(a, len(members)):
            mb = members[b]
            rho = scheme.densities[a, b]
            if a == b:
                k = _sample_indices(rng, ma.size * (ma.size - 1) // 2, rho)
                i, j = decode_upper(k, ma.size)
                parts.append(np.column_stack([ma[i], ma[j]]))
            else:
                k = _sample_indices(rng, ma.size * mb.size, rho)
                parts.append(np.column_stack([ma[k // mb.size], mb[k % mb.size]]))
    n = len(scheme.partition)
    edges = np.vstack(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    return Network(n, edges, node_ids)


def block_densities(net, partition):
    """Edge density within and between blocks.

    Diagonal entries count edges over the ``|B|(|B| - 1)/2`` unordered pairs
    inside the block (0 for a block of one node); off-diagonal entries count
    edges over the ``|B_a| |B_b|`` cross pairs. Blocks follow sorted labels.
    """
    labels = [str(x) for x in partition]
    if len(labels) != net.n:
        raise ContractError("every node needs a block label")
    blocks = sorted(set(labels))
    pos = {b: k for k, b in enumerate(blocks)}
    code = np.array([pos[x] for x in labels], dtype=np.int64)
    sizes = np.bincount(code, minlength=len(blocks)).astype(float)
    B = len(blocks)
    counts = np.zeros((B, B))
    if net.m:
        a, b = code[net.edges[:, 0]], code[net.edges[:, 1]]
        np.add.at(counts, (a, b), 1.0)
        np.add.at(counts, (b, a), 1.0)
        counts[np.diag_indices(B)] /= 2.0
    denom = np.outer(sizes, sizes)
    denom[np.diag_indices(B)] = sizes * (sizes - 1) / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 0, counts / denom, 0.0)
    return rho


def is_graphical(degrees):
    """Erdos-Gallai test for a simple-graph degree sequence."""
    d = np.sort(np.asarray(degrees, dtype=np.int64))[::-1]
    if d.size == 0:
        return True
    if d.min() < 0 or d.sum() % 2:
        return False
    n = d.size
    csum = np.cumsum(d)
    k = np.arange(1, n + 1)
    # sum_{i>k} min(d_i, k) for every k, via suffix sums over the sorted sequence
    tail = np.array([np.minimum(d[kk:], kk).sum() for kk in k])
    return bool(np.all(csum <= k * (k - 1) + tail))


def _havel_hakimi(degrees):
    rem = list(enumerate(int(x) for x in degrees))
    edges = []
    while True:
        rem = [(v, d) for v, d in rem if d > 0]
        if not rem:
            return edges
        rem.sort(key=lambda x: (-x[1], x[0]))
        v, d = rem[0]
        if d > len(rem) - 1:
            raise DomainError("degree sequence is not graphical")
        for k in range(1, d + 1):
            u, du = rem[k]
            edges.append((min(u, v), max(u, v)))
            rem[k] = (u, du - 1)
        rem[0] = (v, 0)


def _double_edge_swaps(edges, n_swaps, rng):
    present = set(edges)
    m = len(edges)
    if m < 2:
        return edges
    for _ in range(n_swaps):
        a, b = rng.integers(m, size=2)
        if a == b:
            continue
        u, v = edges[a]
        x, y = edges[b]
        if rng.random() < 0.5:
            x, y = y, x
        e1 = (min(u, x), max(u, x))
        e2 = (min(v, y), max(v, y))
        if u == x or v == y or e1 in present or e2 in present:
            continue
        present.discard(edges[a])
        present.discard(edges[b])
        present.add(e1)
        present.add(e2)
        edges[a], edges[b] = e1, e2
    return edges


def generate_config_model(degrees, seed, node_ids=None, swaps_per_edge=10):
    """Simple graph with exactly the given degree sequence.

    Stubs are matched at random; self-loops and repeated pairs are repaired
    by swapping endpoints with random other edges, with a Havel-Hakimi
    construction as a last resort. The result is then mixed by
    ``swaps_per_edge * m`` degree-preserving double-edge swaps.
    """
    deg = np.asarray(degrees, dtype=np.int64)
    if deg.size and deg.min() < 0:
        raise DomainError("degrees must be nonnegative")
    if deg.sum() % 2:
        raise DomainError("degree sum must be even")
    if not is_graphical(deg):
        raise DomainError("degree sequence violates the Erdos-Gallai conditions")
    n = deg.size
    rng = np.random.default_rng(derive_seed(seed, "config"))
    stubs = np.repeat(np.arange(n), deg)
    rng.shuffle(stubs)
    pairs = [(int(min(a, b)), int(max(a, b))) for a, b in stubs.reshape(-1, 2)]
    edges, bad, seen = [], [], set()
    for e in pairs:
        if e[0] == e[1] or e in seen:
            bad.append(e)
        else:
            seen.add(e)
            edges.append(e)
    attempts = 0
    limit = 100 * (len(pairs) + 1)
    while bad and attempts < limit:
        attempts += 1
        u, v = bad[-1]
        if not edges:
            break
        k = int(rng.integers(len(edges)))
        x, y = edges[k]
        if rng.random() < 0.5:
            x, y = y, x
        e1 = (min(u, x), max(u, x))
        e2 = (min(v, y), max(v, y))
        if u == x or v == y or e1 in seen or e2 in seen or e1 == e2:
            continue
        seen.discard(edges[k])
        edges[k] = e1
        seen.add(e1)
        seen.add(e2)
        edges.append(e2)
        bad.pop()
    if bad:
        logger.debug("stub matching repair failed; using Havel-Hakimi start")
        edges = _havel_hakimi(deg)
    edges = _double_edge_swaps(edges, swaps_per_edge * len(edges), rng)
    return Network(n, np.array(edges, dtype=np.int64).reshape(-1, 2), node_ids)


def distance_classes(net, k_max, chunk=512):
    """Pairs ``(i, j)``, ``i < j``, at shortest-path distance exactly k, for k = 1..k_max.

    Returns a list of (m_k, 2) arrays. Disconnected pairs belong to no class.
    """
    if k_max < 1:
        raise DomainError("k_max must be at least 1")
    adj = net.adjacency()
    found = [[] for _ in range(k_max)]
    for start in range(0, net.n, chunk):
        rows = np.arange(start, min(start + chunk, net.n))
        dist = csgraph.shortest_path(adj, directed=False, unweighted=True, indices=rows)
        for k in range(1, k_max + 1):
            r, c = np.nonzero(dist == k)
            r = rows[r]
            keep = r < c
            found[k - 1].append(np.column_stack([r[keep], c[keep]]))
    return [np.vstack(f) if f else np.zeros((0, 2), dtype=np.int64) for f in found]


def _pair_values(C, pairs):
    i, j = pairs[:, 0], pairs[:, 1]
    if C.lag == 0:
        vals = C.entries[i, j]
        ok = C.overlap[i, j] > 0
        return vals[ok]
    vals = np.concatenate([C.entries[i, j], C.entries[j, i]])
    ok = np.concatenate([C.overlap[i, j], C.overlap[j, i]]) > 0
    return vals[ok]


def avg_corr_on_network(C, net):
    """Mean correlation over linked pairs, and the number of pairs averaged.

    Pairs never co-observed are left out. At a nonzero lag both orientations
    of every link are averaged.
    """
    if C.size != net.n:
        raise ContractError("correlation matrix and network differ in size")
    if net.m == 0:
        raise UndefinedMeanError("average correlation is undefined on an edgeless network")
    vals = _pair_values(C, net.edges)
    if vals.size == 0:
        raise UndefinedMeanError("no linked pair is co-observed")
    return float(vals.mean()), int(vals.size)


def distance_decay(C, net, k_max, classes=None):
    """Mean lag-0 correlation at each distance 1..k_max; ``None`` for empty classes."""
    if C.size != net.n:
        raise ContractError("correlation matrix and network differ in size")
    if classes is None:
        classes = distance_classes(net, k_max)
    out = []
    for pairs in classes[:k_max]:
        vals = _pair_values(C, pairs) if pairs.size else np.zeros(0)
        out.append(float(vals.mean()) if vals.size else None)
    return out


def benchmark_params(net, partition=None):
    """Parameters of the three null models, matched to ``net``."""
    params = {
        "er": {"n": net.n, "p": summary(net)["density"]},
        "config": {"degrees": net.degrees()},
    }
    if partition is not None:
        params["sbm"] = {"scheme": BlockScheme(partition, block_densities(net, partition))}
    return params


def draw_benchmark(model, params, seed):
    if model == "er":
        return generate_er(params["n"], params["p"], seed)
    if model == "sbm":
        return generate_sbm(params["scheme"], seed)
    if model == "config":
        return generate_config_model(params["degrees"], seed)
    raise DomainError(f"unknown benchmark model {model!r}")


def benchmark_avg_corr(C, model, params, n_draws=50, seed=0):
    """Mean and sample standard deviation of the average correlation over random networks.

    ``params`` holds ``n`` and ``p`` for ``er``, ``scheme`` for ``sbm`` and
    ``degrees`` for ``config`` (see :func:`benchmark_params`). The ER
    probability is the unordered-pair density, so draws carry as many edges
    as the observed network on average.
    """
    if n_draws < 1:
        raise DomainError("n_draws must be at least 1")
    vals = []
    for d in range(n_draws):
        net = draw_benchmark(model, params, derive_seed(seed, "benchmark", model, d))
        vals.append(avg_corr_on_network(C, net)[0])
    vals = np.asarray(vals)
    std = float(vals.std(ddof=1)) if n_draws > 1 else 0.0
    return float(vals.mean()), std


def read_edgelist_csv(path, node_ids, drop_unknown=True):
    """Read ``src,dst`` rows into a network over ``node_ids``.

    Direction is discarded. Rows naming nodes outside ``node_ids`` are
    dropped (and counted in the log) unless ``drop_unknown`` is false.
    """
    index = {str(x): k for k, x in enumerate(node_ids)}
    edges = []
    dropped = 0
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["src", "dst"]:
            raise ParseError("edgelist header must be src,dst", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ParseError("expected src,dst", line=lineno)
            a, b = row[0].strip(), row[1].strip()
            if a not in index or b not in index:
                if not drop_unknown:
                    raise ParseError(f"unknown node in edge ({a}, {b})", line=lineno)
                dropped += 1
                continue
            edges.append((index[a], index[b]))
    if dropped:
        logger.info("dropped %d edges touching nodes outside the panel", dropped)
    return Network(len(index), np.array(edges, dtype=np.int64).reshape(-1, 2), tuple(node_ids))


def write_edgelist_csv(net, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for a, b in net.edges:
            w.writerow([net.node_ids[a], net.node_ids[b]])


def read_partition_csv(path, node_ids):
    labels = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["firm_id", "block"]:
            raise ParseError("partition header must be firm_id,block", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ParseError("expected firm_id,block", line=lineno)
            labels[row[0].strip()] = row[1].strip()
    missing = [f for f in node_ids if str(f) not in labels]
    if missing:
        raise ContractError(f"{len(missing)} firms have no block label, e.g. {missing[0]!r}")
    return [labels[str(f)] for f in node_ids]


def write_partition_csv(node_ids, partition, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["firm_id", "block"])
        for f, b in zip(node_ids, partition):
            w.writerow([f, b])
