"""Paris hierarchical clustering and modularity-driven partition selection."""
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import WeightedGraph


logger = logging.getLogger(__name__)

DEFAULT_DOMINANCE = 0.9
FIRST_CUTS = (2, 5)
CUT_STEP = 5
REFINE_SWEEPS = 20
MERGE_LIMIT = 256
MOVE_TOLERANCE = 1e-9


class ClusteringError(ValueError):
    """Raised when a graph or dendrogram cannot be clustered as asked."""


class Merge(NamedTuple):
    child_a: int
    child_b: int
    height: float
    new_id: int


@dataclass(frozen=True)
class Dendrogram:
    """Leaves are cluster ids ``0..n-1``; merge ``t`` creates cluster ``n + t``."""

    leaves: Tuple[str, ...]
    merges: Tuple[Merge, ...] = ()

    def __len__(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class Partition:
    assignment: Mapping[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.assignment)

    def __getitem__(self, node: str) -> int:
        return self.assignment[node]

    def get(self, node: str, default=None):
        return self.assignment.get(node, default)

    def communities(self) -> Dict[int, List[str]]:
        groups: Dict[int, List[str]] = {}
        for node in sorted(self.assignment):
            groups.setdefault(self.assignment[node], []).append(node)
        return dict(sorted(groups.items()))

    def sizes(self) -> Dict[int, int]:
        return {community: len(members) for community, members in self.communities().items()}

    @property
    def k(self) -> int:
        return len(set(self.assignment.values()))

    def largest_share(self) -> float:
        if not self.assignment:
            return 0.0
        return max(self.sizes().values()) / len(self.assignment)


def paris_dendrogram(graph: WeightedGraph) -> Dendrogram:
    """Agglomerate by node-pair sampling distance d(a, b) = p(a) p(b) / p(a, b)."""
    n = graph.number_of_nodes()
    if n == 0:
        raise ClusteringError("cannot cluster an empty graph")
    adjacency = graph.symmetrized()
    if n > 1:
        count, _ = connected_components(adjacency, directed=False)
        if count != 1:
            raise ClusteringError(
                f"graph has {count} connected components; take the giant component first"
            )

    total = float(adjacency.sum())
    indptr, indices, data = adjacency.indptr, adjacency.indices, adjacency.data
    neighbors: List[Optional[Dict[int, float]]] = [
        dict(zip(indices[indptr[i] : indptr[i + 1]].tolist(), data[indptr[i] : indptr[i + 1]].tolist()))
        for i in range(n)
    ]
    degree = np.asarray(adjacency.sum(axis=1)).ravel().tolist()
    cluster_of = list(range(n))
    active = set(range(n))
    raw: List[Tuple[int, int, float, int]] = []
    next_id = n

    def nearest(a: int, preferred: Optional[int]) -> Tuple[int, float]:
        da = degree[a]
        best, best_d = -1, float("inf")
        for c, w in neighbors[a].items():
            d = da * degree[c] / w
            if d < best_d or (d == best_d and cluster_of[c] < cluster_of[best]):
                best, best_d = c, d
        # keep the chain top on ties so the chain always terminates
        if preferred is not None and preferred in neighbors[a]:
            if da * degree[preferred] / neighbors[a][preferred] == best_d:
                best = preferred
        return best, best_d

    while len(active) > 1:
        chain = [next(iter(active))]
        while chain:
            a = chain.pop()
            top = chain[-1] if chain else None
            b, d = nearest(a, top)
            if top is not None and b == top:
                chain.pop()
                if len(neighbors[a]) < len(neighbors[b]):
                    a, b = b, a
                raw.append((cluster_of[a], cluster_of[b], d / total, next_id))
                _merge_into(neighbors, a, b)
                degree[a] += degree[b]
                cluster_of[a] = next_id
                next_id += 1
                active.discard(b)
            else:
                chain.append(a)
                chain.append(b)

    dendrogram = _sorted_dendrogram(graph.nodes, raw)
    logger.info(
        "Dendrogram built",
        extra={"event": "dendrogram_built", "leaves": n, "merges": len(dendrogram.merges)},
    )
    return dendrogram


def _merge_into(neighbors: List[Optional[Dict[int, float]]], a: int, b: int) -> None:
    """Fold cluster ``b`` into ``a``; inter-cluster weights add."""
    na, nb = neighbors[a], neighbors[b]
    del na[b]
    del nb[a]
    for c, w in nb.items():
        na[c] = na.get(c, 0.0) + w
        nc = neighbors[c]
        nc[a] = nc.get(a, 0.0) + nc.pop(b)
    neighbors[b] = None


def _sorted_dendrogram(leaves: Tuple[str, ...], raw: List[Tuple[int, int, float, int]]) -> Dendrogram:
    """Order merges by height and renumber the new clusters accordingly."""
    n = len(leaves)
    height_of: Dict[int, float] = {}
    fixed = []
    for a, b, height, new_id in raw:
        # a parent never sits below its children, even under rounding
        height = max(height, height_of.get(a, 0.0), height_of.get(b, 0.0))
        height_of[new_id] = height
        fixed.append((a, b, height, new_id))
    order = sorted(range(len(fixed)), key=lambda t: (fixed[t][2], t))
    renumber = {i: i for i in range(n)}
    merges = []
    for position, t in enumerate(order):
        a, b, height, new_id = fixed[t]
        renumber[new_id] = n + position
        first, second = sorted((renumber[a], renumber[b]))
        merges.append(Merge(first, second, height, n + position))
    return Dendrogram(leaves=tuple(leaves), merges=tuple(merges))


def _cut_labels(dendrogram: Dendrogram, k: int) -> np.ndarray:
    n = len(dendrogram.leaves)
    if not 1 <= k <= n:
        raise ClusteringError(f"cannot cut {n} leaves into {k} communities")
    if len(dendrogram.merges) < n - k:
        raise ClusteringError(
            f"dendrogram has {len(dendrogram.merges)} merges; {n - k} needed for k={k}"
        )
    parent = list(range(n + len(dendrogram.merges)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for merge in dendrogram.merges[: n - k]:
        parent[find(merge.child_a)] = merge.new_id
        parent[find(merge.child_b)] = merge.new_id
    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    return _ranked(roots)


def _ranked(labels: np.ndarray) -> np.ndarray:
    unique, first_index, inverse, counts = np.unique(
        labels, return_index=True, return_inverse=True, return_counts=True
    )
    # community 0 is the largest; ties go to the one holding the smallest leaf
    ranking = sorted(range(len(unique)), key=lambda r: (-counts[r], first_index[r]))
    relabel = np.empty(len(unique), dtype=np.int64)
    relabel[ranking] = np.arange(len(unique))
    return relabel[inverse.ravel()]


def cut_k(dendrogram: Dendrogram, k: int) -> Partition:
    """Undo the ``k - 1`` highest merges, leaving exactly ``k`` communities."""
    labels = _cut_labels(dendrogram, k)
    return Partition(dict(zip(dendrogram.leaves, labels.tolist())))


def modularity(graph: WeightedGraph, partition: Partition) -> float:
    """Newman weighted modularity on the symmetrized graph."""
    if graph.number_of_edges() == 0:
        raise ClusteringError("modularity is undefined on a graph without edges")
    try:
        labels = np.array([partition[node] for node in graph.nodes], dtype=np.int64)
    except KeyError as exc:
        raise ClusteringError(f"partition does not cover node {exc.args[0]!r}") from exc
    return _modularity(graph.symmetrized().tocoo(), labels)


def _modularity(matrix, labels: np.ndarray) -> float:
    _, labels = np.unique(labels, return_inverse=True)
    k = int(labels.max()) + 1
    two_w = float(matrix.data.sum())
    same = labels[matrix.row] == labels[matrix.col]
    internal = np.bincount(labels[matrix.row[same]], weights=matrix.data[same], minlength=k)
    strength = np.bincount(matrix.row, weights=matrix.data, minlength=matrix.shape[0])
    community_strength = np.bincount(labels, weights=strength, minlength=k)
    return float(np.sum(internal / two_w - (community_strength / two_w) ** 2))


def select_partition(
    graph: WeightedGraph,
    dendrogram: Dendrogram,
    dominance: float = DEFAULT_DOMINANCE,
    first_cuts: Tuple[int, int] = FIRST_CUTS,
    step: int = CUT_STEP,
) -> Partition:
    """Best-modularity cut among a window of k values, widening until no community dominates."""
    if not 0.0 < dominance <= 1.0:
        raise ClusteringError("dominance must lie in (0, 1]")
    if tuple(dendrogram.leaves) != tuple(graph.nodes):
        raise ClusteringError("dendrogram was not built from this graph")
    n = len(dendrogram.leaves)
    if n < 2:
        return cut_k(dendrogram, n)

    matrix = graph.symmetrized().tocoo()
    low, high = first_cuts[0], min(first_cuts[1], n)
    while True:
        best_k, best_q, best_labels = None, None, None
        for k in range(low, high + 1):
            labels = _cut_labels(dendrogram, k)
            q = _modularity(matrix, labels)
            if best_q is None or q > best_q:
                best_k, best_q, best_labels = k, q, labels
        largest = np.bincount(best_labels).max() / n
        logger.debug(
            "Partition window evaluated",
            extra={
                "event": "partition_window",
                "window": (low, high),
                "k": best_k,
                "modularity": best_q,
                "largest_share": largest,
            },
        )
        if largest <= dominance or high >= n:
            break
        low, high = high + 1, min(high + step, n)

    refined = _refine(matrix.tocsr(), best_labels)
    refined_q = _modularity(matrix, refined)
    refined_largest = np.bincount(refined).max() / n
    # the refined cut must keep the dominance guarantee the raw cut has
    if refined_q > best_q and refined.max() >= 1 and (refined_largest <= dominance or largest > dominance):
        best_labels, best_q = refined, refined_q
        best_k = int(refined.max()) + 1

    logger.info(
        "Partition selected",
        extra={"event": "partition_selected", "k": best_k, "modularity": best_q},
    )
    return Partition(dict(zip(dendrogram.leaves, best_labels.tolist())))


def refine_partition(graph: WeightedGraph, partition: Partition, max_sweeps: int = REFINE_SWEEPS) -> Partition:
    """Raise modularity by single-node moves and community merges, keeping at least two communities.

    A dendrogram cut keeps every early merge, including pairs of nodes joined across
    community borders before either side grew. Moving such nodes to the community
    holding most of their weight repairs the cut without re-clustering.
    """
    if graph.number_of_edges() == 0:
        raise ClusteringError("cannot refine a partition of a graph without edges")
    try:
        labels = np.array([partition[node] for node in graph.nodes], dtype=np.int64)
    except KeyError as exc:
        raise ClusteringError(f"partition does not cover node {exc.args[0]!r}") from exc
    refined = _refine(graph.symmetrized().tocsr(), labels, max_sweeps)
    return Partition(dict(zip(graph.nodes, refined.tolist())))


def _refine(matrix, labels: np.ndarray, max_sweeps: int = REFINE_SWEEPS) -> np.ndarray:
    two_w = float(matrix.data.sum())
    strength = np.asarray(matrix.sum(axis=1)).ravel()
    labels = _ranked(labels)
    if labels.max() < 1:
        return labels
    labels = _move_nodes(matrix, labels, strength, two_w, max_sweeps)
    labels = _merge_communities(matrix, _ranked(labels), strength, two_w)
    labels = _move_nodes(matrix, _ranked(labels), strength, two_w, max_sweeps)
    return _ranked(labels)


def _move_nodes(matrix, labels: np.ndarray, strength: np.ndarray, two_w: float, max_sweeps: int) -> np.ndarray:
    """Greedy local moves in node order; each move strictly raises modularity."""
    labels = labels.copy()
    k = int(labels.max()) + 1
    totals = np.bincount(labels, weights=strength, minlength=k)
    sizes = np.bincount(labels, minlength=k)
    nonempty = int(np.count_nonzero(sizes))
    indptr, indices, data = matrix.indptr, matrix.indices, matrix.data
    for sweep in range(max_sweeps):
        moved = 0
        for i in range(labels.size):
            own = labels[i]
            if sizes[own] == 1 and nonempty <= 2:
                continue
            neighbors = indices[indptr[i] : indptr[i + 1]]
            weights = data[indptr[i] : indptr[i + 1]]
            outside = neighbors != i
            if not outside.any():
                continue
            links = np.bincount(labels[neighbors[outside]], weights=weights[outside], minlength=k)
            k_i = strength[i]
            totals[own] -= k_i
            candidates = np.flatnonzero(links)
            gains = links[candidates] - k_i * totals[candidates] / two_w
            stay = links[own] - k_i * totals[own] / two_w
            best = int(np.argmax(gains))
            target = own
            if gains[best] - stay > MOVE_TOLERANCE * k_i:
                target = int(candidates[best])
            totals[target] += k_i
            if target != own:
                labels[i] = target
                sizes[own] -= 1
                sizes[target] += 1
                nonempty -= int(sizes[own] == 0)
                moved += 1
        logger.debug("Refinement sweep", extra={"event": "refine_sweep", "sweep": sweep, "moved": moved})
        if not moved:
            break
    return labels


def _merge_communities(matrix, labels: np.ndarray, strength: np.ndarray, two_w: float) -> np.ndarray:
    """Merge the community pair with the largest modularity gain until no merge gains."""
    k = int(labels.max()) + 1
    if k <= 2 or k > MERGE_LIMIT:
        return labels
    coo = matrix.tocoo()
    between = np.zeros((k, k))
    np.add.at(between, (labels[coo.row], labels[coo.col]), coo.data)
    totals = np.bincount(labels, weights=strength, minlength=k)
    alive = np.ones(k, dtype=bool)
    target = np.arange(k)
    while alive.sum() > 2:
        gains = between - np.outer(totals, totals) / two_w
        np.fill_diagonal(gains, -np.inf)
        gains[~alive, :] = -np.inf
        gains[:, ~alive] = -np.inf
        a, b = np.unravel_index(int(np.argmax(gains)), gains.shape)
        if gains[a, b] <= MOVE_TOLERANCE:
            break
        a, b = min(a, b), max(a, b)
        between[a, :] += between[b, :]
        between[:, a] += between[:, b]
        between[b, :] = 0.0
        between[:, b] = 0.0
        totals[a] += totals[b]
        totals[b] = 0.0
        alive[b] = False
        target[target == b] = a
    return target[labels]


def write_dendrogram(dendrogram: Dendrogram, handle: io.TextIOBase, comment: Optional[str] = None) -> None:
    if comment:
        handle.write(f"# {comment}\n")
    for index, leaf in enumerate(dendrogram.leaves):
        handle.write(f"#leaf\t{index}\t{leaf}\n")
    for merge in dendrogram.merges:
        handle.write(f"{merge.child_a}\t{merge.child_b}\t{merge.height!r}\t{merge.new_id}\n")


def read_dendrogram(lines: Iterable[str]) -> Dendrogram:
    leaves: Dict[int, str] = {}
    merges = []
    for line in lines:
        line = line.rstrip("\n")
        if line.startswith("#leaf\t"):
            _, index, leaf = line.split("\t", 2)
            leaves[int(index)] = leaf
        elif line.strip() and not line.startswith("#"):
            a, b, height, new_id = line.split("\t")
            merges.append(Merge(int(a), int(b), float(height), int(new_id)))
    if sorted(leaves) != list(range(len(leaves))):
        raise ClusteringError("dendrogram leaf indices are not contiguous")
    return Dendrogram(leaves=tuple(leaves[i] for i in range(len(leaves))), merges=tuple(merges))


def write_partition(partition: Partition, handle: io.TextIOBase, comment: Optional[str] = None) -> None:
    if comment:
        handle.write(f"# {comment}\n")
    for node in sorted(partition.assignment):
        handle.write(f"{node}\t{partition.assignment[node]}\n")


def read_partition(lines: Iterable[str]) -> Partition:
    assignment = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        node, community = line.split("\t")
        assignment[node] = int(community)
    return Partition(assignment)
