"""Retweet and co-sharing network construction, pruning and reduction.

Graphs keep their edges as parallel numpy arrays over a sorted node list so
that million-edge networks stay cheap to hold and to hand to scipy.
"""
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .lowcred import DomainError, normalize_url


logger = logging.getLogger(__name__)

DIRECTED_HEADER = "#directed"
UNDIRECTED_HEADER = "#undirected"


class GraphError(ValueError):
    """Raised for malformed graphs or edge lists."""


class WeightedGraph:
    """Sparse weighted user graph; undirected edges are stored once as (u, v) with u < v."""

    def __init__(
        self,
        directed: bool,
        nodes: Sequence[str],
        rows: np.ndarray,
        cols: np.ndarray,
        weights: np.ndarray,
    ):
        self.directed = directed
        self.nodes: Tuple[str, ...] = tuple(nodes)
        self.index: Dict[str, int] = {node: i for i, node in enumerate(self.nodes)}
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.int64)
        for array in (self.rows, self.cols, self.weights):
            array.setflags(write=False)
        self._edges: Optional[Dict[Tuple[str, str], int]] = None

    @classmethod
    def from_edges(
        cls,
        directed: bool,
        edges: Mapping[Tuple[str, str], int],
        nodes: Iterable[str] = (),
    ) -> "WeightedGraph":
        node_set = set(nodes)
        for (u, v), weight in edges.items():
            if u == v:
                raise GraphError(f"self-loop on {u!r}")
            if weight < 1 or int(weight) != weight:
                raise GraphError(f"edge ({u!r}, {v!r}) has weight {weight!r}")
            node_set.add(u)
            node_set.add(v)
        ordered = sorted(node_set)
        index = {node: i for i, node in enumerate(ordered)}

        merged: Counter = Counter()
        for (u, v), weight in edges.items():
            i, j = index[u], index[v]
            if not directed and i > j:
                i, j = j, i
            merged[(i, j)] += int(weight)
        keys = sorted(merged)
        rows = np.fromiter((key[0] for key in keys), dtype=np.int64, count=len(keys))
        cols = np.fromiter((key[1] for key in keys), dtype=np.int64, count=len(keys))
        weights = np.fromiter((merged[key] for key in keys), dtype=np.int64, count=len(keys))
        return cls(directed, ordered, rows, cols, weights)

    @classmethod
    def empty(cls, directed: bool) -> "WeightedGraph":
        none = np.zeros(0, dtype=np.int64)
        return cls(directed, (), none, none, none)

    @property
    def edges(self) -> Dict[Tuple[str, str], int]:
        if self._edges is None:
            nodes = self.nodes
            self._edges = {
                (nodes[i], nodes[j]): int(w)
                for i, j, w in zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist())
            }
        return self._edges

    def number_of_nodes(self) -> int:
        return len(self.nodes)

    def number_of_edges(self) -> int:
        return int(self.weights.size)

    def total_weight(self) -> int:
        return int(self.weights.sum())

    def is_empty(self) -> bool:
        return not self.nodes

    def adjacency(self) -> sparse.csr_matrix:
        """Weight matrix; symmetric for undirected graphs."""
        n = len(self.nodes)
        if self.directed:
            rows, cols, data = self.rows, self.cols, self.weights
        else:
            rows = np.concatenate([self.rows, self.cols])
            cols = np.concatenate([self.cols, self.rows])
            data = np.concatenate([self.weights, self.weights])
        return sparse.csr_matrix(
            (data.astype(np.float64), (rows, cols)), shape=(n, n)
        )

    def symmetrized(self) -> sparse.csr_matrix:
        """Undirected view with w(i, j) + w(j, i) on both triangles."""
        matrix = self.adjacency()
        if self.directed:
            matrix = (matrix + matrix.T).tocsr()
        return matrix

    def in_strength(self) -> np.ndarray:
        n = len(self.nodes)
        if not self.directed:
            return self.out_strength()
        return np.bincount(self.cols, weights=self.weights, minlength=n).astype(np.int64)

    def out_strength(self) -> np.ndarray:
        n = len(self.nodes)
        strength = np.bincount(self.rows, weights=self.weights, minlength=n)
        if not self.directed:
            strength = strength + np.bincount(self.cols, weights=self.weights, minlength=n)
        return strength.astype(np.int64)

    def subgraph(self, nodes: Iterable[str]) -> "WeightedGraph":
        keep = np.zeros(len(self.nodes), dtype=bool)
        for node in nodes:
            i = self.index.get(node)
            if i is not None:
                keep[i] = True
        return self._restrict(keep, self._edge_mask(keep))

    def _edge_mask(self, keep: np.ndarray) -> np.ndarray:
        return keep[self.rows] & keep[self.cols]

    def _restrict(self, keep: np.ndarray, edge_mask: np.ndarray) -> "WeightedGraph":
        remap = np.cumsum(keep) - 1
        nodes = [node for node, flag in zip(self.nodes, keep.tolist()) if flag]
        return WeightedGraph(
            self.directed,
            nodes,
            remap[self.rows[edge_mask]],
            remap[self.cols[edge_mask]],
            self.weights[edge_mask],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return (
            self.directed == other.directed
            and self.nodes == other.nodes
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self) -> str:
        kind = "directed" if self.directed else "undirected"
        return (
            f"WeightedGraph({kind}, nodes={self.number_of_nodes()}, "
            f"edges={self.number_of_edges()})"
        )


def build_rt_graph(events: Iterable, country: str, lang: str, user_geo) -> WeightedGraph:
    """Directed graph with w(i, j) = times user i retweeted user j, both in ``country``."""
    counts: Counter = Counter()
    for event in events:
        if not event.is_retweet or event.lang != lang:
            continue
        source, target = event.user_id, event.retweeted_user_id
        if source == target:
            continue
        if user_geo.country_of(source) != country or user_geo.country_of(target) != country:
            continue
        counts[(source, target)] += 1
    graph = WeightedGraph.from_edges(True, counts)
    _log_built(graph, "rt", country)
    return graph


def build_co_graph(events: Iterable, country: str, lang: str, user_geo) -> WeightedGraph:
    """Undirected graph with w(i, j) = number of distinct URLs shared by both users."""
    shared: Dict[str, Set[str]] = defaultdict(set)
    for event in events:
        if event.lang != lang or user_geo.country_of(event.user_id) != country:
            continue
        for url in event.urls:
            try:
                shared[event.user_id].add(normalize_url(url))
            except DomainError:
                continue

    users = sorted(shared)
    if not users:
        graph = WeightedGraph.empty(False)
        _log_built(graph, "co", country)
        return graph

    url_index: Dict[str, int] = {}
    rows, cols = [], []
    for i, user in enumerate(users):
        for url in shared[user]:
            rows.append(i)
            cols.append(url_index.setdefault(url, len(url_index)))
    incidence = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)),
        shape=(len(users), len(url_index)),
    )
    common = sparse.triu(incidence @ incidence.T, k=1).tocoo()
    keep = common.data > 0
    used = np.zeros(len(users), dtype=bool)
    used[common.row[keep]] = True
    used[common.col[keep]] = True
    remap = np.cumsum(used) - 1
    nodes = [user for user, flag in zip(users, used.tolist()) if flag]
    order = np.lexsort((common.col[keep], common.row[keep]))
    graph = WeightedGraph(
        False,
        nodes,
        remap[common.row[keep][order]],
        remap[common.col[keep][order]],
        common.data[keep][order],
    )
    _log_built(graph, "co", country)
    return graph


def _log_built(graph: WeightedGraph, kind: str, country: str) -> None:
    if graph.is_empty():
        logger.warning(
            "Network is empty",
            extra={"event": "graph_empty", "kind": kind, "country": country},
        )
    else:
        logger.info(
            "Network built",
            extra={
                "event": "graph_built",
                "kind": kind,
                "country": country,
                "nodes": graph.number_of_nodes(),
                "edges": graph.number_of_edges(),
            },
        )


def prune(graph: WeightedGraph, min_weight_rt: int = 1, min_weight_co: int = 2) -> WeightedGraph:
    """Drop light edges (threshold by graph kind), then the nodes they isolate."""
    if min_weight_rt < 1 or min_weight_co < 1:
        raise GraphError("pruning thresholds must be at least 1")
    threshold = min_weight_rt if graph.directed else min_weight_co
    edge_mask = graph.weights >= threshold
    keep = np.zeros(len(graph.nodes), dtype=bool)
    keep[graph.rows[edge_mask]] = True
    keep[graph.cols[edge_mask]] = True
    return graph._restrict(keep, edge_mask)


def giant_component(graph: WeightedGraph) -> WeightedGraph:
    """Largest weakly connected component; ties go to the smallest member id."""
    if graph.is_empty():
        return graph
    count, labels = connected_components(graph.adjacency(), directed=True, connection="weak")
    if count == 1:
        return graph
    sizes = np.bincount(labels, minlength=count)
    # nodes are sorted, so the first index seen per label is its smallest id
    _, first_index = np.unique(labels, return_index=True)
    best = min(range(count), key=lambda label: (-sizes[label], first_index[label]))
    keep = labels == best
    return graph._restrict(keep, graph._edge_mask(keep))


def overlap_coefficient(set_a: Iterable, set_b: Iterable) -> float:
    """|A ∩ B| / min(|A|, |B|)."""
    a, b = set(set_a), set(set_b)
    if not a or not b:
        raise GraphError("overlap coefficient needs two nonempty sets")
    return len(a & b) / min(len(a), len(b))


@dataclass(frozen=True)
class GraphSummary:
    nodes: int
    edges: int
    total_weight: int
    gcc_nodes: int

    @property
    def gcc_share(self) -> Optional[float]:
        return self.gcc_nodes / self.nodes if self.nodes else None


def describe(graph: WeightedGraph, gcc: Optional[WeightedGraph] = None) -> GraphSummary:
    if gcc is None:
        gcc = giant_component(graph)
    return GraphSummary(
        nodes=graph.number_of_nodes(),
        edges=graph.number_of_edges(),
        total_weight=graph.total_weight(),
        gcc_nodes=gcc.number_of_nodes(),
    )


def write_edgelist(graph: WeightedGraph, handle: io.TextIOBase, comment: Optional[str] = None) -> None:
    handle.write((DIRECTED_HEADER if graph.directed else UNDIRECTED_HEADER) + "\n")
    if comment:
        handle.write(f"# {comment}\n")
    nodes = graph.nodes
    for i, j, w in zip(graph.rows.tolist(), graph.cols.tolist(), graph.weights.tolist()):
        handle.write(f"{nodes[i]}\t{nodes[j]}\t{w}\n")


def read_edgelist(lines: Iterable[str]) -> WeightedGraph:
    iterator: Iterator[str] = iter(lines)
    header = next(iterator, "").strip()
    if header not in (DIRECTED_HEADER, UNDIRECTED_HEADER):
        raise GraphError(f"edge list header must be {DIRECTED_HEADER} or {UNDIRECTED_HEADER}")
    edges: Dict[Tuple[str, str], int] = {}
    for line_no, line in enumerate(iterator, start=2):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise GraphError(f"line {line_no}: expected u<TAB>v<TAB>weight")
        try:
            weight = int(fields[2])
        except ValueError as exc:
            raise GraphError(f"line {line_no}: weight is not an integer") from exc
        edges[(fields[0], fields[1])] = edges.get((fields[0], fields[1]), 0) + weight
    return WeightedGraph.from_edges(header == DIRECTED_HEADER, edges)
