"""Random Walk Controversy between two sides of a graph, and partition NMI.

Walks start at a uniformly chosen non-absorbing node of one side and move
along edges with probability proportional to weight until they hit one of
the absorbing (highest in-strength) nodes of either side. A walk stuck on a
node with no way forward restarts from its own side's start set.
"""
import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import MatrixRankWarning, spsolve
from scipy.stats import entropy
from sklearn.metrics import mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from .cluster import Partition
from .graph import WeightedGraph


logger = logging.getLogger(__name__)

MIN_K_ABSORB = 10
K_ABSORB_SHARE = 0.02
DEFAULT_N_WALKS = 10_000
MAX_WALK_STEPS = 1_000_000


class RwcError(ValueError):
    """Raised when a controversy score cannot be computed for a bipartition."""


class NmiError(ValueError):
    """Raised when two partitions share no nodes."""


class RwcMethod(str, Enum):
    EXACT = "exact"
    MONTECARLO = "montecarlo"


@dataclass(frozen=True)
class Bipartition:
    side_x: FrozenSet[str]
    side_y: FrozenSet[str]

    def __post_init__(self):
        object.__setattr__(self, "side_x", frozenset(self.side_x))
        object.__setattr__(self, "side_y", frozenset(self.side_y))
        overlap = self.side_x & self.side_y
        if overlap:
            raise RwcError(f"sides share {len(overlap)} node(s), e.g. {min(overlap)!r}")

    def nodes(self) -> FrozenSet[str]:
        return self.side_x | self.side_y


@dataclass(frozen=True)
class RwcResult:
    rwc: float
    p_xx: float
    p_xy: float
    p_yx: float
    p_yy: float
    method: RwcMethod
    n_walks: Optional[int] = None
    stderr: Optional[float] = None
    k_absorb: Tuple[int, int] = (0, 0)


def default_k_absorb(side_size: int) -> int:
    return max(MIN_K_ABSORB, math.ceil(K_ABSORB_SHARE * side_size))


def stance_bipartition(graph: WeightedGraph, partition: Partition, stance_map) -> Bipartition:
    """X holds the users of no-vax communities, Y everyone else in the graph."""
    novax = set(stance_map.novax_communities())
    side_x = {node for node in graph.nodes if partition.get(node) in novax}
    return Bipartition(side_x, set(graph.nodes) - side_x)


@dataclass
class _WalkSetup:
    """Row-stochastic walk over graph indices with absorbing and start sets per side."""

    walk: sparse.csr_matrix
    row_sum: np.ndarray
    stuck: np.ndarray
    absorbing: Tuple[np.ndarray, np.ndarray]
    start: Tuple[np.ndarray, np.ndarray]


def _prepare(
    graph: WeightedGraph,
    bipartition: Bipartition,
    k_absorb: Optional[int],
    reverse: bool,
) -> _WalkSetup:
    if graph.is_empty():
        raise RwcError("cannot compute RWC on an empty graph")
    if set(graph.nodes) != bipartition.nodes():
        raise RwcError("bipartition does not cover exactly the graph's nodes")
    if k_absorb is not None and k_absorb < 1:
        raise RwcError("k_absorb must be at least 1")

    walk = graph.adjacency()
    if graph.directed and reverse:
        walk = walk.T.tocsr()
    walk.sort_indices()
    n = graph.number_of_nodes()
    in_strength = np.asarray(walk.sum(axis=0)).ravel()
    row_sum = np.asarray(walk.sum(axis=1)).ravel()

    absorbing, start = [], []
    for name, side in (("X", bipartition.side_x), ("Y", bipartition.side_y)):
        members = sorted(graph.index[node] for node in side)
        candidates = sorted(
            (i for i in members if in_strength[i] > 0), key=lambda i: (-in_strength[i], i)
        )
        k = default_k_absorb(len(members)) if k_absorb is None else k_absorb
        k = min(k, len(candidates), len(members) - 1)
        if k <= 0:
            raise RwcError(f"side {name} has no absorbing candidates")
        chosen = np.array(candidates[:k], dtype=np.int64)
        absorbing.append(chosen)
        start.append(np.setdiff1d(np.array(members, dtype=np.int64), chosen))

    # nodes that cannot reach any absorbing node behave like dangling nodes
    is_absorbing = np.zeros(n, dtype=bool)
    is_absorbing[np.concatenate(absorbing)] = True
    coo = walk.tocoo()
    targets = np.flatnonzero(is_absorbing)
    backwards = sparse.csr_matrix(
        (
            np.ones(coo.nnz + targets.size),
            (np.concatenate([coo.col, np.full(targets.size, n)]), np.concatenate([coo.row, targets])),
        ),
        shape=(n + 1, n + 1),
    )
    reachable = breadth_first_order(backwards, n, directed=True, return_predecessors=False)
    can_reach = np.zeros(n + 1, dtype=bool)
    can_reach[reachable] = True
    stuck = ~can_reach[:n] | (row_sum == 0)
    stuck[is_absorbing] = False
    if stuck.any():
        logger.debug(
            "Walk restarts on nodes without a path to absorption",
            extra={"event": "rwc_restart_nodes", "nodes": int(stuck.sum())},
        )
    for name, nodes in zip("XY", start):
        if not can_reach[nodes].any():
            raise RwcError(f"no walk from side {name} can ever be absorbed")
    return _WalkSetup(walk, row_sum, stuck, tuple(absorbing), tuple(start))


def _result(p_xy: float, p_yx: float, method: RwcMethod, setup: _WalkSetup, **extra) -> RwcResult:
    p_xx, p_yy = 1.0 - p_xy, 1.0 - p_yx
    return RwcResult(
        rwc=p_xx * p_yy - p_xy * p_yx,
        p_xx=p_xx,
        p_xy=p_xy,
        p_yx=p_yx,
        p_yy=p_yy,
        method=method,
        k_absorb=(len(setup.absorbing[0]), len(setup.absorbing[1])),
        **extra,
    )


def rwc_exact(
    graph: WeightedGraph,
    bipartition: Bipartition,
    k_absorb: Optional[int] = None,
    reverse: bool = False,
) -> RwcResult:
    """Absorption probabilities from the absorbing-chain linear system."""
    setup = _prepare(graph, bipartition, k_absorb, reverse)
    p_xy = _absorbed_probability(setup, start_side=0, target_side=1)
    p_yx = _absorbed_probability(setup, start_side=1, target_side=0)
    result = _result(p_xy, p_yx, RwcMethod.EXACT, setup)
    logger.info(
        "RWC computed",
        extra={"event": "rwc_computed", "method": "exact", "rwc": result.rwc},
    )
    return result


def _absorbed_probability(setup: _WalkSetup, start_side: int, target_side: int) -> float:
    n = setup.walk.shape[0]
    is_absorbing = np.zeros(n, dtype=bool)
    is_absorbing[np.concatenate(setup.absorbing)] = True
    transient = np.flatnonzero(~is_absorbing)
    position = np.full(n, -1, dtype=np.int64)
    position[transient] = np.arange(len(transient))
    restart = len(transient)
    size = restart + 1

    moving = transient[~setup.stuck[transient]]
    scale = np.zeros(n)
    scale[moving] = 1.0 / setup.row_sum[moving]
    step = sparse.diags(scale) @ setup.walk
    step = step.tocsr()[transient]

    coo = step[:, transient].tocoo()
    stuck = transient[setup.stuck[transient]]
    rows = [coo.row, position[stuck]]
    cols = [coo.col, np.full(stuck.size, restart)]
    data = [coo.data, np.ones(stuck.size)]
    starts = setup.start[start_side]
    rows.append(np.full(len(starts), restart))
    cols.append(position[starts])
    data.append(np.full(len(starts), 1.0 / len(starts)))
    q = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )

    target = np.zeros(n)
    target[setup.absorbing[target_side]] = 1.0
    b = np.zeros(size)
    b[:restart] = step @ target

    system = (sparse.identity(size, format="csc") - q.tocsc()).tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            h = spsolve(system, b)
        except MatrixRankWarning as exc:
            raise RwcError("absorbing-chain system is singular") from exc
    value = float(np.atleast_1d(h)[restart])
    if not math.isfinite(value):
        raise RwcError("absorbing-chain system has no finite solution")
    return min(max(value, 0.0), 1.0)


def rwc_montecarlo(
    graph: WeightedGraph,
    bipartition: Bipartition,
    k_absorb: Optional[int] = None,
    n_walks: int = DEFAULT_N_WALKS,
    seed: int = 0,
    reverse: bool = False,
    max_steps: int = MAX_WALK_STEPS,
) -> RwcResult:
    """Estimate the absorption probabilities with ``n_walks`` simulated walks per side."""
    if n_walks < 1:
        raise RwcError("n_walks must be at least 1")
    setup = _prepare(graph, bipartition, k_absorb, reverse)
    side_seeds = np.random.SeedSequence(seed).spawn(2)
    p_xy = _simulate(setup, 0, n_walks, np.random.default_rng(side_seeds[0]), max_steps)
    p_yx = _simulate(setup, 1, n_walks, np.random.default_rng(side_seeds[1]), max_steps)
    stderr = math.sqrt(p_xy * (1 - p_xy) / n_walks + p_yx * (1 - p_yx) / n_walks)
    result = _result(p_xy, p_yx, RwcMethod.MONTECARLO, setup, n_walks=n_walks, stderr=stderr)
    logger.info(
        "RWC computed",
        extra={
            "event": "rwc_computed",
            "method": "montecarlo",
            "rwc": result.rwc,
            "n_walks": n_walks,
            "stderr": stderr,
        },
    )
    return result


def _simulate(
    setup: _WalkSetup,
    start_side: int,
    n_walks: int,
    rng: np.random.Generator,
    max_steps: int,
) -> float:
    walk = setup.walk
    n = walk.shape[0]
    owner = np.full(n, -1, dtype=np.int8)
    owner[setup.absorbing[0]] = 0
    owner[setup.absorbing[1]] = 1
    starts = setup.start[start_side]
    cumulative = np.cumsum(walk.data)
    row_base = np.concatenate([[0.0], cumulative])[walk.indptr[:-1]]

    position = starts[rng.integers(len(starts), size=n_walks)]
    crossed = 0
    for _ in range(max_steps):
        if position.size == 0:
            return crossed / n_walks
        done = owner[position] >= 0
        crossed += int(np.count_nonzero(owner[position[done]] != start_side))
        position = position[~done]
        if position.size == 0:
            return crossed / n_walks
        restart = setup.stuck[position]
        position[restart] = starts[rng.integers(len(starts), size=int(restart.sum()))]
        moving = ~restart
        current = position[moving]
        target = row_base[current] + rng.random(current.size) * setup.row_sum[current]
        slot = np.searchsorted(cumulative, target, side="right")
        slot = np.minimum(slot, walk.indptr[current + 1] - 1)
        position[moving] = walk.indices[slot]
    raise RwcError(f"{position.size} walk(s) still running after {max_steps} steps")


def _assignment(partition: Union[Partition, Mapping[str, int]]) -> Mapping[str, int]:
    return partition.assignment if isinstance(partition, Partition) else partition


def _canonical(labels: Iterable) -> np.ndarray:
    """Relabel by first occurrence so equal partitions get equal label vectors."""
    seen: Dict = {}
    return np.array([seen.setdefault(label, len(seen)) for label in labels], dtype=np.int64)


def nmi(
    partition_a: Union[Partition, Mapping[str, int]],
    partition_b: Union[Partition, Mapping[str, int]],
) -> float:
    """Arithmetic-normalized mutual information over the shared nodes."""
    a, b = _assignment(partition_a), _assignment(partition_b)
    nodes: List[str] = sorted(set(a) & set(b))
    if not nodes:
        raise NmiError("partitions have no nodes in common")
    labels_a = _canonical(a[node] for node in nodes)
    labels_b = _canonical(b[node] for node in nodes)
    table = contingency_matrix(labels_a, labels_b)

    nonzero = table > 0
    if (nonzero.sum(axis=1) == 1).all() and (nonzero.sum(axis=0) == 1).all():
        return 1.0
    h_a = float(entropy(table.sum(axis=1)))
    h_b = float(entropy(table.sum(axis=0)))
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    mi = mutual_info_score(None, None, contingency=table)
    return float(min(max(2.0 * mi / (h_a + h_b), 0.0), 1.0))
