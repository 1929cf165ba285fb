"""Cross-graph competing random walks.

A semantic group of ``n`` points owns one transition matrix ``A`` shared by ``k``
instance graphs. Scores are kept as a ``k x n`` matrix ``B`` whose row ``m`` is
the node vector of graph ``m``. Seed sets are encoded as an ``owner`` array:
``owner[i] = m`` when node ``i`` seeds graph ``m`` and ``-1`` otherwise, which
keeps them disjoint by construction.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .core import UNKNOWN, CgcrwParams, InstanceLabeling, Scene, spread_weak_labels
from .graph import TransitionMatrix, build_transition

log = logging.getLogger(__name__)


def init_seed_vector(seed_set, n: int) -> np.ndarray:
    """Equal mass ``1/|seeds|`` on each seed, zero elsewhere."""
    seeds = np.unique(np.asarray(seed_set, dtype=np.int64).reshape(-1))
    if seeds.size == 0:
        raise ValueError("seed set is empty")
    if seeds[0] < 0 or seeds[-1] >= n:
        raise ValueError(f"seed index out of range [0, {n})")
    b0 = np.zeros(n, dtype=np.float64)
    b0[seeds] = 1.0 / seeds.size
    return b0


def init_seed_matrix(owner: np.ndarray, k: int) -> np.ndarray:
    """Stack of seed vectors, one row per graph, from an owner array."""
    owner = np.asarray(owner, dtype=np.int64)
    n = owner.shape[0]
    counts = np.bincount(owner[owner >= 0], minlength=k)
    if (counts == 0).any():
        raise ValueError(f"graph {int(np.flatnonzero(counts == 0)[0])} has no seeds")
    b0 = np.zeros((k, n), dtype=np.float64)
    idx = np.flatnonzero(owner >= 0)
    b0[owner[idx], idx] = 1.0 / counts[owner[idx]]
    return b0


def _as_transition(a) -> TransitionMatrix:
    return a if isinstance(a, TransitionMatrix) else TransitionMatrix(a)


def propagate_step(a, b_t: np.ndarray, b0: np.ndarray, alpha: float) -> np.ndarray:
    """One blended walk step: ``alpha * A b_t + (1 - alpha) * b0``.

    ``b_t`` and ``b0`` are either single vectors or ``k x n`` stacks.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if alpha == 0.0:
        return np.array(b0, dtype=np.float64, copy=True)
    return alpha * _as_transition(a).matvec(b_t) + (1.0 - alpha) * np.asarray(b0, dtype=np.float64)


def steady_state(a, b0: np.ndarray, alpha: float) -> np.ndarray:
    """Limit of repeated :func:`propagate_step`: ``(1 - alpha) (I - alpha A)^-1 b0``.

    Solved as a linear system, never by forming the inverse.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    a = _as_transition(a)
    b0 = np.asarray(b0, dtype=np.float64)
    rhs = (1.0 - alpha) * (b0.T if b0.ndim == 2 else b0)
    if alpha == 0.0:
        return np.array(b0, copy=True)
    n = a.n
    if sp.issparse(a.data):
        system = (sp.identity(n, format="csc") - alpha * sp.csc_array(a.data)).tocsc()
        x = spla.spsolve(system, rhs)
        x = x.toarray() if sp.issparse(x) else np.asarray(x)
        x = x.reshape(rhs.shape)
    else:
        system = np.eye(n) - alpha * a.data
        try:
            x = scipy.linalg.solve(system, rhs, check_finite=False)
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover - I - aA is diagonally dominant
            raise RuntimeError(f"steady-state solve failed: {exc}") from exc
    if not np.isfinite(x).all():  # pragma: no cover
        raise RuntimeError("steady-state solve produced non-finite scores")
    return np.ascontiguousarray(x.T) if b0.ndim == 2 else x


def compete_softmax(b: np.ndarray) -> np.ndarray:
    """Softmax of every node's scores across the ``k`` graphs (axis 0)."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] < 1:
        raise ValueError("scores must be a k x n matrix with k >= 1")
    e = np.exp(b - b.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def _strict_winner(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax per node (lowest graph on ties) and whether it beats every other graph."""
    best = np.argmax(b, axis=0)
    if b.shape[0] == 1:
        return best, np.ones(b.shape[1], dtype=bool)
    top2 = np.partition(b, b.shape[0] - 2, axis=0)[-2:]
    return best, top2[1] > top2[0]


def update_seeds(adjusted: np.ndarray, owner: np.ndarray, theta: float) -> np.ndarray:
    """Promote the top ``ceil(theta * |candidates|)`` candidates of every graph to seeds.

    A candidate of graph ``m`` is an unseeded node whose scores single out ``m``
    (a node tied between graphs carries no evidence and is skipped). Candidates
    are ranked by their adjusted score, ties by node index. Returns a new owner
    array; existing seeds are never moved.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    adjusted = np.asarray(adjusted, dtype=np.float64)
    owner = np.asarray(owner, dtype=np.int64)
    best, strict = _strict_winner(adjusted)
    free = (owner < 0) & strict
    new_owner = owner.copy()
    for m in range(adjusted.shape[0]):
        cand = np.flatnonzero(free & (best == m))
        if cand.size == 0:
            continue
        take = int(np.ceil(theta * cand.size - 1e-12))
        order = np.argsort(-adjusted[m, cand], kind="stable")
        new_owner[cand[order[:take]]] = m
    return new_owner


@dataclass
class GraphGroup:
    """One semantic class's nodes and the walk state shared by its instance graphs."""

    class_id: int
    nodes: np.ndarray  # indices into the scene
    coords: np.ndarray  # shifted coordinates of the nodes
    weak_ids: np.ndarray  # spread instance id per node, -1 if none
    instance_ids: np.ndarray  # sorted instance ids, graph m <-> instance_ids[m]
    transition: TransitionMatrix | None = None

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def k(self) -> int:
        return self.instance_ids.shape[0]

    def initial_owner(self) -> np.ndarray:
        owner = np.full(self.n, -1, dtype=np.int64)
        labeled = self.weak_ids >= 0
        owner[labeled] = np.searchsorted(self.instance_ids, self.weak_ids[labeled])
        return owner

    def build(self, params: CgcrwParams, backend: str | None = None) -> "GraphGroup":
        self.transition = build_transition(self.coords, None, self.weak_ids, params, backend=backend)
        return self


@dataclass
class WalkResult:
    labels: np.ndarray  # instance id per group node
    scores: np.ndarray  # final score of the assigned instance per node, in [0, 1]
    owner_history: list[np.ndarray]
    raw: np.ndarray  # final k x n scores


def run_cgcrw(group: GraphGroup, params: CgcrwParams) -> WalkResult:
    """Walk, compete and grow seeds on one group; return per-node instance ids."""
    if group.k < 1:
        raise ValueError("group has no instances")
    if group.transition is None:
        group.build(params)
    a = group.transition
    k, alpha = group.k, params.alpha
    owner = group.initial_owner()
    b0 = init_seed_matrix(owner, k)
    history = [owner]

    if params.phase1 == "steady":
        b = steady_state(a, b0, alpha)
    else:
        b = b0.copy()
        for _ in range(params.t1_max):
            b = propagate_step(a, b, b0, alpha)

    for _ in range(params.t2_max):
        adjusted = compete_softmax(b)
        owner = update_seeds(adjusted, owner, params.theta)
        history.append(owner)
        b0 = init_seed_matrix(owner, k)
        b = propagate_step(a, adjusted, b0, alpha)

    best, strict = _strict_winner(b)
    if k > 1:
        # nodes no walk singled out (all-zero or tied scores): nearest seed in shifted coordinates
        lost = ~strict
        if lost.any():
            seeds = np.flatnonzero(owner >= 0)
            _, nn = cKDTree(group.coords[seeds]).query(group.coords[lost], k=1)
            best = best.copy()
            best[lost] = owner[seeds[nn]]

    labeled = group.weak_ids >= 0
    best[labeled] = np.searchsorted(group.instance_ids, group.weak_ids[labeled])

    total = b.sum(axis=0)
    mine = b[best, np.arange(group.n)]
    scores = np.divide(mine, total, out=np.zeros(group.n), where=total > 0)
    return WalkResult(group.instance_ids[best], scores, history, b)


def _subsample(n: int, forced: np.ndarray, annotated: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of ``cap`` node positions that always contains ``forced`` (or at least ``annotated``)."""
    forced = np.unique(forced)
    if forced.size > cap:
        rest = np.setdiff1d(forced, annotated)
        extra = rng.choice(rest, size=cap - annotated.size, replace=False)
        return np.sort(np.concatenate([annotated, extra]))
    pool = np.setdiff1d(np.arange(n), forced)
    extra = rng.choice(pool, size=cap - forced.size, replace=False)
    return np.sort(np.concatenate([forced, extra]))


def effective_semantic(scene: Scene, spread_sem: np.ndarray | None = None) -> np.ndarray:
    """Predicted classes with spread weak labels taking precedence."""
    if spread_sem is None:
        _, spread_sem = spread_weak_labels(scene)
    return np.where(spread_sem >= 0, spread_sem, scene.semantic)


def segment_group(
    scene: Scene,
    class_id: int,
    nodes: np.ndarray,
    spread_inst: np.ndarray,
    params: CgcrwParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the walk on one class; returns ``(nodes, labels, scores)`` at full resolution."""
    shifted = scene.shifted[nodes]
    weak_ids = spread_inst[nodes]
    instance_ids = np.unique(scene.weak.instance_id[scene.weak.semantic_id == class_id])
    # seed masks of other classes' annotations cannot live here
    weak_ids = np.where(np.isin(weak_ids, instance_ids), weak_ids, UNKNOWN)

    sub = np.arange(nodes.size)
    if nodes.size > params.subsample_cap:
        rng = np.random.default_rng([int(params.rng_seed), int(class_id)])
        annotated_pos = np.flatnonzero(np.isin(nodes, scene.weak.point_index))
        sub = _subsample(nodes.size, np.flatnonzero(weak_ids >= 0), annotated_pos, params.subsample_cap, rng)
        log.info("class %d: subsampled %d -> %d nodes", class_id, nodes.size, sub.size)

    group = GraphGroup(class_id, nodes[sub], shifted[sub], weak_ids[sub], instance_ids).build(params)
    res = run_cgcrw(group, params)

    if sub.size == nodes.size:
        return nodes, res.labels, res.scores
    labels = np.empty(nodes.size, dtype=np.int64)
    scores = np.empty(nodes.size, dtype=np.float64)
    _, nn = cKDTree(shifted[sub]).query(shifted, k=1)
    labels[:] = res.labels[nn]
    scores[:] = res.scores[nn]
    labels[sub] = res.labels
    scores[sub] = res.scores
    masked = weak_ids >= 0
    labels[masked] = weak_ids[masked]
    return nodes, labels, scores


def segment_scene(scene: Scene, params: CgcrwParams, threads: int = 1) -> InstanceLabeling:
    """Instance labels for every foreground point of a scene.

    Classes are independent and may run on ``threads`` workers; the result does
    not depend on the worker count.
    """
    spread_inst, spread_sem = spread_weak_labels(scene)
    sem = effective_semantic(scene, spread_sem)
    labels = np.full(scene.n, UNKNOWN, dtype=np.int64)
    out = InstanceLabeling(labels)
    counts = scene.weak.counts_per_class()

    jobs = []
    for c in scene.foreground_classes:
        nodes = np.flatnonzero(sem == c)
        if nodes.size == 0:
            continue
        if counts.get(c, 0) == 0:
            msg = f"class {c}: {nodes.size} points but no weak instances; left unassigned"
            log.warning(msg)
            out.warnings.append(msg)
            continue
        jobs.append((c, nodes))

    def work(job):
        c, nodes = job
        return c, segment_group(scene, c, nodes, spread_inst, params)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    node_scores = np.zeros(scene.n)
    for c, (nodes, lab, sc) in results:
        labels[nodes] = lab
        node_scores[nodes] = sc
        for inst in np.unique(lab):
            out.instance_class[int(inst)] = int(c)
    for inst in out.instance_ids():
        out.confidence[int(inst)] = float(node_scores[labels == inst].mean())
    out.instance_class = {i: out.instance_class[i] for i in sorted(out.confidence)}
    return out
