"""Reference clusterers for pseudo-label generation: Lloyd K-means and radius BFS."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import _accel
from .core import UNKNOWN, InstanceLabeling, Scene, spread_weak_labels
from .walk import effective_semantic


@dataclass(frozen=True)
class BaselineParams:
    algorithm: str = "kmeans"
    coords: str = "shifted"
    bfs_radius: float = 0.03
    bfs_min_points: int = 50
    kmeans_max_iters: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("kmeans", "bfs"):
            raise ValueError(f"unknown baseline algorithm {self.algorithm!r}")
        if self.coords not in ("original", "shifted"):
            raise ValueError(f"coords must be 'original' or 'shifted', got {self.coords!r}")
        if not self.bfs_radius > 0:
            raise ValueError("bfs_radius must be > 0")
        if self.kmeans_max_iters < 1:
            raise ValueError("kmeans_max_iters must be >= 1")
        if self.bfs_min_points < 1:
            raise ValueError("bfs_min_points must be >= 1")


def kmeans_objective(coords: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(((coords - centers[labels]) ** 2).sum())


def kmeans_cluster(
    coords: np.ndarray,
    k: int,
    init_points: np.ndarray,
    max_iters: int = 100,
    return_history: bool = False,
):
    """Lloyd's algorithm started from the coordinates of ``init_points``.

    Returns cluster ids ``0..k-1`` (cluster ``m`` grew from ``init_points[m]``).
    Ties go to the lowest cluster id and an emptied cluster keeps its previous
    centroid. With ``return_history`` also returns the objective after each
    assignment step.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = coords.shape[0]
    init_points = np.asarray(init_points, dtype=np.int64).reshape(-1)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k = {k} exceeds the number of points {n}")
    if init_points.size != k:
        raise ValueError(f"expected {k} init points, got {init_points.size}")

    centers = coords[init_points].copy()
    labels = _accel.nearest_center(coords, centers)
    history = [kmeans_objective(coords, labels, centers)]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros((k, 3))
        np.add.at(sums, labels, coords)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        history.append(kmeans_objective(coords, labels, centers))
        new = _accel.nearest_center(coords, centers)
        if np.array_equal(new, labels):
            break
        labels = new
        history.append(kmeans_objective(coords, labels, centers))
    return (labels, history) if return_history else labels


def radius_graph(coords: np.ndarray, radius: float) -> sp.csr_array:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = coords.shape[0]
    pairs = cKDTree(coords).query_pairs(radius, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    g = sp.csr_array((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    g.sort_indices()
    return g


def bfs_cluster(
    coords: np.ndarray,
    radius: float,
    min_points: int = 50,
    weak_ids: np.ndarray | None = None,
    fresh_start: int | None = None,
) -> np.ndarray:
    """Connected components of the radius-``radius`` neighbour graph.

    Components smaller than ``min_points`` become ``-1``. Each component takes the
    weak instance id held by most of its weak-labeled points (ties to the lower
    id; an id won by several components goes to the one holding the most of its
    points). Everything else gets fresh ids from ``fresh_start`` upward, in order
    of lowest member index.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n = coords.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    g = radius_graph(coords, radius)
    comp = _accel.csr_components(g.indptr, g.indices, n)
    ncomp = int(comp.max()) + 1
    sizes = np.bincount(comp, minlength=ncomp)
    if weak_ids is None:
        weak_ids = np.full(n, UNKNOWN, dtype=np.int64)
    weak_ids = np.asarray(weak_ids, dtype=np.int64)
    if fresh_start is None:
        fresh_start = int(max(weak_ids.max(initial=-1) + 1, 0))

    claims = []  # (support, component, weak id)
    labeled = np.flatnonzero(weak_ids >= 0)
    for c in np.unique(comp[labeled]):
        if sizes[c] < min_points:
            continue
        ids, votes = np.unique(weak_ids[labeled[comp[labeled] == c]], return_counts=True)
        best = int(np.argmax(votes))  # np.unique sorts ids, argmax takes the first
        claims.append((int(votes[best]), int(c), int(ids[best])))
    # strongest claim first; order ties by component for determinism
    claims.sort(key=lambda t: (-t[0], t[1]))
    comp_id = np.full(ncomp, UNKNOWN, dtype=np.int64)
    taken = set()
    for _, c, wid in claims:
        if wid not in taken:
            comp_id[c] = wid
            taken.add(wid)
    nxt = fresh_start
    for c in range(ncomp):
        if sizes[c] >= min_points and comp_id[c] < 0:
            comp_id[c] = nxt
            nxt += 1
    return comp_id[comp]


def segment_scene_baseline(scene: Scene, params: BaselineParams) -> InstanceLabeling:
    """Run one baseline on every foreground class of a scene.

    Spread weak-label masks override the clustering, as for the walk. Baselines
    have no scoring model, so every instance gets confidence 1.
    """
    spread_inst, spread_sem = spread_weak_labels(scene)
    sem = effective_semantic(scene, spread_sem)
    coords = scene.shifted if params.coords == "shifted" else scene.points
    labels = np.full(scene.n, UNKNOWN, dtype=np.int64)
    out = InstanceLabeling(labels)
    weak = scene.weak
    fresh = int(weak.instance_id.max(initial=-1)) + 1

    for c in scene.foreground_classes:
        nodes = np.flatnonzero(sem == c)
        if nodes.size == 0:
            continue
        rows = np.flatnonzero(weak.semantic_id == c)
        rows = rows[np.argsort(weak.instance_id[rows])]
        inst_ids = weak.instance_id[rows]
        local_weak = np.where(np.isin(spread_inst[nodes], inst_ids), spread_inst[nodes], UNKNOWN)
        if params.algorithm == "kmeans":
            if rows.size == 0:
                out.warnings.append(f"class {c}: no weak instances; left unassigned")
                continue
            pos = np.searchsorted(nodes, weak.point_index[rows])
            cl = kmeans_cluster(coords[nodes], rows.size, pos, params.kmeans_max_iters)
            lab = inst_ids[cl]
        else:
            lab = bfs_cluster(coords[nodes], params.bfs_radius, params.bfs_min_points, local_weak, fresh)
            fresh = max(fresh, int(lab.max(initial=-1)) + 1)
        masked = local_weak >= 0
        lab[masked] = local_weak[masked]
        labels[nodes] = lab
        for inst in np.unique(lab[lab >= 0]):
            out.instance_class[int(inst)] = int(c)
    for inst in out.instance_ids():
        out.confidence[int(inst)] = 1.0
    out.instance_class = {i: out.instance_class[i] for i in sorted(out.confidence)}
    return out
