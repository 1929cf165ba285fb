"""Procedural scenes with ground truth and simulated network outputs.

Objects are axis-aligned box shells or filled ellipsoids resting on the floor of
a square arena. Class ``0`` is background (an optional floor sheet); foreground
classes are ``1..classes``. Predicted semantics and offsets are simulated from
ground truth with controllable corruption.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Scene, WeakAnnotations, validate_scene

BACKGROUND = 0


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    classes: int = 2
    instances_per_class: tuple[int, int] = (2, 4)
    points_per_instance: tuple[int, int] = (300, 600)
    instance_radius: tuple[float, float] = (0.3, 0.5)
    aspect: tuple[float, float] = (1.0, 1.0)
    shape: str = "box"
    packing: str = "separable"
    gap: float = 0.5
    pair_clearance: float = 0.5
    offset_quality: float = 1.0
    offset_noise: float = 0.0
    semantic_flip_rate: float = 0.0
    background_points: int = 0
    arena: float = 8.0
    cell_size: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("instances_per_class", "points_per_instance", "instance_radius", "aspect"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ValueError(f"{name}: need 0 < lo <= hi, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        if self.classes < 1:
            raise ValueError("classes must be >= 1")
        if self.shape not in ("box", "ellipsoid"):
            raise ValueError(f"shape must be 'box' or 'ellipsoid', got {self.shape!r}")
        if self.packing not in ("separable", "packed"):
            raise ValueError(f"packing must be 'separable' or 'packed', got {self.packing!r}")
        if self.gap < 0 or self.pair_clearance < 0:
            raise ValueError("gap and pair_clearance must be >= 0")
        if not 0.0 <= self.offset_quality <= 1.0:
            raise ValueError("offset_quality must be in [0, 1]")
        if self.offset_noise < 0:
            raise ValueError("offset_noise must be >= 0")
        if not 0.0 <= self.semantic_flip_rate < 1.0:
            raise ValueError("semantic_flip_rate must be in [0, 1)")
        if self.background_points < 0 or self.arena <= 0 or self.cell_size <= 0:
            raise ValueError("background_points >= 0, arena > 0 and cell_size > 0 required")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SyntheticInstance:
    class_id: int
    instance_id: int
    indices: np.ndarray
    centroid: np.ndarray
    center: np.ndarray = field(repr=False)
    half_extent: np.ndarray = field(repr=False)


@dataclass
class SyntheticScene:
    points: np.ndarray
    gt_semantic: np.ndarray
    gt_instance: np.ndarray
    instances: list[SyntheticInstance]
    spec: SceneSpec

    def weak_from(self, weak: WeakAnnotations, semantic, offsets, supervoxels, name="scene") -> Scene:
        return validate_scene(
            self.points,
            semantic,
            offsets,
            weak,
            range(1, self.spec.classes + 1),
            supervoxels=supervoxels,
            gt_instance=self.gt_instance,
            gt_semantic=self.gt_semantic,
            name=name,
        )


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def _sample_shape(rng, shape: str, half: np.ndarray, count: int) -> np.ndarray:
    if shape == "ellipsoid":
        d = rng.normal(size=(count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.random(count) ** (1.0 / 3.0)
        return d * r[:, None] * half
    # box shell, uniform by area
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=count, p=areas / areas.sum())
    p = (rng.random((count, 3)) * 2.0 - 1.0) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    p[np.arange(count), axis] = sign * half[axis]
    return p


def _fits(center, radius, placed, clearance) -> bool:
    for c, r in placed:
        if np.linalg.norm(center[:2] - c[:2]) < radius + r + clearance:
            return False
    return True


def _place(rng, radius: float, arena: float, placed, clearance: float, what: str, tries: int = 5000):
    lo, hi = radius, arena - radius
    if lo > hi:
        raise PlacementError(f"{what} does not fit in the {arena} m arena")
    for _ in range(tries):
        c = np.array([rng.uniform(lo, hi), rng.uniform(lo, hi), 0.0])
        if _fits(c, radius, placed, clearance):
            return c
    raise PlacementError(f"could not place {what} after {tries} attempts ({len(placed)} already placed)")


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Ground-truth geometry for ``spec``; a pure function of the spec."""
    rng, rng_bg = _streams(spec.rng_seed, 2)
    objects = []  # (class, half extent, point count)
    for c in range(1, spec.classes + 1):
        for _ in range(int(rng.integers(spec.instances_per_class[0], spec.instances_per_class[1] + 1))):
            r = rng.uniform(*spec.instance_radius)
            half = r * rng.uniform(spec.aspect[0], spec.aspect[1], size=3)
            objects.append((c, half, int(rng.integers(spec.points_per_instance[0], spec.points_per_instance[1] + 1))))

    # footprint clusters: single objects, or same-class pairs touching across `gap`
    clusters = []
    if spec.packing == "packed":
        for c in range(1, spec.classes + 1):
            members = [i for i, o in enumerate(objects) if o[0] == c]
            for j in range(0, len(members), 2):
                clusters.append(members[j : j + 2])
    else:
        clusters = [[i] for i in range(len(objects))]

    total = len(objects)
    centers = [None] * total
    placed = []
    clearance = spec.gap if spec.packing == "separable" else spec.pair_clearance
    for idx, members in enumerate(clusters):
        if len(members) == 1:
            half = objects[members[0]][1]
            rad = float(np.linalg.norm(half[:2]))
            c = _place(rng, rad, spec.arena, placed, clearance, f"instance {members[0] + 1} of {total}")
            placed.append((c, rad))
            centers[members[0]] = c
            continue
        a, b = members
        ha, hb = objects[a][1], objects[b][1]
        axis = int(rng.integers(0, 2))
        shift = np.zeros(3)
        shift[axis] = ha[axis] + spec.gap + hb[axis]
        # footprint circle around the pair midpoint
        mid = shift / 2.0
        rad = max(np.linalg.norm(mid[:2]) + np.linalg.norm(ha[:2]), np.linalg.norm(mid[:2]) + np.linalg.norm(hb[:2]))
        c = _place(rng, rad, spec.arena, placed, clearance, f"pair {idx} ({total} instances)")
        placed.append((c, rad))
        centers[a] = c - mid
        centers[b] = c + mid

    pts, sem, inst, instances = [], [], [], []
    start = 0
    for i, (c, half, count) in enumerate(objects):
        center = centers[i].copy()
        center[2] = half[2]  # rest on the floor
        local = _sample_shape(rng, spec.shape, half, count)
        p = center + local
        pts.append(p)
        sem.append(np.full(count, c))
        inst.append(np.full(count, i))
        instances.append(SyntheticInstance(c, i, np.arange(start, start + count), p.mean(axis=0), center, half))
        start += count
    if spec.background_points:
        floor = np.column_stack(
            [
                rng_bg.uniform(0, spec.arena, spec.background_points),
                rng_bg.uniform(0, spec.arena, spec.background_points),
                -rng_bg.uniform(0.0, 0.02, spec.background_points),
            ]
        )
        pts.append(floor)
        sem.append(np.full(spec.background_points, BACKGROUND))
        inst.append(np.full(spec.background_points, -1))
    return SyntheticScene(
        np.concatenate(pts), np.concatenate(sem).astype(np.int64), np.concatenate(inst).astype(np.int64), instances, spec
    )


def simulate_offsets(scene: SyntheticScene, quality: float, noise: float, rng_seed: int) -> np.ndarray:
    """``quality * (centroid - x) + N(0, noise^2 I)`` on instance points, zero on background."""
    rng = np.random.default_rng(int(rng_seed))
    off = np.zeros_like(scene.points)
    for ins in scene.instances:
        idx = ins.indices
        off[idx] = quality * (ins.centroid - scene.points[idx])
        if noise > 0:
            off[idx] += rng.normal(scale=noise, size=(idx.size, 3))
    return off


def simulate_semantics(scene: SyntheticScene, flip_rate: float, rng_seed: int) -> np.ndarray:
    """Keep each ground-truth class with probability ``1 - flip_rate``, else pick another class uniformly."""
    if not 0.0 <= flip_rate < 1.0:
        raise ValueError("flip_rate must be in [0, 1)")
    rng = np.random.default_rng(int(rng_seed))
    sem = scene.gt_semantic.copy()
    n_classes = scene.spec.classes + 1
    flip = rng.random(sem.size) < flip_rate
    if n_classes > 1 and flip.any():
        # uniform over the other classes: shift by 1..n_classes-1 modulo n_classes
        step = rng.integers(1, n_classes, size=int(flip.sum()))
        sem[flip] = (sem[flip] + step) % n_classes
    return sem


def sample_weak_annotations(scene: SyntheticScene, rng_seed: int) -> WeakAnnotations:
    """One uniformly drawn point per ground-truth instance."""
    rng = np.random.default_rng(int(rng_seed))
    rows = []
    for ins in scene.instances:
        if ins.indices.size == 0:
            raise ValueError(f"instance {ins.instance_id} is empty")
        rows.append((int(rng.choice(ins.indices)), ins.class_id, ins.instance_id))
    return WeakAnnotations.from_rows(rows)


def grid_supervoxels(points: np.ndarray, cell_size: float) -> np.ndarray:
    """Segment id = rank of the point's occupied grid cell (lexicographic cell order)."""
    if not cell_size > 0:
        raise ValueError("cell_size must be > 0")
    keys = np.floor(np.asarray(points, dtype=np.float64) / cell_size).astype(np.int64)
    _, seg = np.unique(keys, axis=0, return_inverse=True)
    return seg.reshape(-1).astype(np.int64)


def build_scene(spec: SceneSpec, name: str = "scene") -> tuple[Scene, SyntheticScene]:
    """Full bundle: geometry, simulated predictions, weak labels and grid supervoxels."""
    syn = generate_scene(spec)
    s_off, s_sem, s_weak = (int(x.generate_state(1)[0]) for x in np.random.SeedSequence(int(spec.rng_seed)).spawn(5)[2:])
    offsets = simulate_offsets(syn, spec.offset_quality, spec.offset_noise, s_off)
    semantic = simulate_semantics(syn, spec.semantic_flip_rate, s_sem)
    weak = sample_weak_annotations(syn, s_weak)
    sv = grid_supervoxels(syn.points, spec.cell_size)
    return syn.weak_from(weak, semantic, offsets, sv, name=name), syn
