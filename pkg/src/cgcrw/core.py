"""Scene data model: per-point fields, weak annotations, validation, bundle I/O."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

UNKNOWN = -1

POINTS_FILE = "points.txt"
SEMANTIC_FILE = "semantic.txt"
OFFSETS_FILE = "offsets.txt"
WEAK_FILE = "weak.txt"
SUPERVOXELS_FILE = "supervoxels.txt"
GT_INSTANCE_FILE = "gt_instance.txt"
GT_SEMANTIC_FILE = "gt_semantic.txt"
META_FILE = "meta.json"


class SceneError(ValueError):
    """Invalid scene data. ``field`` names the offending input, ``index`` the offending row."""

    def __init__(self, message: str, field: str | None = None, index: int | None = None):
        super().__init__(message)
        self.field = field
        self.index = index


@dataclass(frozen=True)
class CgcrwParams:
    """Hyperparameters of the competing random walk.

    ``sigma`` is the Gaussian kernel width in meters. Results are sensitive to
    it: it should be comparable to the spacing between neighbouring objects in
    shifted coordinates, not to the point spacing.
    """

    alpha: float = 0.2
    theta: float = 0.5
    sigma: float = 0.3
    t1_max: int = 1
    t2_max: int = 5
    subsample_cap: int = 25_000
    dense_limit: int = 8192
    kernel_cutoff: float = float(np.exp(-4.5))
    rng_seed: int = 0
    phase1: str = "steps"

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.t1_max < 0 or self.t2_max < 0:
            raise ValueError("t1_max and t2_max must be >= 0")
        if self.subsample_cap < 1 or self.dense_limit < 1:
            raise ValueError("subsample_cap and dense_limit must be >= 1")
        if not 0.0 <= self.kernel_cutoff < 1.0:
            raise ValueError(f"kernel_cutoff must be in [0, 1), got {self.kernel_cutoff}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        if self.phase1 not in ("steps", "steady"):
            raise ValueError(f"phase1 must be 'steps' or 'steady', got {self.phase1!r}")


@dataclass
class WeakAnnotations:
    """One ``(point_index, semantic_id, instance_id)`` row per annotated object."""

    point_index: np.ndarray
    semantic_id: np.ndarray
    instance_id: np.ndarray

    @classmethod
    def from_rows(cls, rows) -> "WeakAnnotations":
        arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())

    def __len__(self) -> int:
        return len(self.point_index)

    def rows(self) -> np.ndarray:
        return np.stack([self.point_index, self.semantic_id, self.instance_id], axis=1)

    def counts_per_class(self) -> dict[int, int]:
        ids, counts = np.unique(self.semantic_id, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


@dataclass
class InstanceLabeling:
    """Per-point instance ids plus per-instance confidence and semantic class."""

    labels: np.ndarray
    confidence: dict[int, float] = field(default_factory=dict)
    instance_class: dict[int, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def instance_ids(self) -> np.ndarray:
        ids = np.unique(self.labels)
        return ids[ids >= 0]


@dataclass
class Scene:
    """A validated scene bundle. Arrays are read-only after :func:`validate_scene`."""

    points: np.ndarray
    semantic: np.ndarray
    offsets: np.ndarray
    weak: WeakAnnotations
    foreground_classes: tuple[int, ...]
    supervoxels: np.ndarray | None = None
    gt_instance: np.ndarray | None = None
    gt_semantic: np.ndarray | None = None
    name: str = "scene"

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def shifted(self) -> np.ndarray:
        return self.points + self.offsets


def _check_finite(arr: np.ndarray, name: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise SceneError(f"{name}: non-finite value at row {row}", field=name, index=row)


def _check_length(arr, n: int, name: str) -> None:
    if arr.shape[0] != n:
        raise SceneError(f"{name}: expected {n} rows, got {arr.shape[0]}", field=name, index=min(arr.shape[0], n))


def validate_scene(
    points,
    semantic,
    offsets,
    weak: WeakAnnotations,
    foreground_classes,
    supervoxels=None,
    gt_instance=None,
    gt_semantic=None,
    name: str = "scene",
) -> Scene:
    """Check every field against the shared point index space and build a :class:`Scene`.

    Raises :class:`SceneError` naming the field and the offending row.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n < 1:
        raise SceneError("points: scene must contain at least one point", field="points", index=0)
    _check_finite(points, "points")

    semantic = np.asarray(semantic, dtype=np.int64).reshape(-1)
    _check_length(semantic, n, "semantic")
    below = np.flatnonzero(semantic < UNKNOWN)
    if below.size:
        raise SceneError(f"semantic: invalid class id at row {below[0]}", field="semantic", index=int(below[0]))

    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
    _check_length(offsets, n, "offsets")
    _check_finite(offsets, "offsets")

    fg = tuple(sorted({int(c) for c in foreground_classes}))
    if any(c < 0 for c in fg):
        raise SceneError("meta: foreground class ids must be >= 0", field="foreground_classes")
    fg_set = set(fg)

    m = len(weak)
    pidx = np.asarray(weak.point_index, dtype=np.int64)
    for row in range(m):
        p = int(pidx[row])
        if not 0 <= p < n:
            raise SceneError(f"weak: point_index {p} out of range [0, {n}) at row {row}", field="weak", index=row)
        if int(weak.semantic_id[row]) not in fg_set:
            raise SceneError(
                f"weak: semantic id {int(weak.semantic_id[row])} at row {row} is not a foreground class",
                field="weak",
                index=row,
            )
    _, first = np.unique(pidx, return_index=True)
    if first.size != m:
        row = int(np.setdiff1d(np.arange(m), first)[0])
        raise SceneError(f"weak: duplicate point_index {int(pidx[row])} at row {row}", field="weak", index=row)
    inst = np.asarray(weak.instance_id, dtype=np.int64)
    if (inst < 0).any():
        row = int(np.flatnonzero(inst < 0)[0])
        raise SceneError(f"weak: negative instance id at row {row}", field="weak", index=row)
    _, first = np.unique(inst, return_index=True)
    if first.size != m:
        row = int(np.setdiff1d(np.arange(m), first)[0])
        raise SceneError(f"weak: duplicate instance id {int(inst[row])} at row {row}", field="weak", index=row)

    if supervoxels is not None:
        supervoxels = np.asarray(supervoxels, dtype=np.int64).reshape(-1)
        _check_length(supervoxels, n, "supervoxels")
        neg = np.flatnonzero(supervoxels < 0)
        if neg.size:
            raise SceneError(f"supervoxels: negative segment id at row {neg[0]}", field="supervoxels", index=int(neg[0]))
    if gt_instance is not None:
        gt_instance = np.asarray(gt_instance, dtype=np.int64).reshape(-1)
        _check_length(gt_instance, n, "gt_instance")
    if gt_semantic is not None:
        gt_semantic = np.asarray(gt_semantic, dtype=np.int64).reshape(-1)
        _check_length(gt_semantic, n, "gt_semantic")

    weak = WeakAnnotations(pidx.copy(), np.asarray(weak.semantic_id, dtype=np.int64).copy(), inst.copy())
    arrays = [points, semantic, offsets, weak.point_index, weak.semantic_id, weak.instance_id]
    arrays += [a for a in (supervoxels, gt_instance, gt_semantic) if a is not None]
    for a in arrays:
        a.setflags(write=False)
    return Scene(points, semantic, offsets, weak, fg, supervoxels, gt_instance, gt_semantic, name)


def spread_weak_labels(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Copy each annotation's labels onto every point of its supervoxel.

    Returns ``(instance, semantic)`` arrays with ``-1`` where nothing was spread.
    When several annotations share a supervoxel, its points go to the nearest
    annotated point (Euclidean, original coordinates; ties to the earlier row).
    Without supervoxels only the annotated points themselves are labeled.
    """
    n = scene.n
    inst = np.full(n, UNKNOWN, dtype=np.int64)
    sem = np.full(n, UNKNOWN, dtype=np.int64)
    weak = scene.weak
    if len(weak) == 0:
        return inst, sem
    if scene.supervoxels is None:
        inst[weak.point_index] = weak.instance_id
        sem[weak.point_index] = weak.semantic_id
        return inst, sem

    sv = scene.supervoxels
    ann_seg = sv[weak.point_index]
    for seg in np.unique(ann_seg):
        rows = np.flatnonzero(ann_seg == seg)
        members = np.flatnonzero(sv == seg)
        if rows.size == 1:
            owner = np.zeros(members.size, dtype=np.int64)
        else:
            anchors = scene.points[weak.point_index[rows]]
            d2 = ((scene.points[members, None, :] - anchors[None, :, :]) ** 2).sum(-1)
            owner = np.argmin(d2, axis=1)
        inst[members] = weak.instance_id[rows[owner]]
        sem[members] = weak.semantic_id[rows[owner]]
    # an annotated point always keeps its own label
    inst[weak.point_index] = weak.instance_id
    sem[weak.point_index] = weak.semantic_id
    return inst, sem


# ---------------------------------------------------------------------------
# bundle I/O


def _load_table(path: Path, dtype, ncols: int) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != ncols:
                raise SceneError(f"{path.name}:{lineno}: expected {ncols} values, got {len(parts)}", field=path.name)
            try:
                rows.append([dtype(p) for p in parts])
            except ValueError as exc:
                raise SceneError(f"{path.name}:{lineno}: {exc}", field=path.name) from None
    arr = np.array(rows, dtype=np.float64 if dtype is float else np.int64)
    return arr.reshape(-1, ncols) if ncols > 1 else arr.reshape(-1)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise SceneError(f"missing required file: {path}", field=path.name)
    return path


def load_scene(directory: str | os.PathLike) -> Scene:
    """Read and validate a bundle directory."""
    d = Path(directory)
    if not d.is_dir():
        raise SceneError(f"scene directory not found: {d}", field="scene")
    meta = json.loads(_require(d / META_FILE).read_text(encoding="utf-8"))
    points = _load_table(_require(d / POINTS_FILE), float, 3)
    semantic = _load_table(_require(d / SEMANTIC_FILE), int, 1)
    offsets = _load_table(_require(d / OFFSETS_FILE), float, 3)
    weak = WeakAnnotations.from_rows(_load_table(_require(d / WEAK_FILE), int, 3))
    optional = {}
    for key, fname in (("supervoxels", SUPERVOXELS_FILE), ("gt_instance", GT_INSTANCE_FILE), ("gt_semantic", GT_SEMANTIC_FILE)):
        p = d / fname
        optional[key] = _load_table(p, int, 1) if p.is_file() else None
    return validate_scene(
        points,
        semantic,
        offsets,
        weak,
        meta.get("foreground_classes", []),
        name=meta.get("scene", d.name),
        **optional,
    )


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_text_atomic(path: Path, text: str) -> None:
    """Write via a ``.partial`` sibling and rename, so readers never see half a file."""
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def format_ints(values) -> str:
    return "".join(f"{int(v)}\n" for v in values)


def format_vectors(arr: np.ndarray) -> str:
    return "".join(" ".join(_fmt_float(v) for v in row) + "\n" for row in arr)


def save_scene(scene: Scene, directory: str | os.PathLike, extra_meta: dict | None = None) -> Path:
    """Write a bundle. Floats use ``repr`` so a reload is bit-exact."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_text_atomic(d / POINTS_FILE, format_vectors(scene.points))
    write_text_atomic(d / SEMANTIC_FILE, format_ints(scene.semantic))
    write_text_atomic(d / OFFSETS_FILE, format_vectors(scene.offsets))
    write_text_atomic(
        d / WEAK_FILE,
        "# point_index semantic_id instance_id\n" + "".join(f"{p} {s} {i}\n" for p, s, i in scene.weak.rows()),
    )
    if scene.supervoxels is not None:
        write_text_atomic(d / SUPERVOXELS_FILE, format_ints(scene.supervoxels))
    if scene.gt_instance is not None:
        write_text_atomic(d / GT_INSTANCE_FILE, format_ints(scene.gt_instance))
    if scene.gt_semantic is not None:
        write_text_atomic(d / GT_SEMANTIC_FILE, format_ints(scene.gt_semantic))
    meta = {"scene": scene.name, "foreground_classes": list(scene.foreground_classes)}
    if extra_meta:
        meta.update(extra_meta)
    write_text_atomic(d / META_FILE, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def scenes_equal(a: Scene, b: Scene) -> bool:
    for f in fields(Scene):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, WeakAnnotations):
            if not np.array_equal(x.rows(), y.rows()):
                return False
        elif isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if x is None or y is None or not np.array_equal(x, y):
                return False
        elif x != y:
            return False
    return True


def with_semantic(scene: Scene, semantic: np.ndarray) -> Scene:
    semantic = np.asarray(semantic, dtype=np.int64)
    semantic.setflags(write=False)
    return replace(scene, semantic=semantic)


PRED_INSTANCE_FILE = "pred_instance.txt"
PRED_CONFIDENCE_FILE = "pred_confidence.txt"
PRED_SEMANTIC_FILE = "pred_semantic.txt"


def write_prediction(labeling: InstanceLabeling, directory, semantic: np.ndarray | None = None) -> Path:
    """Write ``pred_instance.txt``, ``pred_confidence.txt`` and optionally ``pred_semantic.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_text_atomic(d / PRED_INSTANCE_FILE, format_ints(labeling.labels))
    lines = "".join(f"{i} {_fmt_float(labeling.confidence[i])}\n" for i in sorted(labeling.confidence))
    write_text_atomic(d / PRED_CONFIDENCE_FILE, lines)
    if semantic is not None:
        write_text_atomic(d / PRED_SEMANTIC_FILE, format_ints(semantic))
    return d


def read_prediction(directory) -> tuple[np.ndarray, dict[int, float], np.ndarray | None]:
    """Inverse of :func:`write_prediction`: ``(labels, confidence, semantic or None)``."""
    d = Path(directory)
    labels = _load_table(_require(d / PRED_INSTANCE_FILE), int, 1)
    conf_path = _require(d / PRED_CONFIDENCE_FILE)
    confidence = {}
    with open(conf_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SceneError(f"{conf_path.name}:{lineno}: expected 'instance_id confidence'", field=conf_path.name)
            confidence[int(parts[0])] = float(parts[1])
    sem_path = d / PRED_SEMANTIC_FILE
    semantic = _load_table(sem_path, int, 1) if sem_path.is_file() else None
    return labels, confidence, semantic


def majority_class(labels: np.ndarray, semantic: np.ndarray) -> dict[int, int]:
    """Most frequent class among the points of each instance (ties to the lower class id)."""
    out = {}
    for i in np.unique(labels):
        if i < 0:
            continue
        vals, counts = np.unique(semantic[labels == i], return_counts=True)
        out[int(i)] = int(vals[np.argmax(counts)])
    return out
