"""End-to-end acceptance gate.

Each test checks one numbered criterion and records a PASS/FAIL line; the lines
are printed together at the end of the pytest run (see ``conftest.py``). Run
``python tests/test_acceptance.py`` for the gate alone.
"""
import json
import time

import numpy as np
import pytest

import cgcrw.walk as walk
from cgcrw.cli import evaluate_scene, main, run_algorithm
from cgcrw.config import RunConfig
from cgcrw.core import CgcrwParams, InstanceLabeling, load_scene
from cgcrw.evaluate import instance_ap, semantic_miou
from cgcrw.graph import AffinityMatrix, build_affinity, build_transition, mask_cross_label_edges, row_normalize
from cgcrw.synth import SceneSpec, build_scene
from cgcrw.walk import compete_softmax, effective_semantic, propagate_step, segment_scene, steady_state

from conftest import random_stochastic

pytestmark = pytest.mark.slow

RESULTS = {}  # criterion number -> (passed, detail)
WEAK_CHECKS = []  # (run name, annotated points kept)

# Packed pairs of same-class boxes, 5 cm apart, half-strength offsets with noise at
# half the radius, 3% semantic flips and a background floor.
BENCH_SCENE = dict(
    classes=2,
    instances_per_class=(2, 2),
    points_per_instance=(1500, 2000),
    instance_radius=(0.4, 0.4),
    packing="packed",
    gap=0.05,
    offset_quality=0.5,
    offset_noise=0.2,
    semantic_flip_rate=0.03,
    background_points=8000,
)
BENCH_RUN = RunConfig.from_dict(
    {
        "cgcrw": {"sigma": 0.5},
        "baseline": {"coords": "shifted", "bfs_radius": 0.15, "bfs_min_points": 50},
    }
)
BENCH_SCENES = 50


def record(n, passed, detail):
    RESULTS[n] = (bool(passed), detail)
    print(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


def track(name, scene, labeling: InstanceLabeling):
    kept = bool(np.array_equal(labeling.labels[scene.weak.point_index], scene.weak.instance_id))
    WEAK_CHECKS.append((name, kept))
    return labeling


# ---------------------------------------------------------------------------


def test_criterion_01_steady_state_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        a = random_stochastic(rng, n, density=float(rng.uniform(0.05, 1.0)))
        b0 = np.zeros(n)
        b0[rng.choice(n, size=int(rng.integers(1, 5)), replace=False)] = 1.0
        b0 /= b0.sum()
        b = b0
        for _ in range(500):
            b = propagate_step(a, b, b0, 0.2)
        worst = max(worst, float(np.abs(steady_state(a, b0, 0.2) - b).max()))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-6 and wall < 10
    assert record(1, ok, f"max-abs {worst:.2e} (<= 1e-6), {wall:.2f}s (< 10s)")


def test_criterion_02_stochasticity():
    rng = np.random.default_rng(2)
    worst_row = worst_col = 0.0
    for i in range(100):
        n = int(rng.integers(1, 150))
        x = rng.random((n, 3)) * rng.uniform(0.1, 5)
        ids = rng.integers(-1, 5, n)
        if i % 2:
            a = build_transition(x, rng.normal(size=(n, 3)) * 0.1, ids, CgcrwParams(sigma=float(rng.uniform(0.05, 1))), backend="sparse")
        else:
            a = row_normalize(mask_cross_label_edges(AffinityMatrix(rng.random((n, n)) * (rng.random((n, n)) < 0.2)), ids))
        worst_row = max(worst_row, float(np.abs(a.toarray().sum(axis=1) - 1).max()))
        k = int(rng.integers(1, 8))
        s = compete_softmax(rng.random((k, n)) * 10)
        worst_col = max(worst_col, float(np.abs(s.sum(axis=0) - 1).max()))
    ok = worst_row <= 1e-9 and worst_col <= 1e-9
    assert record(2, ok, f"row-sum err {worst_row:.1e}, softmax err {worst_col:.1e} (<= 1e-9)")


def test_criterion_03_separable_exactness():
    params = CgcrwParams()
    ap50, exact = [], 0
    for seed in range(20):
        spec = SceneSpec(
            classes=2, instances_per_class=(2, 3), points_per_instance=(200, 400),
            packing="separable", gap=5 * params.sigma, rng_seed=100 + seed,
        )
        scene, _ = build_scene(spec)
        lab = track(f"separable {seed}", scene, segment_scene(scene, params))
        rep = evaluate_scene(scene, lab.labels, lab.confidence, effective_semantic(scene))
        ap50.append(rep.mAP50)
        gt_cls = {int(i): int(scene.gt_semantic[scene.gt_instance == i][0]) for i in np.unique(scene.gt_instance) if i >= 0}
        same = np.array_equal(lab.labels, scene.gt_instance) and lab.instance_class == gt_cls
        exact += same
    ok = min(ap50) == 1.0 and exact == 20
    assert record(3, ok, f"min AP50 {min(ap50):.3f} (= 1.0), exact group assignment {exact}/20")


@pytest.fixture(scope="module")
def bench():
    """AP per scene for every algorithm and noise level the trend criteria need."""
    out = {}
    radius = BENCH_SCENE["instance_radius"][0]
    for factor in (0.25, 0.5, 1.0):
        noise = factor * radius
        for i in range(BENCH_SCENES):
            scene, _ = build_scene(SceneSpec(**{**BENCH_SCENE, "offset_noise": noise, "rng_seed": 1000 + i}))
            runs = [("kmeans", BENCH_RUN), ("cgcrw_t2=5", BENCH_RUN)]
            if factor == 0.5:
                runs += [("bfs", BENCH_RUN), ("cgcrw_t2=0", BENCH_RUN.with_cgcrw(t2_max=0)),
                         ("cgcrw_t2=10", BENCH_RUN.with_cgcrw(t2_max=10))]
            for name, cfg in runs:
                algo = name.split("_")[0]
                lab = track(f"{name} noise {noise} scene {i}", scene, run_algorithm(scene, cfg, algo))
                rep = evaluate_scene(scene, lab.labels, lab.confidence, effective_semantic(scene))
                out.setdefault((name, factor), []).append((rep.mAP, rep.mAP50))
    return {k: np.array(v) for k, v in out.items()}


def test_criterion_04_competition_trend(bench):
    ap0 = bench[("cgcrw_t2=0", 0.5)][:, 0]
    ap5 = bench[("cgcrw_t2=5", 0.5)][:, 0]
    ap10 = bench[("cgcrw_t2=10", 0.5)][:, 0]
    strict = float((ap5 > ap0).mean())
    ok = ap5.mean() >= ap0.mean() and strict >= 0.6 and ap10.mean() >= ap5.mean() - 0.01
    detail = f"mean AP t2=0 {ap0.mean():.3f}, t2=5 {ap5.mean():.3f}, t2=10 {ap10.mean():.3f}; strict gain on {strict:.0%} of scenes"
    assert record(4, ok, detail)


def test_criterion_05_baseline_ordering(bench):
    cg = bench[("cgcrw_t2=5", 0.5)][:, 1].mean()
    km = bench[("kmeans", 0.5)][:, 1].mean()
    bfs = bench[("bfs", 0.5)][:, 1].mean()
    km_curve = [bench[("kmeans", f)][:, 1].mean() for f in (0.25, 0.5, 1.0)]
    cg_curve = [bench[("cgcrw_t2=5", f)][:, 1].mean() for f in (0.25, 0.5, 1.0)]
    km_drop = np.diff(km_curve) * -1
    cg_drop = np.diff(cg_curve) * -1
    ok = cg > km and cg > bfs and (km_drop > 0).all() and (cg_drop < km_drop).all()
    detail = (
        f"AP50 cgcrw {cg:.3f} > kmeans {km:.3f}, bfs {bfs:.3f}; "
        f"kmeans AP50 {'/'.join(f'{v:.3f}' for v in km_curve)}, cgcrw {'/'.join(f'{v:.3f}' for v in cg_curve)}"
    )
    assert record(5, ok, detail)


def test_criterion_07_subsample_upsample(monkeypatch):
    spec = SceneSpec(classes=1, instances_per_class=(4, 4), points_per_instance=(7500, 7500), gap=1.5, rng_seed=3)
    scene, _ = build_scene(spec)
    sizes = []
    real = walk.run_cgcrw

    def spy(group, params):
        sizes.append(group.n)
        return real(group, params)

    monkeypatch.setattr(walk, "run_cgcrw", spy)
    lab = track("subsampled", scene, segment_scene(scene, CgcrwParams(subsample_cap=25_000)))
    rep = evaluate_scene(scene, lab.labels, lab.confidence, effective_semantic(scene))
    covered = int((lab.labels >= 0).sum())
    ok = sizes == [25_000] and covered == 30_000 and rep.mAP50 == 1.0
    assert record(7, ok, f"walk nodes {sizes}, labeled {covered}/30000, AP50 {rep.mAP50:.3f}")


def _pipeline(root, threads):
    root.mkdir(parents=True)
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"scene": {"points_per_instance": [300, 500], "offset_quality": 0.6, "offset_noise": 0.05,
                                         "semantic_flip_rate": 0.02, "background_points": 500}}))
    rc = [main(["synth", "--config", str(cfg), "--out", str(root / "s"), "--scenes", "2", "--seed", "21"])]
    for d in sorted((root / "s").glob("scene_*")):
        for algo in ("cgcrw", "kmeans"):
            pred = root / "p" / d.name / algo
            rc.append(main(["segment", str(d), "--config", str(cfg), "--algo", algo, "--out", str(pred), "--threads", str(threads)]))
            labels = (pred / "pred_instance.txt").read_text().split()
            scene = load_scene(d)
            WEAK_CHECKS.append((f"cli {algo} {d.name}", [int(labels[i]) for i in scene.weak.point_index] == scene.weak.instance_id.tolist()))
        rc.append(main(["eval", str(d), "--pred", str(root / "p" / d.name), "--out", str(root / "r" / d.name)]))
    files = {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timing.txt"
    }
    return rc, files


def test_criterion_08_determinism(tmp_path):
    runs = {}
    for threads in (1, 8):
        for rep in range(2):
            rc, files = _pipeline(tmp_path / f"t{threads}_{rep}", threads)
            assert set(rc) == {0}
            runs[(threads, rep)] = files
    same_1 = runs[(1, 0)] == runs[(1, 1)]
    same_8 = runs[(8, 0)] == runs[(8, 1)]
    across = runs[(1, 0)] == runs[(8, 0)]
    n_files = len(runs[(1, 0)])
    ok = same_1 and same_8 and across and n_files > 0
    assert record(8, ok, f"{n_files} files byte-identical: 1 thread {same_1}, 8 threads {same_8}, 1 vs 8 {across}")


def test_criterion_09_metric_hand_examples():
    def ap(pred, gt):
        pc = {int(i): 1 for i in np.unique(pred) if i >= 0}
        gc = {int(i): 1 for i in np.unique(gt) if i >= 0}
        return instance_ap(np.array(pred), {i: 1.0 for i in pc}, pc, np.array(gt), gc, [1])[1]

    a = ap([0] * 4 + [-1] * 6, [0] * 10)
    b = ap([5] * 6 + [-1] * 14, [0] * 10 + [1] * 10)
    c = ap([0] * 10, [0] * 10)
    iou, _ = semantic_miou(np.array([1] * 5 + [0] * 15), np.array([1] * 10 + [0] * 10), [1])
    ok = (a["AP25"], a["AP50"]) == (1.0, 0.0) and b["AP50"] == 0.5 and c == {"AP": 1.0, "AP50": 1.0, "AP25": 1.0} and iou[1] == 0.5
    detail = f"IoU 0.4 -> AP25 {a['AP25']}/AP50 {a['AP50']}; half-matched AP50 {b['AP50']}; perfect {c['AP']}; IoU_c {iou[1]}"
    assert record(9, ok, detail)


def test_criterion_10_runtime_budget():
    spec = SceneSpec(
        classes=1, instances_per_class=(20, 20), points_per_instance=(1250, 1250), instance_radius=(0.3, 0.5),
        arena=12.0, gap=0.3, offset_quality=0.5, offset_noise=0.1, rng_seed=1,
    )
    scene, _ = build_scene(spec)
    params = CgcrwParams(t2_max=5)
    backend = "sparse" if scene.n > params.dense_limit else "dense"
    t0 = time.perf_counter()
    lab = track("runtime", scene, segment_scene(scene, params))
    wall = time.perf_counter() - t0
    k = len(scene.weak)
    ok = scene.n == 25_000 and k <= 20 and backend == "sparse" and wall < 60
    assert record(10, ok, f"{scene.n} points, k={k}, {backend} backend, {wall:.1f}s (< 60s)")


def test_criterion_06_weak_label_fidelity():
    # runs last: it audits every labeling produced above
    if not WEAK_CHECKS:
        scene, _ = build_scene(SceneSpec(**{**BENCH_SCENE, "rng_seed": 5}))
        for algo in ("cgcrw", "rw", "kmeans", "bfs"):
            track(algo, scene, run_algorithm(scene, BENCH_RUN, algo))
    bad = [name for name, kept in WEAK_CHECKS if not kept]
    ok = not bad
    assert record(6, ok, f"{len(WEAK_CHECKS) - len(bad)}/{len(WEAK_CHECKS)} runs keep every annotated point" + (f"; first failure {bad[0]}" if bad else ""))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
