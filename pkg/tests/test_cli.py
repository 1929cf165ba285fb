import csv
import json

import numpy as np
import pytest

from cgcrw.cli import main
from cgcrw.config import RunConfig
from cgcrw.core import load_scene, read_prediction, save_scene, validate_scene

SMALL = {
    "scene": {"classes": 2, "instances_per_class": [2, 2], "points_per_instance": [150, 200], "gap": 1.0},
}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_synth_scenes_validate_and_repeat(tmp_path, cfg):
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "a"), "--scenes", "3", "--seed", "4"]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "b"), "--scenes", "3", "--seed", "4"]) == 0
    dirs = sorted(p.name for p in (tmp_path / "a").iterdir() if p.is_dir())
    assert dirs == ["scene_0000", "scene_0001", "scene_0002"]
    for d in dirs:
        s = load_scene(tmp_path / "a" / d)
        validate_scene(s.points, s.semantic, s.offsets, s.weak, s.foreground_classes, s.supervoxels)
        assert json.loads((tmp_path / "a" / d / "meta.json").read_text())["spec"]["rng_seed"] == 4 + int(d[-4:])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    echo = json.loads((tmp_path / "a" / "config.json").read_text())
    assert echo["scene"]["rng_seed"] == 4 and echo["scene"]["points_per_instance"] == [150, 200]


def test_synth_zero_scenes(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "o"), "--scenes", "0"]) == 0
    assert not [p for p in (tmp_path / "o").iterdir() if p.is_dir()]


def test_segment_eval_pipeline(tmp_path, cfg):
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s"), "--scenes", "1"])
    scene_dir = tmp_path / "s" / "scene_0000"
    for algo in ("cgcrw", "rw", "kmeans", "bfs"):
        assert main(["segment", str(scene_dir), "--config", str(cfg), "--algo", algo, "--out", str(tmp_path / "p" / algo)]) == 0
    labels, conf, _ = read_prediction(tmp_path / "p" / "cgcrw")
    scene = load_scene(scene_dir)
    assert np.array_equal(labels, scene.gt_instance)
    assert set(conf) == {0, 1, 2, 3}
    timing = (tmp_path / "p" / "cgcrw" / "timing.txt").read_text().split()
    assert timing[:3] == ["algo", "cgcrw", "wall_seconds"] and float(timing[3]) >= 0

    assert main(["eval", str(scene_dir), "--pred", str(tmp_path / "p"), "--out", str(tmp_path / "r")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "r" / "metrics.csv")))
    means = {(r["algo"], r["metric"]): float(r["value"]) for r in rows if r["class"] == "mean"}
    assert means[("cgcrw", "mAP")] == 1.0 and means[("cgcrw", "miou")] == 1.0
    for algo in ("cgcrw", "rw", "kmeans", "bfs"):
        assert sum(1 for r in rows if r["algo"] == algo and r["class"] == "mean" and r["metric"] == "mAP") == 1
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert set(report) == {"bfs", "cgcrw", "kmeans", "rw"}


def test_rw_equals_cgcrw_t2_zero(tmp_path, cfg):
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s"), "--scenes", "1", "--seed", "9"])
    scene_dir = str(tmp_path / "s" / "scene_0000")
    t2 = tmp_path / "t2.json"
    t2.write_text(json.dumps({**SMALL, "cgcrw": {"t2_max": 0}}))
    main(["segment", scene_dir, "--config", str(cfg), "--algo", "rw", "--out", str(tmp_path / "rw")])
    main(["segment", scene_dir, "--config", str(t2), "--algo", "cgcrw", "--out", str(tmp_path / "c0")])
    for f in ("pred_instance.txt", "pred_confidence.txt", "pred_semantic.txt"):
        assert (tmp_path / "rw" / f).read_bytes() == (tmp_path / "c0" / f).read_bytes()


def test_gt_and_empty_predictions(tmp_path, cfg):
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s"), "--scenes", "1"])
    scene_dir = tmp_path / "s" / "scene_0000"
    scene = load_scene(scene_dir)
    gt_pred = tmp_path / "gt"
    gt_pred.mkdir()
    (gt_pred / "pred_instance.txt").write_text("".join(f"{x}\n" for x in scene.gt_instance))
    (gt_pred / "pred_confidence.txt").write_text("".join(f"{i} 1.0\n" for i in range(4)))
    (gt_pred / "pred_semantic.txt").write_text("".join(f"{x}\n" for x in scene.gt_semantic))
    assert main(["eval", str(scene_dir), "--pred", str(gt_pred), "--out", str(tmp_path / "r1")]) == 0
    rep = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert rep["miou"] == 1.0 and rep["mAP"] == 1.0

    none = tmp_path / "none"
    none.mkdir()
    (none / "pred_instance.txt").write_text("-1\n" * scene.n)
    (none / "pred_confidence.txt").write_text("")
    assert main(["eval", str(scene_dir), "--pred", str(none), "--out", str(tmp_path / "r2")]) == 0
    rep = json.loads((tmp_path / "r2" / "report.json").read_text())
    assert rep["mAP"] == 0.0 and rep["mAP25"] == 0.0


def test_bench_t2_sweep(tmp_path, cfg):
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s"), "--scenes", "2"])
    rc = main(["bench", str(tmp_path / "s"), "--config", str(cfg), "--algo", "cgcrw,kmeans", "--t2-sweep", "0,1,5,10", "--out", str(tmp_path / "b")])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "b" / "bench.csv")))
    mean_ap = [r for r in rows if r["scene"] == "mean" and r["metric"] == "mAP" and r["algo"].startswith("cgcrw")]
    assert [r["algo"] for r in mean_ap] == ["cgcrw_t2=0", "cgcrw_t2=1", "cgcrw_t2=5", "cgcrw_t2=10"]
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert set(summary) == {"cgcrw_t2=0", "cgcrw_t2=1", "cgcrw_t2=5", "cgcrw_t2=10", "kmeans"}
    assert (tmp_path / "b" / "config.json").is_file()


def test_errors(tmp_path, cfg, capsys):
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s"), "--scenes", "1"])
    scene_dir = tmp_path / "s" / "scene_0000"
    (scene_dir / "offsets.txt").unlink()
    assert main(["segment", str(scene_dir), "--out", str(tmp_path / "p")]) == 2
    assert "offsets.txt" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cgcrw": {"alpha": 0.2, "beta": 1}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "beta" in capsys.readouterr().err
    bad.write_text(json.dumps({"extras": {}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["bench", str(tmp_path / "nothing"), "--out", str(tmp_path / "y")]) == 2


def test_config_round_trip(tmp_path):
    c = RunConfig.from_dict({"cgcrw": {"sigma": 0.5, "t2_max": 3}, "baseline": {"algorithm": "bfs"}, **SMALL})
    again = RunConfig.from_dict(json.loads(c.to_json()))
    assert again == c
    assert c.cgcrw.sigma == 0.5 and c.cgcrw.alpha == 0.2
    assert RunConfig.load(None) == RunConfig()
    with pytest.raises(ValueError):
        RunConfig.from_dict({"cgcrw": {"alpha": 2.0}})


def test_segment_writes_no_partial_files(tmp_path, cfg):
    main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s"), "--scenes", "1"])
    main(["segment", str(tmp_path / "s" / "scene_0000"), "--out", str(tmp_path / "p")])
    assert not list(tmp_path.rglob("*.partial"))
