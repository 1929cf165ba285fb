"""Command-line front end: ``synth``, ``segment``, ``eval`` and ``bench``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import segment_scene_baseline
from .config import RunConfig
from .core import (
    InstanceLabeling,
    Scene,
    SceneError,
    load_scene,
    majority_class,
    read_prediction,
    save_scene,
    write_prediction,
    write_text_atomic,
)
from .evaluate import EvalReport, evaluate, rows_to_csv
from .synth import PlacementError, build_scene
from .walk import effective_semantic, segment_scene

log = logging.getLogger("cgcrw")

ALGOS = ("cgcrw", "rw", "kmeans", "bfs")
CONFIG_ECHO = "config.json"


class CliError(Exception):
    pass


def scene_dir_name(index: int) -> str:
    return f"scene_{index:04d}"


def run_algorithm(scene: Scene, config: RunConfig, algo: str, threads: int = 1) -> InstanceLabeling:
    if algo == "cgcrw":
        return segment_scene(scene, config.cgcrw, threads=threads)
    if algo == "rw":
        return segment_scene(scene, config.with_cgcrw(t2_max=0).cgcrw, threads=threads)
    if algo in ("kmeans", "bfs"):
        return segment_scene_baseline(scene, config.with_baseline(algorithm=algo).baseline)
    raise CliError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGOS)}")


def evaluate_scene(scene: Scene, labels, confidence, pred_semantic=None) -> EvalReport:
    if scene.gt_instance is None or scene.gt_semantic is None:
        raise CliError(f"scene {scene.name!r} has no ground truth (gt_instance.txt / gt_semantic.txt)")
    labels = np.asarray(labels)
    if labels.shape[0] != scene.n:
        raise CliError(f"prediction has {labels.shape[0]} points, scene has {scene.n}")
    group_sem = pred_semantic if pred_semantic is not None else effective_semantic(scene)
    pred_class = majority_class(labels, np.asarray(group_sem))
    return evaluate(
        labels,
        confidence,
        pred_class,
        scene.gt_instance,
        scene.gt_semantic,
        scene.foreground_classes,
        pred_semantic=pred_semantic if pred_semantic is not None else scene.semantic,
    )


def _echo(config: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / CONFIG_ECHO, config.to_json())


# ---------------------------------------------------------------------------
# commands


def cmd_synth(config: RunConfig, out: Path, scene_count: int, seed: int | None = None) -> list[Path]:
    """Write ``scene_count`` bundles; scene ``i`` uses seed ``base + i``."""
    if seed is not None:
        config = config.with_scene(rng_seed=seed)
    _echo(config, out)
    dirs = []
    base = int(config.scene.rng_seed)
    for i in range(scene_count):
        spec = config.with_scene(rng_seed=base + i).scene
        try:
            scene, _ = build_scene(spec, name=scene_dir_name(i))
        except PlacementError as exc:
            raise CliError(f"{scene_dir_name(i)}: {exc}") from None
        dirs.append(save_scene(scene, out / scene_dir_name(i), extra_meta={"spec": spec.to_dict()}))
    return dirs


def cmd_segment(scene_dir: Path, config: RunConfig, algo: str, out: Path, threads: int = 1) -> InstanceLabeling:
    if algo not in ALGOS:
        raise CliError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGOS)}")
    scene = load_scene(scene_dir)
    t0 = time.perf_counter()
    labeling = run_algorithm(scene, config, algo, threads)
    wall = time.perf_counter() - t0
    for w in labeling.warnings:
        log.warning("%s: %s", scene.name, w)
    write_prediction(labeling, out, effective_semantic(scene))
    write_text_atomic(out / "timing.txt", f"algo {algo}\nwall_seconds {wall:.6f}\n")
    _echo(config, out)
    return labeling


def _prediction_dirs(pred: Path) -> dict[str, Path]:
    """A directory holding one prediction, or one subdirectory per algorithm."""
    if (pred / "pred_instance.txt").is_file():
        return {"": pred}
    subs = {p.name: p for p in sorted(pred.iterdir()) if (p / "pred_instance.txt").is_file()} if pred.is_dir() else {}
    if not subs:
        raise CliError(f"no pred_instance.txt found in {pred} or its subdirectories")
    return subs


def cmd_eval(scene_dir: Path, pred: Path, out: Path) -> dict[str, EvalReport]:
    scene = load_scene(scene_dir)
    reports = {}
    for algo, d in _prediction_dirs(pred).items():
        labels, confidence, sem = read_prediction(d)
        reports[algo] = evaluate_scene(scene, labels, confidence, sem)
    out.mkdir(parents=True, exist_ok=True)
    if list(reports) == [""]:
        text = reports[""].to_json()
    else:
        text = json.dumps({a: json.loads(r.to_json()) for a, r in reports.items()}, indent=2, sort_keys=True) + "\n"
    write_text_atomic(out / "report.json", text)
    rows = [row for a, r in reports.items() for row in r.rows(a)]
    write_text_atomic(out / "metrics.csv", rows_to_csv(rows))
    return reports


def _bench_variants(algos, t2_sweep):
    variants = []
    for algo in algos:
        if algo == "cgcrw" and t2_sweep:
            variants += [(f"cgcrw_t2={t}", "cgcrw", t) for t in t2_sweep]
        else:
            variants.append((algo, algo, None))
    return variants


BENCH_METRICS = ("mAP", "mAP50", "mAP25", "mPre", "mRec", "miou")


def cmd_bench(
    scenes_dir: Path,
    config: RunConfig,
    algos,
    out: Path,
    t2_sweep=None,
    threads: int = 1,
) -> dict[str, dict[str, float]]:
    """Segment and evaluate every scene with every algorithm; write ``bench.csv`` and ``summary.json``."""
    scene_dirs = sorted(p for p in Path(scenes_dir).iterdir() if (p / "meta.json").is_file())
    if not scene_dirs:
        raise CliError(f"no scene bundles under {scenes_dir}")
    for a in algos:
        if a not in ALGOS:
            raise CliError(f"unknown algorithm {a!r}; choose from {', '.join(ALGOS)}")
    variants = _bench_variants(algos, t2_sweep)

    def one(scene_dir: Path):
        scene = load_scene(scene_dir)
        rows, times = [], {}
        for name, algo, t2 in variants:
            cfg = config if t2 is None else config.with_cgcrw(t2_max=t2)
            t0 = time.perf_counter()
            lab = run_algorithm(scene, cfg, algo)
            times[name] = time.perf_counter() - t0
            rep = evaluate_scene(scene, lab.labels, lab.confidence, effective_semantic(scene))
            rows += [(name, scene_dir.name, m, getattr(rep, m)) for m in BENCH_METRICS]
        return rows, times

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, scene_dirs))
    else:
        results = [one(d) for d in scene_dirs]

    rows = [r for rs, _ in results for r in rs]
    summary = {}
    for name, _, _ in variants:
        summary[name] = {
            m: float(np.mean([r[3] for r in rows if r[0] == name and r[2] == m])) for m in BENCH_METRICS
        }
        rows += [(name, "mean", m, summary[name][m]) for m in BENCH_METRICS]
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / "bench.csv", rows_to_csv(rows, header=("algo", "scene", "metric", "value")))
    write_text_atomic(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    wall = {name: float(sum(t[name] for _, t in results)) for name, _, _ in variants}
    write_text_atomic(out / "timing.txt", "".join(f"{k} wall_seconds {v:.6f}\n" for k, v in wall.items()))
    _echo(config, out)
    return summary


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgcrw", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--out", type=Path, required=out_required, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")

    s = sub.add_parser("synth", help="generate synthetic scene bundles")
    common(s)
    s.add_argument("--scenes", type=int, default=1, help="number of scenes")
    s.add_argument("--seed", type=int, help="base seed (overrides scene.rng_seed)")

    s = sub.add_parser("segment", help="segment one scene bundle")
    s.add_argument("scene_dir", type=Path)
    common(s)
    s.add_argument("--algo", default="cgcrw", choices=ALGOS)
    s.add_argument("--seed", type=int, help="overrides cgcrw.rng_seed and baseline.rng_seed")

    s = sub.add_parser("eval", help="evaluate predictions against a bundle's ground truth")
    s.add_argument("scene_dir", type=Path)
    s.add_argument("--pred", type=Path, required=True, help="prediction directory (or one subdirectory per algorithm)")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("bench", help="segment and evaluate a directory of scenes")
    s.add_argument("scenes_dir", type=Path)
    common(s)
    s.add_argument("--algo", default="cgcrw,kmeans,bfs", help="comma-separated algorithms")
    s.add_argument("--t2-sweep", type=_int_list, help="t2_max values to sweep for cgcrw, e.g. 0,1,5,10")
    s.add_argument("--seed", type=int, help="overrides cgcrw.rng_seed and baseline.rng_seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = RunConfig.load(getattr(args, "config", None))
        if args.command in ("segment", "bench") and args.seed is not None:
            config = config.with_cgcrw(rng_seed=args.seed).with_baseline(rng_seed=args.seed)
        if getattr(args, "threads", 1) < 1:
            raise CliError("--threads must be >= 1")
        if args.command == "synth":
            if args.scenes < 0:
                raise CliError("--scenes must be >= 0")
            cmd_synth(config, args.out, args.scenes, args.seed)
        elif args.command == "segment":
            cmd_segment(args.scene_dir, config, args.algo, args.out, args.threads)
        elif args.command == "eval":
            cmd_eval(args.scene_dir, args.pred, args.out)
        elif args.command == "bench":
            algos = [a.strip() for a in args.algo.split(",") if a.strip()]
            summary = cmd_bench(args.scenes_dir, config, algos, args.out, args.t2_sweep, args.threads)
            for name, m in summary.items():
                print(f"{name:>14}  AP {m['mAP']:.3f}  AP50 {m['mAP50']:.3f}  AP25 {m['mAP25']:.3f}")
    except (CliError, SceneError, ValueError, OSError) as exc:
        print(f"cgcrw {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
