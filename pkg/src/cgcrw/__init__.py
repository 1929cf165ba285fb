"""Weakly supervised point-cloud instance segmentation with cross-graph competing random walks.

One annotated point per object is spread over its supervoxel, then every
semantic class runs a set of competing random walks (one graph per instance)
over a Gaussian affinity in offset-shifted coordinates.
"""
from .baselines import BaselineParams, bfs_cluster, kmeans_cluster, segment_scene_baseline
from .core import (
    CgcrwParams,
    InstanceLabeling,
    Scene,
    SceneError,
    WeakAnnotations,
    load_scene,
    save_scene,
    spread_weak_labels,
    validate_scene,
)
from .evaluate import EvalReport, evaluate, instance_ap, precision_recall_at_iou, semantic_miou
from .graph import build_affinity, build_transition, choose_backend, mask_cross_label_edges, row_normalize
from .synth import SceneSpec, build_scene, generate_scene
from .walk import (
    GraphGroup,
    compete_softmax,
    init_seed_vector,
    propagate_step,
    run_cgcrw,
    segment_scene,
    steady_state,
    update_seeds,
)

__version__ = "0.1.0"
