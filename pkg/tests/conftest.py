import numpy as np
import pytest

from cgcrw.core import WeakAnnotations, validate_scene
from cgcrw.synth import SceneSpec, build_scene


def random_stochastic(rng, n, density=1.0):
    m = rng.random((n, n))
    if density < 1.0:
        m *= rng.random((n, n)) < density
    m[np.arange(n), np.arange(n)] += 1e-3
    return m / m.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_scene():
    """100 points, two foreground classes, one weak label per class."""
    r = np.random.default_rng(0)
    pts = r.random((100, 3))
    sem = np.repeat([1, 2], 50)
    weak = WeakAnnotations.from_rows([(3, 1, 0), (70, 2, 1)])
    return validate_scene(pts, sem, np.zeros((100, 3)), weak, [1, 2], supervoxels=np.arange(100) // 10)


@pytest.fixture(scope="session")
def separable_spec():
    return SceneSpec(
        classes=2,
        instances_per_class=(2, 2),
        points_per_instance=(200, 200),
        instance_radius=(0.3, 0.3),
        packing="separable",
        gap=1.5,
        offset_quality=1.0,
        offset_noise=0.0,
        rng_seed=7,
    )


@pytest.fixture(scope="session")
def separable_scene(separable_spec):
    return build_scene(separable_spec)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    missing = sorted(set(range(1, 11)) - set(results))
    if missing:
        terminalreporter.write_line(f"not run: {', '.join(map(str, missing))}")
