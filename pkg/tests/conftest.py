import numpy as np
import pytest

from resectsim import geometry, phantom


@pytest.fixture(scope="session")
def default_scene_factory():
    """Fresh seed-1 scene per call (cuts mutate scenes)."""

    def make(seed=1, resolution=None):
        trachea, tumor, res = phantom.default_specs(seed)
        return phantom.generate_phantom(trachea, tumor, resolution or res)

    return make


@pytest.fixture(scope="session")
def seed1_snapshot():
    """Rendered default phantom (seed 1), shared read-only."""
    trachea, tumor, res = phantom.default_specs(1)
    scene = phantom.generate_phantom(trachea, tumor, res)
    pose = phantom.top_down_pose(320.0, 0.0, trachea.length / 2.0)
    intr = phantom.default_intrinsics(256)
    snap = phantom.render_snapshot(scene, pose, intr, 256)
    return scene, snap, pose, intr


def random_cloud(rng, n, scale=20.0, labels=False):
    pts = rng.uniform(-scale, scale, (n, 3))
    lab = rng.integers(0, 4, n).astype(np.uint8) if labels else None
    return geometry.PointCloud(pts, lab)
