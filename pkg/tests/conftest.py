import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rigid(rng):
    """Uniform-ish random rotation (QR of a Gaussian matrix) + translation."""
    from sweepkit.geom import RigidTransform

    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return RigidTransform(q, rng.uniform(-100, 100, 3))
