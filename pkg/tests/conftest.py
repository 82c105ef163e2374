import numpy as np
import pytest

from slotex import autodiff as ad


def finite_difference_max_rel_err(make_loss, tensors, step=1e-5, max_coords=None,
                                  rng=None):
    """Central-difference check of d(make_loss)/d(tensor) for leaf tensors.

    Mutates tensor data in place coordinate by coordinate, compares against
    the analytic gradient from backward(), and returns the worst symmetric
    relative error. ``max_coords`` caps the probed coordinates per tensor
    (random subset when an rng is given, the first ones otherwise).
    """
    for t in tensors:
        t.zero_grad()
    ad.backward(make_loss())
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "parameter did not receive a gradient"
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        count = flat.size if max_coords is None else min(flat.size, max_coords)
        if rng is not None and count < flat.size:
            coords = rng.choice(flat.size, size=count, replace=False)
        else:
            coords = range(count)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = float(make_loss().data)
            flat[i] = orig - step
            down = float(make_loss().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            ga = gflat[i]
            worst = max(worst, abs(fd - ga) / (abs(fd) + abs(ga) + 1e-10))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
