import numpy as np
import pytest

from sherdmatch.pattern_core import PointSet


def random_points(rng, n, width, height):
    """``n`` distinct random pixels of a ``width`` x ``height`` raster (fewer if it is full)."""
    flat = rng.choice(width * height, size=min(n, width * height), replace=False)
    return PointSet(np.column_stack([flat % width, flat // width]), width, height)


def brute_round(v: float) -> int:
    # ties away from zero, written independently of the library helper
    from decimal import ROUND_HALF_UP, Decimal

    return int(Decimal(repr(v)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_design():
    """A 40 x 40 design: a ring and an L-shaped stroke."""
    from skimage import draw

    mask = np.zeros((40, 40), dtype=bool)
    rr, cc = draw.circle_perimeter(14, 14, 8)
    mask[rr, cc] = True
    mask[28, 6:34] = True
    mask[8:28, 33] = True
    return PointSet.from_mask(mask)
