import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chns.assembly import Spaces  # noqa: E402
from chns.mesh import UNIT_SQUARE, build_rect_mesh  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_tri():
    """Unit square split into two triangles."""
    return Spaces(build_rect_mesh(UNIT_SQUARE, 1, 1))


@pytest.fixture(params=[1, 2], ids=["2tri", "2x2"])
def small_spaces(request):
    n = request.param
    return Spaces(build_rect_mesh(UNIT_SQUARE, n, n))
