import numpy as np
import pytest

from maploop.annotations import FootprintSet, Polygon
from maploop.raster import BinaryMask, ProbMap, RasterMeta


def mask_of(arr) -> BinaryMask:
    return BinaryMask.from_array(np.asarray(arr, dtype=np.uint8))


def prob_of(arr) -> ProbMap:
    return ProbMap.from_array(np.asarray(arr, dtype=np.float64))


def square(x0, y0, w, h) -> Polygon:
    return Polygon(((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)))


def fset_of(polys, width=512, height=512) -> FootprintSet:
    return FootprintSet.build(list(polys), RasterMeta(width=width, height=height))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
