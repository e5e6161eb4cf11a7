import numpy as np
import pytest

from fastslow.fields import Box, Constant, GaussianBump, Product, SmoothRamp


def bump3(depth=0.5, width=0.8, center=(0.2, -0.1, 0.3)):
    return GaussianBump(1.0, -depth, center, width)


def ramp3():
    return SmoothRamp(0.7, 0.25, (0.6, 0.0, 0.8), 0.1, 1.3)


def product3():
    return Product((GaussianBump(1.0, -0.3, (0.0, 0.0, 0.0), 1.0),
                    SmoothRamp(0.8, 0.15, (0.0, 1.0, 0.0), 0.0, 0.7)))


FAMILIES = {"gaussian-bump": bump3, "smooth-ramp": ramp3, "product": product3}


@pytest.fixture(params=sorted(FAMILIES))
def eta3(request):
    return FAMILIES[request.param]()


@pytest.fixture
def box3():
    return Box.cube(2.0, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def const_eta():
    return Constant(1.0)
