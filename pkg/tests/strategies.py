"""Hypothesis strategies shared by the test modules."""

import numpy as np
from hypothesis import strategies as st

from martlab.filtration import random_grid
from martlab.prob import FiniteProbSpace, Partition


@st.composite
def spaces(draw, min_atoms=1, max_atoms=8):
    n = draw(st.integers(min_atoms, max_atoms))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    return FiniteProbSpace(w / w.sum())


@st.composite
def partitions(draw, n):
    k = draw(st.integers(1, n))
    return Partition(draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n)))


@st.composite
def variables(draw, n, scale=10.0):
    return np.array(draw(st.lists(st.floats(-scale, scale), min_size=n, max_size=n)))


@st.composite
def product_grids(draw, max_factors=2, sizes=(1, 2, 3)):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rows = draw(st.lists(st.sampled_from(sizes), min_size=0, max_size=max_factors))
    cols = draw(st.lists(st.sampled_from(sizes), min_size=0, max_size=max_factors))
    return random_grid(seed, rows, cols)


@st.composite
def grid_and_f(draw, **kw):
    space, G = draw(product_grids(**kw))
    f = draw(variables(space.n))
    return space, G, f
