import numpy as np
import pytest

from plastsim import streams
from plastsim.octree import Box, Octree


def build_instance(n, seed=0, side=None, vac_low=0, vac_high=3, spacing=26.0):
    """Random instance with seeded integer vacancies on both sides."""
    if side is None:
        side = int(np.ceil(n ** (1 / 3))) * spacing
    gen = streams.generator(seed, "test-instance", n)
    positions = gen.uniform(0.0, side, size=(n, 3))
    ids = np.arange(n, dtype=np.int64)
    va = gen.integers(vac_low, vac_high + 1, size=n)
    vd = gen.integers(vac_low, vac_high + 1, size=n)
    domain = Box((0.0, 0.0, 0.0), side)
    tree = Octree.build(ids, positions, va, vd, domain)
    return ids, positions, va, vd, tree, domain


def grid_instance(n, vac_axons=1, vac_dendrites=1, spacing=26.0):
    """Cubic lattice instance (balanced tree when n is a power of 8)."""
    per_axis = round(n ** (1 / 3))
    assert per_axis ** 3 == n, "grid_instance wants a perfect cube"
    side = per_axis * spacing
    coords = [((ix + 0.5) * spacing, (iy + 0.5) * spacing, (iz + 0.5) * spacing)
              for iz in range(per_axis) for iy in range(per_axis)
              for ix in range(per_axis)]
    positions = np.array(coords)
    ids = np.arange(n, dtype=np.int64)
    va = np.full(n, vac_axons, dtype=np.int64)
    vd = np.full(n, vac_dendrites, dtype=np.int64)
    domain = Box((0.0, 0.0, 0.0), side)
    tree = Octree.build(ids, positions, va, vd, domain)
    return ids, positions, va, vd, tree, domain


def recount_node(tree, node):
    """Brute-force oracle for octree sums and centroids from the leaf arrays."""
    ids, positions, va, vd = tree.points_below(node)
    a_sum = int(va.sum())
    d_sum = int(vd.sum())
    a_cent = (va[:, None] * positions).sum(axis=0) / a_sum if a_sum else None
    d_cent = (vd[:, None] * positions).sum(axis=0) / d_sum if d_sum else None
    return a_sum, a_cent, d_sum, d_cent


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
