import numpy as np
import pytest

from conftest import build_instance, recount_node
from plastsim.octree import (Box, Octree, OctreeError, octant_path_of,
                             octant_paths, owned_octants, owner_of_octant,
                             shared_top, subtree_level)


def test_single_neuron_tree():
    domain = Box((0.0, 0.0, 0.0), 10.0)
    tree = Octree.build([5], [[1.0, 2.0, 3.0]], [2], [3], domain)
    assert tree.root.is_leaf
    assert tree.root.axons_sum == 2
    assert tree.root.dendrites_sum == 3
    assert np.allclose(tree.root.axons_centroid, [1.0, 2.0, 3.0])


def test_same_octant_splits_until_separated():
    domain = Box((0.0, 0.0, 0.0), 16.0)
    # both in the low octant; recursion must keep splitting
    tree = Octree.build([0, 1], [[1.0, 1.0, 1.0], [2.5, 1.0, 1.0]],
                        [1, 1], [1, 1], domain)
    assert not tree.root.is_leaf
    leaves = [n for n in tree.nodes_by_path.values() if n.is_leaf]
    assert len(leaves) == 2
    assert all(n.hi - n.lo == 1 for n in leaves)
    # every neuron in exactly one leaf
    slots = sorted(n.leaf_slot for n in leaves)
    assert slots == [0, 1]


def test_weighted_centroid_example():
    domain = Box((0.0, 0.0, 0.0), 4.0)
    tree = Octree.build([0, 1], [[0.5, 0.5, 0.5], [2.5, 0.5, 0.5]],
                        [0, 0], [1, 3], domain)
    assert np.allclose(tree.root.dendrites_centroid, [2.0, 0.5, 0.5])

    tree2 = Octree.build([0, 1], [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
                         [0, 0], [1, 3], domain)
    assert np.allclose(tree2.root.dendrites_centroid, [1.5, 0.0, 0.0])


def test_outside_domain_rejected():
    domain = Box((0.0, 0.0, 0.0), 1.0)
    with pytest.raises(OctreeError, match=r"\[7\]"):
        Octree.build([7], [[2.0, 0.0, 0.0]], [0], [0], domain)


def test_duplicate_positions_rejected():
    domain = Box((0.0, 0.0, 0.0), 1.0)
    with pytest.raises(OctreeError, match="duplicate"):
        Octree.build([1, 2], [[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]],
                     [0, 0], [0, 0], domain)


def test_zero_sum_side_has_no_centroid():
    domain = Box((0.0, 0.0, 0.0), 4.0)
    tree = Octree.build([0, 1], [[0.5, 0.5, 0.5], [2.5, 0.5, 0.5]],
                        [0, 0], [1, 1], domain)
    assert tree.root.axons_sum == 0
    assert tree.root.axons_centroid is None


def test_recount_oracle_random_tree():
    _, _, _, _, tree, _ = build_instance(64, seed=5, vac_low=0, vac_high=4)
    for node in tree.nodes_by_path.values():
        a_sum, a_cent, d_sum, d_cent = recount_node(tree, node)
        assert node.axons_sum == a_sum
        assert node.dendrites_sum == d_sum
        if a_sum:
            assert np.allclose(node.axons_centroid, a_cent, rtol=1e-9)
        if d_sum:
            assert np.allclose(node.dendrites_centroid, d_cent, rtol=1e-9)


def test_refresh_all_zero():
    _, _, _, _, tree, _ = build_instance(32, seed=6, vac_low=1, vac_high=3)
    tree.refresh_sums({int(i): (0, 0) for i in tree.ids})
    for node in tree.nodes_by_path.values():
        assert node.axons_sum == 0
        assert node.dendrites_sum == 0
        assert node.axons_centroid is None


def test_refresh_locality():
    _, _, _, _, tree, _ = build_instance(32, seed=7, vac_low=1, vac_high=1)
    target = int(tree.ids[4])
    before = {path: (n.axons_sum, n.dendrites_sum)
              for path, n in tree.nodes_by_path.items()}
    tree.refresh_sums({target: (0, 5)})
    leaf = tree.leaf_nodes[tree.slot_of_id[target]]
    chain = set()
    node = leaf
    while node is not None:
        chain.add(node.path)
        node = node.parent
    for path, node in tree.nodes_by_path.items():
        if path in chain:
            continue
        assert (node.axons_sum, node.dendrites_sum) == before[path]


def test_refresh_matches_recount():
    _, _, _, _, tree, _ = build_instance(64, seed=8, vac_low=0, vac_high=3)
    gen = np.random.default_rng(0)
    updates = {int(i): (int(gen.integers(0, 5)), int(gen.integers(0, 5)))
               for i in tree.ids[::3]}
    tree.refresh_sums(updates)
    for node in tree.nodes_by_path.values():
        a_sum, a_cent, d_sum, d_cent = recount_node(tree, node)
        assert node.axons_sum == a_sum
        assert node.dendrites_sum == d_sum
        if d_sum:
            assert np.allclose(node.dendrites_centroid, d_cent, rtol=1e-9)


def test_refresh_unknown_id_rejected():
    _, _, _, _, tree, _ = build_instance(8, seed=9)
    with pytest.raises(OctreeError, match="unknown neuron id"):
        tree.refresh_sums({999: (0, 0)})


def test_partition_property():
    # any point of the domain lies in exactly one child cell of an inner node
    _, _, _, _, tree, domain = build_instance(64, seed=10)
    gen = np.random.default_rng(4)
    points = gen.uniform(0, domain.side, (200, 3))
    for node in tree.nodes_by_path.values():
        if node.is_leaf:
            continue
        digits = node.box.octant_digits(points)
        for point, digit in zip(points, digits):
            if not node.box.contains(point[None, :])[0]:
                continue
            child_box = node.box.child(int(digit))
            assert child_box.contains(point[None, :])[0]


def test_build_determinism_under_permutation():
    ids, positions, va, vd, tree, domain = build_instance(40, seed=11, vac_low=1)
    perm = np.random.default_rng(2).permutation(len(ids))
    tree2 = Octree.build(ids[perm], positions[perm], va[perm], vd[perm], domain)
    assert set(tree.nodes_by_path) == set(tree2.nodes_by_path)
    for path, node in tree.nodes_by_path.items():
        other = tree2.nodes_by_path[path]
        assert node.axons_sum == other.axons_sum
        assert node.dendrites_sum == other.dendrites_sum
        if node.is_leaf:
            assert tree.ids[node.leaf_slot] == tree2.ids[other.leaf_slot]


def test_subtree_level_and_ownership():
    assert subtree_level(1) == 0
    assert subtree_level(2) == 1
    assert subtree_level(8) == 1
    assert subtree_level(9) == 2
    assert subtree_level(64) == 2
    assert owned_octants(0, 1, 0) == [()]
    # p=8: one level-1 octant each
    for rank in range(8):
        assert owned_octants(rank, 8, 1) == [(rank,)]
    # p=2: four contiguous octants each
    assert owned_octants(0, 2, 1) == [(0,), (1,), (2,), (3,)]
    assert owned_octants(1, 2, 1) == [(4,), (5,), (6,), (7,)]
    # every octant has exactly one owner
    for p in (1, 2, 3, 4, 8):
        level = subtree_level(p)
        owners = [owner_of_octant(i, p, level) for i in range(8 ** level)]
        assert sorted(set(owners)) == list(range(p))


def test_octant_path_matches_build():
    ids, positions, va, vd, tree, domain = build_instance(64, seed=12)
    for i in range(len(ids)):
        slot = tree.slot_of_id[int(ids[i])]
        # find the position in the sorted arrays, walk to its leaf path
        leaf = tree.leaf_nodes[slot]
        path = octant_path_of(domain, tree.positions[slot], 2)
        assert leaf.path[:2] == path[:len(leaf.path[:2])]


def test_shared_top_p1_is_branch_root():
    _, _, _, _, tree, domain = build_instance(16, seed=13, vac_low=1)
    summary = tree.summary_of(tree.root)
    top = shared_top({0: {(): summary}}, 1, domain)
    assert top.root.axons_sum == tree.root.axons_sum
    assert top.root.path == ()
    assert top.level == 0


def _partitioned_branches(n, p, seed):
    ids, positions, va, vd, tree, domain = build_instance(n, seed=seed, vac_low=1)
    level = subtree_level(p)
    branches = {}
    for rank in range(p):
        octants = {}
        for octant in owned_octants(rank, p, level):
            member = [i for i in range(n)
                      if octant_path_of(domain, positions[i], level) == octant]
            if member:
                sub = Octree.build(ids[member], positions[member], va[member],
                                   vd[member], _octant_box(domain, octant),
                                   level=level, path=octant)
                octants[octant] = sub.summary_of(sub.root)
            else:
                octants[octant] = None
        branches[rank] = octants
    return branches, tree, domain


def _octant_box(domain, path):
    box = domain
    for digit in path:
        box = box.child(digit)
    return box


def test_shared_top_p8_matches_global_recount():
    branches, tree, domain = _partitioned_branches(64, 8, seed=14)
    top = shared_top(branches, 8, domain)
    assert top.root.axons_sum == tree.root.axons_sum
    assert top.root.dendrites_sum == tree.root.dendrites_sum
    assert np.allclose(top.root.dendrites_centroid, tree.root.dendrites_centroid)
    # level-1 children match the global tree's level-1 nodes
    for child in top.child_summaries(()):
        node = tree.nodes_by_path[child.path]
        assert child.axons_sum == node.axons_sum
        assert child.dendrites_sum == node.dendrites_sum


def test_shared_top_p2_matches_global():
    branches, tree, domain = _partitioned_branches(48, 2, seed=15)
    top = shared_top(branches, 2, domain)
    assert top.root.axons_sum == tree.root.axons_sum
    assert top.root.dendrites_sum == tree.root.dendrites_sum


def test_shared_top_missing_rank_rejected():
    branches, _, domain = _partitioned_branches(16, 2, seed=16)
    del branches[1]
    with pytest.raises(OctreeError, match="rank 1"):
        shared_top(branches, 2, domain)


def test_shared_top_deterministic_float_equality():
    # aggregation through the shared helper must be bit-identical to the
    # global tree's own hierarchical aggregation
    branches, tree, domain = _partitioned_branches(512, 8, seed=17)
    top = shared_top(branches, 8, domain)
    assert top.root.dendrites_centroid.tolist() == tree.root.dendrites_centroid.tolist()
    assert top.root.axons_centroid.tolist() == tree.root.axons_centroid.tolist()


def test_octant_paths_order():
    assert octant_paths(0) == [()]
    assert octant_paths(1)[:3] == [(0,), (1,), (2,)]
    assert len(octant_paths(2)) == 64


def test_inner_nodes_have_eight_child_slots():
    _, _, _, _, tree, _ = build_instance(32, seed=18)
    for node in tree.nodes_by_path.values():
        if not node.is_leaf:
            assert len(node.children) == 8
