import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupreid.features import build_group_graph
from groupreid.importance import (ImportanceTable, MatchingSet, emd, fill_subgroups,
                                  group_importance, lof, lof_scores, node_importance,
                                  normalize_scores, omega2, omega3, purity_score, purity_scores,
                                  saliency_score, stability_score, subgroup_importance)

from oracles import emd_bruteforce, lof_reference

# hand evaluation of the 4-point case (0,0), (1,0), (0,1), (10,10) with k = 2
LOF_A = 2 * math.sqrt(2) / (1 + math.sqrt(2))
LOF_BC = (1 / math.sqrt(2) + 2 / (1 + math.sqrt(2))) / 2 / (2 / (1 + math.sqrt(2)))
LOF_D = 2 / (1 + math.sqrt(2)) * math.sqrt(181)
FOUR = [(0, 0), (1, 0), (0, 1), (10, 10)]


def ms(owner_desc, members):
    return MatchingSet(descriptor=np.asarray(owner_desc, float),
                       members=[np.asarray(m, float) for m in members])


# -- saliency


def test_saliency_kth_distance_over_size():
    s = ms([0, 0], [[1, 0], [0, 2], [3, 0], [0, 4]])
    assert saliency_score(s) == pytest.approx(0.5)


def test_saliency_identical_members_and_empty():
    assert saliency_score(ms([1, 2], [[1, 2]] * 3)) == 0.0
    assert saliency_score(ms([1, 2], [])) == 1.0


def test_saliency_rounds_half_up():
    # |ms| = 3 -> k = 2
    s = ms([0], [[5], [1], [2]])
    assert saliency_score(s) == pytest.approx(2 / 3)


# -- emd


def test_emd_trivial_cases():
    a = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert emd(a, a[::-1]) == 0.0
    assert emd([[0, 0]], [[3, 4]]) == pytest.approx(5.0)


def test_emd_empty_set_rejected():
    with pytest.raises(ValueError, match="empty matching set"):
        emd(MatchingSet(), ms([0], [[1]]))


def test_emd_matches_bruteforce_three_random(rng):
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    assert emd(a, b) == pytest.approx(emd_bruteforce(a, b), abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_emd_symmetric_and_equals_bruteforce(na, nb, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(na, 3)), r.normal(size=(nb, 3))
    d = emd(a, b)
    assert d >= 0
    assert d == pytest.approx(emd(b, a), abs=1e-12)
    assert d == pytest.approx(emd_bruteforce(a, b), abs=1e-6)


# -- purity


def test_purity_sums_pairwise_emd():
    sets = [ms([0], [[0.0]]), ms([0], [[1.0]]), ms([0], [[-2.0]])]
    # e12 = 1, e13 = 2, e23 = 3
    assert purity_score(0, sets) == pytest.approx(3.0)
    np.testing.assert_allclose(purity_scores(sets), [3.0, 4.0, 5.0])


def test_purity_degenerate_groups():
    assert purity_score(0, [ms([0], [[1.0]])]) == 0.0
    same = [ms([0], [[1.0], [2.0]]), ms([1], [[2.0], [1.0]])]
    assert purity_score(0, same) == 0.0
    with pytest.raises(ValueError):
        purity_score(0, [MatchingSet(), ms([0], [[1.0]])])


# -- local outlier factor


def test_lof_hand_computed_four_points():
    np.testing.assert_allclose(lof_scores(FOUR, k=2), [LOF_A, LOF_BC, LOF_BC, LOF_D], atol=1e-9)
    assert lof(FOUR, 3, k=2) > 1 and lof(FOUR, 0, k=2) < lof(FOUR, 3, k=2)
    assert stability_score(FOUR, 3, k=2) < 1 < stability_score(FOUR, 1, k=2)


@pytest.mark.parametrize("n", [3, 5, 8, 12])
def test_lof_circle_is_one(n):
    t = 2 * math.pi * np.arange(n) / n
    pts = np.column_stack([50 + 20 * np.cos(t), 80 + 20 * np.sin(t)])
    np.testing.assert_allclose(lof_scores(pts), 1.0, atol=1e-9)


def test_lof_two_points_and_duplicates():
    np.testing.assert_allclose(lof_scores([(0, 0), (3, 4)]), [1.0, 1.0])
    out = lof_scores([(1, 1), (1, 1), (1, 1), (5, 5)])
    assert np.all(np.isfinite(out))
    with pytest.raises(ValueError):
        lof([(0, 0)], 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 8), st.just(2)),
              elements=st.integers(0, 400).map(float), unique=False))
def test_lof_matches_reference(pts):
    pts = np.unique(pts, axis=0)
    if len(pts) < 3:
        return
    k = int(math.floor(len(pts) / 2 + 0.5))
    np.testing.assert_allclose(lof_scores(pts, k), lof_reference(pts, k), rtol=1e-9)


# -- node importance


def test_node_importance_extremes():
    imp = node_importance([0.0, 1.0, 0.5], [2.0, 6.0, 4.0], [1.0, 3.0, 2.0])
    np.testing.assert_allclose(imp, [0.0, 3.0, 1.5])


def test_single_node_normalises_to_one():
    np.testing.assert_allclose(normalize_scores([0.7]), [1.0])
    np.testing.assert_allclose(node_importance([0.2], [0.0], [1.0]), [3.0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), st.floats(0.01, 100), st.floats(-50, 50))
def test_node_importance_affine_invariant(raw, a, b):
    base = node_importance(raw, raw, raw)
    np.testing.assert_allclose(node_importance(a * raw + b, raw, raw), base, atol=1e-6)


# -- subgroup stability


def graph(points, size=(640, 360)):
    return build_group_graph(np.ones((len(points), 4)), points, size)


def test_omega2_values():
    g = graph([(0, 0), (0, 1)])
    r = 0.5 * g.diag
    assert omega2(graph([(0, 0), (r, 0)]), 0, 1) == pytest.approx(math.e)
    assert omega2(graph([(0, 0), (2 * r, 0)]), 0, 1) == pytest.approx(math.exp(0.5))
    assert omega2(graph([(0, 0), (10, 0)]), 0, 1) > omega2(graph([(0, 0), (100, 0)]), 0, 1)


def test_omega2_stays_finite_for_coincident_centres():
    assert math.isfinite(omega2(graph([(5, 5), (5, 5)]), 0, 1))


def test_omega3_values():
    eq = graph([(0, 0), (100, 0), (50, 50 * math.sqrt(3))])
    assert omega3(eq, 0, 1, 2) == pytest.approx(1.0)
    right = graph([(0, 0), (100, 0), (0, 100)])
    s60 = math.sin(math.pi / 3)
    exact = math.exp(-2 * ((1 - s60) + 2 * (s60 - math.sqrt(0.5))))
    assert omega3(right, 0, 1, 2) == pytest.approx(exact, abs=1e-12)
    # the rounded hand value 0.4049 differs from the exact one in the 4th decimal
    assert omega3(right, 0, 1, 2) == pytest.approx(0.4049, abs=5e-4)
    line = graph([(0, 0), (10, 0), (30, 0)])
    assert omega3(line, 0, 1, 2) == pytest.approx(math.exp(-2 * 3 * math.sin(math.pi / 3)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 600), st.floats(0, 340)), min_size=3, max_size=3))
def test_omega3_at_most_one(pts):
    assert omega3(graph(pts), 0, 1, 2) <= 1.0 + 1e-12


def test_subgroup_pair_recursion():
    g = graph([(0, 0), (100, 0)])
    table = ImportanceTable(node={0: 1.0, 1: 1.0}, edge={}, hyper_edge={})
    assert subgroup_importance(table, g, (0, 1), stability=math.e) == pytest.approx(math.e + 1)
    assert subgroup_importance(table, g, (1, 0), lam=0.0) == pytest.approx(omega2(g, 0, 1))


def test_subgroup_triple_two_level_recursion():
    g = graph([(0, 0), (100, 0), (50, 50 * math.sqrt(3))])
    table = ImportanceTable(node={0: 0.0, 1: 0.0, 2: 0.0}, edge={}, hyper_edge={})
    fill_subgroups(table, g, normalize_stability=False)
    for e in itertools.combinations(range(3), 2):
        assert table.edge[e] == pytest.approx(omega2(g, *e))
    assert table.hyper_edge[(0, 1, 2)] == pytest.approx(1 + 0.5 * sum(table.edge.values()))


def test_subgroup_permutation_invariant(rng):
    g = graph(rng.uniform(0, 300, (4, 2)))
    table = fill_subgroups(ImportanceTable.uniform(4, 0.3), g)
    for t in itertools.combinations(range(4), 3):
        vals = {subgroup_importance(table, g, p) for p in itertools.permutations(t)}
        assert max(vals) - min(vals) < 1e-12
    with pytest.raises(ValueError):
        subgroup_importance(table, g, (0,))


# -- whole table


def test_group_importance_table_is_total_and_serialisable(rng):
    g = graph(rng.uniform(0, 300, (4, 2)))
    sets = [ms(rng.normal(size=3), rng.normal(size=(3, 3))) for _ in range(3)] + [MatchingSet()]
    table = group_importance(g, sets)
    assert set(table.node) == set(range(4))
    assert len(table.edge) == 6 and len(table.hyper_edge) == 4
    values = list(table.node.values()) + list(table.edge.values()) + list(table.hyper_edge.values())
    assert all(math.isfinite(v) and v >= 0 for v in values)
    back = ImportanceTable.from_json(table.to_json())
    assert back == table


def test_group_importance_single_person():
    g = graph([(30, 30)])
    table = group_importance(g, [MatchingSet()])
    assert table.node == {0: 3.0} and not table.edge and not table.hyper_edge
