"""Scoring, dustbin augmentation, Sinkhorn wrappers, match extraction
against an exact assignment oracle, and keypoint-score fusion."""

import itertools
import math

import numpy as np
import pytest

from rom import matcher
from rom.diffcore import Graph, gradient_check


# -- exact partial-assignment oracle ----------------------------------------


def optimal_partial_assignment(s, z):
    """Brute-force best one-to-one partial matching on an M x N score
    matrix with per-object dustbin score z for every unmatched object.

    Maximizes sum of matched scores + z per dustbin unit of transported
    mass: unmatched rows, unmatched columns, and the dustbin-dustbin cell
    (which carries k units when k pairs are matched, by the marginal
    constraints). Returns the set of matched (i, j) pairs.
    """
    m, n = s.shape
    best_val = -math.inf
    best = set()
    for k in range(min(m, n) + 1):
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.permutations(range(n), k):
                val = sum(s[i, j] for i, j in zip(rows, cols))
                val += z * (m - k) + z * (n - k) + z * k
                if val > best_val:
                    best_val = val
                    best = set(zip(rows, cols))
    return best, best_val


# -- raw scores -------------------------------------------------------------


def test_score_matrix_is_dot_products(rng):
    x1 = rng.standard_normal((3, 5))
    x2 = rng.standard_normal((4, 5))
    s = matcher.score_matrix(x1, x2)
    for i in range(3):
        for j in range(4):
            assert s[i, j] == pytest.approx(float(x1[i] @ x2[j]), abs=1e-12)


def test_score_matrix_orthogonal_features():
    assert matcher.score_matrix([[1.0, 0.0]], [[0.0, 1.0]])[0, 0] == 0.0


def test_score_matrix_width_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        matcher.score_matrix(rng.standard_normal((2, 3)),
                             rng.standard_normal((2, 4)))


def test_augment_dustbin_1x1():
    out = matcher.augment_dustbin(np.array([[7.0]]), 0.0)
    assert out.tolist() == [[7.0, 0.0], [0.0, 0.0]]


def test_augment_dustbin_shape(rng):
    s = rng.standard_normal((3, 5))
    out = matcher.augment_dustbin(s, 2.5)
    assert out.shape == (4, 6)
    assert np.array_equal(out[:3, :5], s)
    assert np.all(out[3, :] == 2.5)
    assert np.all(out[:, 5] == 2.5)


def test_score_graph_matches_numeric(rng):
    x1 = rng.standard_normal((3, 4))
    x2 = rng.standard_normal((2, 4))
    z = 1.3
    g = Graph()
    node = matcher.score_graph(g, g.constant(x1), g.constant(x2),
                               g.constant([[z]]))
    ref = matcher.augment_dustbin(matcher.score_matrix(x1, x2), z)
    assert np.allclose(g.value(node), ref, atol=1e-12)


def test_dustbin_parameter_gradient(rng):
    x1 = rng.standard_normal((2, 3))
    x2 = rng.standard_normal((3, 3))

    def build(g, z):
        sbar = matcher.score_graph(g, g.constant(x1), g.constant(x2), z)
        p = matcher.sinkhorn_graph(g, sbar, 10)
        return g.sum_all(g.mul(p, g.constant(np.arange(12.0).reshape(3, 4))))

    assert gradient_check(build, np.array([[0.7]])) < 1e-4


# -- Sinkhorn wrappers ------------------------------------------------------


def test_sinkhorn_rejects_bad_iterations():
    with pytest.raises(ValueError):
        matcher.sinkhorn(np.zeros((2, 2)), 0)
    g = Graph()
    with pytest.raises(ValueError):
        matcher.sinkhorn_graph(g, g.constant(np.zeros((2, 2))), 0)


def test_sinkhorn_rejects_nonfinite():
    s = np.zeros((2, 2))
    s[0, 0] = np.nan
    with pytest.raises(ValueError):
        matcher.sinkhorn(s, 10)


def test_sinkhorn_single_object_equal_scores():
    p = matcher.sinkhorn(np.zeros((2, 2)), 100)
    assert np.allclose(p, 0.5, atol=1e-9)


def test_graph_sinkhorn_matches_numeric(rng):
    for _ in range(5):
        s = rng.uniform(-5, 5, size=(4, 6))
        numeric = matcher.sinkhorn(s, 10)
        g = Graph()
        node = matcher.sinkhorn_graph(g, g.constant(s), 10)
        assert np.allclose(g.value(node), numeric, atol=1e-12)


def test_graph_sinkhorn_gradient_through_ten_iterations(rng):
    w = rng.standard_normal((4, 5))

    def build(g, s):
        p = matcher.sinkhorn_graph(g, s, 10)
        return g.sum_all(g.mul(g.slice_cols(p, 0, 4),
                               g.constant(w[:, :4])))

    assert gradient_check(build, rng.uniform(-2, 2, size=(4, 5))) < 1e-4


# -- match extraction -------------------------------------------------------


def test_extract_dominant_entry():
    p = np.array([[0.9, 0.1], [0.1, 0.1]])
    matches, un1, un2 = matcher.extract_assignment(p)
    assert matches == [(0, 0)]
    assert un1 == [] and un2 == []


def test_extract_uniform_ties_to_lowest_index():
    p = np.full((3, 3), 0.25)
    a = matcher.extract_assignment(p)
    b = matcher.extract_assignment(p)
    assert a == b
    assert a[0] == [(0, 0)]


def test_extract_dustbin_rows_become_unmatched():
    p = np.array([[0.05, 0.9],   # row 0 prefers the dustbin
                  [0.9, 0.05]])
    matches, un1, un2 = matcher.extract_assignment(p)
    assert matches == []
    assert un1 == [0]
    assert un2 == [0]


def test_extract_requires_mutual_argmax():
    # row 0 argmax is column 0, but column 0's argmax is row 1
    p = np.array([[0.6, 0.1, 0.3],
                  [0.7, 0.1, 0.2],
                  [0.1, 0.1, 0.8]])
    matches, _, _ = matcher.extract_assignment(p)
    assert matches == [(1, 0)]


def test_matches_agree_with_exact_oracle_on_scaled_scores(rng):
    agree = 0
    total = 200
    for _ in range(total):
        s = rng.uniform(-5, 5, size=(4, 4))
        z = 0.0
        p = matcher.sinkhorn(matcher.augment_dustbin(s * 20.0, z), 300)
        got, _, _ = matcher.extract_assignment(p)
        want, _ = optimal_partial_assignment(s * 20.0, z)
        if set(got) == want:
            agree += 1
    assert agree / total >= 0.95


# -- keypoint scores and fusion ---------------------------------------------


def test_keypoint_scores_empty():
    out = matcher.keypoint_scores([], [[0.0, 0.0, 0.5, 0.5]],
                                  [[0.0, 0.0, 0.5, 0.5]])
    assert out.tolist() == [[0.0, 1.0], [1.0, 1.0]]


def test_keypoint_scores_log_counts():
    boxes1 = [[0.0, 0.0, 0.4, 0.4], [0.6, 0.6, 1.0, 1.0]]
    boxes2 = [[0.0, 0.0, 0.4, 0.4], [0.6, 0.6, 1.0, 1.0]]
    kps = [((0.2, 0.2), (0.2, 0.2))] * 5 + [((0.8, 0.8), (0.8, 0.8))] * 3
    out = matcher.keypoint_scores(kps, boxes1, boxes2)
    assert out[0, 0] == pytest.approx(np.log(6.0))
    assert out[1, 1] == pytest.approx(np.log(4.0))
    assert out[0, 1] == 0.0
    assert out[1, 0] == 0.0
    assert np.all(out[2, :] == 1.0)
    assert np.all(out[:, 2] == 1.0)


def test_keypoint_in_overlapping_boxes_scores_both_rows():
    boxes1 = [[0.0, 0.0, 0.6, 0.6], [0.4, 0.4, 1.0, 1.0]]
    boxes2 = [[0.0, 0.0, 1.0, 1.0]]
    out = matcher.keypoint_scores([((0.5, 0.5), (0.5, 0.5))], boxes1, boxes2)
    assert out[0, 0] == pytest.approx(np.log(2.0))
    assert out[1, 0] == pytest.approx(np.log(2.0))


def test_fusion_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        matcher.fuse_and_match(np.zeros((3, 3)), np.zeros((2, 2)), 1.0, 10)


def test_fusion_with_zero_alpha_equals_object_only(rng):
    sbar = rng.uniform(-2, 2, size=(4, 5))
    skp = rng.uniform(0, 3, size=(4, 5))
    p0 = matcher.sinkhorn(sbar, 10)
    p, matches, un1, un2 = matcher.fuse_and_match(sbar, skp, 0.0, 10)
    assert np.allclose(p, p0, atol=1e-12)
    assert matches == matcher.extract_assignment(p0)[0]


def test_decisive_keypoints_dominate_zero_object_scores():
    n = 4
    skp = np.ones((n + 1, n + 1))
    skp[:n, :n] = 0.0
    for i in range(n):
        skp[i, i] = np.log(1 + 8)
    p, matches, _, _ = matcher.fuse_and_match(np.zeros((n + 1, n + 1)), skp,
                                              100.0, 100)
    assert set(matches) == {(i, i) for i in range(n)}


def test_decisive_object_scores_survive_empty_keypoints():
    # the empty-keypoint matrix still carries dustbin score 1, worth 100
    # after fusion, so "decisive" object scores must clear that margin
    n = 3
    sobj = np.full((n + 1, n + 1), -300.0)
    for i in range(n):
        sobj[i, i] = 300.0
    sobj[n, :] = 0.0
    sobj[:, n] = 0.0
    skp = matcher.keypoint_scores([], [[0, 0, 0.5, 0.5]] * n, [[0, 0, 0.5, 0.5]] * n)
    p, matches, _, _ = matcher.fuse_and_match(sobj, skp, 100.0, 100)
    assert set(matches) == {(i, i) for i in range(n)}
