import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcast.errors import DataError
from trajcast.graph import (
    SocialGraph,
    build_social_graph,
    frame_rwpe,
    random_walk_matrix,
    rwpe,
)

from .oracles import naive_rwpe


def test_edge_weights_are_reciprocal_distance():
    g = build_social_graph([(0, 0), (0, 2)])
    assert g.weights[0, 1] == 0.5
    g = build_social_graph([(0, 0), (3, 0), (0, 4)])
    np.testing.assert_allclose(g.weights, [[0, 1 / 3, 1 / 4], [1 / 3, 0, 1 / 5], [1 / 4, 1 / 5, 0]])


def test_coincident_agents_are_clamped():
    g = build_social_graph([(1, 1), (1, 1)], eps_dist=0.01)
    assert g.weights[0, 1] == pytest.approx(100.0)


def test_single_agent_graph():
    g = build_social_graph([(2.0, 3.0)])
    np.testing.assert_array_equal(g.weights, [[0.0]])
    np.testing.assert_array_equal(random_walk_matrix(g), [[0.0]])
    np.testing.assert_array_equal(rwpe(g, 5).values, np.zeros((1, 5)))


def test_non_finite_positions_rejected():
    with pytest.raises(DataError):
        build_social_graph([(0, 0), (math.nan, 1)])


def test_random_walk_examples():
    np.testing.assert_array_equal(random_walk_matrix(build_social_graph([(0, 0), (5, 1)])),
                                  [[0, 1], [1, 0]])
    tri = SocialGraph(np.ones((3, 3)) - np.eye(3), (0, 1, 2))
    m = random_walk_matrix(tri)
    np.testing.assert_allclose(m, (np.ones((3, 3)) - np.eye(3)) / 2)


def test_zero_degree_row_is_zero():
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = 2.0
    m = random_walk_matrix(SocialGraph(w, (0, 1, 2)))
    np.testing.assert_array_equal(m[2], 0.0)
    np.testing.assert_allclose(m[:2].sum(axis=1), 1.0, atol=1e-12)


def test_rwpe_examples():
    r = rwpe(build_social_graph([(0, 0), (1, 0)]), 4)
    np.testing.assert_allclose(r.values[0], [0, 1, 0, 1])
    tri = SocialGraph(np.ones((3, 3)) - np.eye(3), (0, 1, 2))
    np.testing.assert_allclose(rwpe(tri, 3).values[0], [0, 0.5, 0.25], atol=1e-15)


def test_rwpe_rejects_bad_k():
    g = build_social_graph([(0, 0), (1, 0)])
    with pytest.raises(ValueError):
        rwpe(g, 0)
    with pytest.raises(ValueError):
        rwpe(g, 33)


points = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(points, st.integers(1, 8))
def test_rwpe_matches_dense_powers_and_lies_in_unit_interval(pts, k):
    g = build_social_graph(pts)
    r = rwpe(g, k).values
    np.testing.assert_allclose(r, naive_rwpe(g.weights, k), atol=1e-12, rtol=0)
    assert np.all(r >= 0) and np.all(r <= 1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(points, st.integers(1, 8), st.randoms(use_true_random=False))
def test_rwpe_permutation_invariance(pts, k, rnd):
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    r = rwpe(build_social_graph(pts), k).values
    rp = rwpe(build_social_graph([pts[i] for i in perm]), k).values
    np.testing.assert_allclose(rp, r[perm], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(points, st.floats(0, 2 * math.pi), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 3))
def test_rwpe_rigid_and_scale_invariance(pts, theta, dx, dy, scale):
    p = np.array(pts, dtype=float)
    d = np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1)) + np.eye(len(p)) * 1e9
    if d.min() < 0.05:  # keep clear of the distance clamp
        return
    c, s = math.cos(theta), math.sin(theta)
    q = p @ np.array([[c, s], [-s, c]]) + [dx, dy]
    r = rwpe(build_social_graph(p), 6).values
    np.testing.assert_allclose(rwpe(build_social_graph(q), 6).values, r, atol=1e-10)
    np.testing.assert_allclose(rwpe(build_social_graph(p * scale), 6).values, r, atol=1e-10)


def test_frame_rwpe_is_per_frame():
    pos = np.random.default_rng(0).normal(size=(5, 3, 2))
    out = frame_rwpe(pos, 4)
    assert out.shape == (5, 3, 4)
    for t in range(5):
        np.testing.assert_allclose(out[t], naive_rwpe(build_social_graph(pos[t]).weights, 4),
                                   atol=1e-12)
