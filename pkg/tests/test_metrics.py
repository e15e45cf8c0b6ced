import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcast.errors import DimensionError
from trajcast.metrics import (
    MetricsReport,
    ade,
    aggregate,
    arb_frb,
    bbox_centroid,
    cade_cfde,
    fde,
    min_ade_k,
    min_fde_k,
    per_agent_metrics,
)

from .oracles import brute_arb_frb, brute_metrics


def test_ade_fde_examples():
    gt = np.zeros((3, 2))
    assert ade(gt, gt) == 0 and fde(gt, gt) == 0
    assert ade(gt + [3, 4], gt) == 5 and fde(gt + [3, 4], gt) == 5
    pred = np.array([[1.0, 0], [2, 0], [3, 0]])
    assert ade(pred, gt) == 2 and fde(pred, gt) == 3
    with pytest.raises(DimensionError):
        ade(pred[:2], gt)
    with pytest.raises(DimensionError):
        fde(np.zeros((0, 2)), np.zeros((0, 2)))


def test_min_k_examples():
    gt = np.zeros((2, 2))
    samples = np.stack([gt + [3, 4], gt + [1, 0], gt])
    assert min_ade_k(samples, gt) == (0.0, 2)
    assert min_ade_k(np.stack([gt + [3, 4], gt + [2, 0]]), gt) == (2.0, 1)
    assert min_ade_k(samples[:1], gt)[0] == ade(samples[0], gt)
    assert min_fde_k(samples[:2], gt) == (1.0, 1)


def test_bbox_examples():
    np.testing.assert_array_equal(bbox_centroid([0, 0, 2, 2]), [1, 1])
    np.testing.assert_array_equal(bbox_centroid([1, 1, 1, 1]), [1, 1])
    np.testing.assert_array_equal(bbox_centroid([0, 0, 4, 2]), [2, 1])
    gt = np.array([[0.0, 0, 2, 2], [1, 1, 3, 3]])
    assert cade_cfde(gt, gt) == (0, 0)
    assert cade_cfde(gt + [3, 4, 3, 4], gt) == (5, 5)
    assert cade_cfde(gt + [1, -1, -1, 1], gt) == (0, 0)
    assert arb_frb(gt, gt) == (0, 0)
    assert arb_frb(gt + 1, gt) == (1, 1)
    assert arb_frb(gt + [2, 0, 0, 0], gt) == (1, 1)
    with pytest.raises(ValueError):
        arb_frb(gt, gt, "median")
    with pytest.raises(DimensionError):
        arb_frb(np.zeros((2, 2)), np.zeros((2, 2)))


def test_arb_variants_differ_and_match_oracle():
    rng = np.random.default_rng(0)
    p, g = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    for joint, variant in ((False, "mean-of-rmse"), (True, "joint-rmse")):
        want = brute_arb_frb(p.tolist(), g.tolist(), joint)
        np.testing.assert_allclose(arb_frb(p, g, variant), want, atol=1e-12)
    assert arb_frb(p, g, "joint-rmse")[0] >= arb_frb(p, g)[0]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 4]), st.integers(1, 6), st.integers(1, 12), st.integers(0, 2**31))
def test_per_agent_metrics_match_brute_force(c, k, t, seed):
    rng = np.random.default_rng(seed)
    samples = rng.normal(scale=3, size=(k, t, c))
    gt = rng.normal(scale=3, size=(t, c))
    point = rng.normal(scale=3, size=(t, c))
    got = per_agent_metrics(samples, gt, point_pred=point)
    want = brute_metrics(samples, gt, point)
    assert got.keys() == want.keys()
    for name in got:
        assert got[name] == pytest.approx(want[name], abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_min_ade_monotone_in_pool(k, extra, seed):
    rng = np.random.default_rng(seed)
    s, gt = rng.normal(size=(k + extra, 6, 2)), rng.normal(size=(6, 2))
    assert min_ade_k(s, gt)[0] <= min_ade_k(s[:k], gt)[0]
    assert min_fde_k(s, gt)[0] <= min_fde_k(s[:k], gt)[0]


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31))
def test_metrics_invariant_under_rigid_motion_and_symmetric(theta, dx, dy, seed):
    rng = np.random.default_rng(seed)
    p, g = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, s], [-s, c]])
    pt, gtt = p @ rot + [dx, dy], g @ rot + [dx, dy]
    assert ade(pt, gtt) == pytest.approx(ade(p, g), abs=1e-10)
    assert fde(pt, gtt) == pytest.approx(fde(p, g), abs=1e-10)
    assert ade(p, g) == ade(g, p)
    bp, bg = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
    shift = [dx, dy, dx, dy]
    np.testing.assert_allclose(arb_frb(bp + shift, bg + shift), arb_frb(bp, bg), atol=1e-10)
    np.testing.assert_allclose(cade_cfde(bp + shift, bg + shift), cade_cfde(bp, bg), atol=1e-10)


def test_min_not_above_point_when_pool_includes_it():
    rng = np.random.default_rng(3)
    s, gt = rng.normal(size=(5, 6, 2)), rng.normal(size=(6, 2))
    m = per_agent_metrics(s, gt)
    assert m["min_ade_k"] <= m["ade"] and m["min_fde_k"] <= m["fde"]


def test_aggregate_and_report_text(tmp_path):
    rows = [("a", {"ade": 1.0, "fde": 2.0}), ("a", {"ade": 3.0, "fde": 2.0}),
            ("b", {"ade": 5.0, "fde": 8.0})]
    r = aggregate(rows, 20)
    assert r.ade == 3.0 and r.fde == 4.0 and r.n_samples_evaluated == 3 and r.k_used == 20
    assert r.per_scene == {"a": {"ade": 2.0, "fde": 2.0}, "b": {"ade": 5.0, "fde": 8.0}}
    assert r.scene_averaged == {"ade": 3.5, "fde": 5.0}
    assert "ade = 3.0" in r.to_text()
    r.write(tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == "ade 3.0 3"
    assert aggregate([], 1).values() == {}
    assert MetricsReport(ade=1.0).values() == {"ade": 1.0}
