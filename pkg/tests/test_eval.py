import json
import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from aacp import pnm
from aacp import tensor as T
from aacp.data import ATTRIBUTES
from aacp.eval import (
    METRIC_KEYS, GaussianStats, MetricReport, SaliencyWarning, UndefinedMetricError, average_ranks,
    emd_1d, emd_attributes, emd_hist, evaluate_scores, fid, grad_cam, lcc, mse_metric,
    score_histogram, smooth_grad_cam, srcc, write_heatmap,
)
from aacp.linalg import DomainError


# -- oracles ---------------------------------------------------------------
def rank_oracle(x):
    x = list(map(float, x))
    out = []
    for xi in x:
        below = sum(1 for v in x if v < xi)
        equal = sum(1 for v in x if v == xi)
        out.append(1 + below + (equal - 1) / 2)
    return out


def pearson_oracle(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def transport_oracle(p, q, width=1.0):
    """Optimal transport cost between two histograms by linear programming."""
    k = len(p)
    cost = np.abs(np.subtract.outer(np.arange(k), np.arange(k))).ravel() * width
    a_eq = np.zeros((2 * k, k * k))
    for i in range(k):
        a_eq[i, i * k:(i + 1) * k] = 1.0
        a_eq[k + i, i::k] = 1.0
    res = scipy.optimize.linprog(cost, A_eq=a_eq, b_eq=np.concatenate([p, q]), bounds=(0, None),
                                 method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                                          "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0
    return res.fun


def fid_oracle(mu_a, cov_a, mu_b, cov_b):
    eig = np.linalg.eigvals(cov_a @ cov_b)
    cross = np.sqrt(np.clip(eig.real, 0.0, None)).sum()
    d = mu_a - mu_b
    return float(d @ d + np.trace(cov_a) + np.trace(cov_b) - 2 * cross)


def random_psd(rng, n, rank=None):
    a = rng.normal(size=(rank or n + 2, n))
    return a.T @ a / a.shape[0]


# -- correlation -----------------------------------------------------------
class TestCorrelation:
    def test_monotone(self):
        assert srcc([1, 2, 3], [10, 20, 30]) == 1.0
        assert srcc([1, 2, 3], [3, 2, 1]) == -1.0

    def test_affine(self):
        x = np.array([0.3, 1.7, 2.2, 5.0])
        assert abs(lcc(x, 2 * x + 1) - 1.0) < 1e-12
        assert abs(lcc(x, -x) + 1.0) < 1e-12

    @pytest.mark.parametrize("x", [[3, 1, 3, 2, 2, 2], [1, 1, 1, 0], [5.0, 5.0, 4.0, 4.0, 6.0]])
    def test_average_ranks_oracle(self, x):
        assert average_ranks(x).tolist() == rank_oracle(x)

    @pytest.mark.parametrize("seed", range(5))
    def test_srcc_with_ties_oracle(self, seed):
        r = np.random.default_rng(seed)
        x, y = r.integers(0, 5, 30).astype(float), r.integers(0, 4, 30).astype(float)
        assert abs(srcc(x, y) - pearson_oracle(rank_oracle(x), rank_oracle(y))) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_lcc_oracle(self, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=40), r.normal(size=40)
        assert abs(lcc(x, y) - pearson_oracle(list(x), list(y))) < 1e-12

    @given(st.lists(st.integers(-100, 100), min_size=3, max_size=30).filter(lambda v: len(set(v)) > 1),
           st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_srcc_monotone_invariance(self, x, seed):
        x = np.array(x, dtype=np.float64)
        y = np.random.default_rng(seed).normal(size=x.size)
        assert srcc(np.exp(x / 50) + x ** 3, y) == srcc(x, y)

    @given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_lcc_affine_invariance(self, a, b, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=20), r.normal(size=20)
        assert abs(lcc(a * x + b, y) - lcc(x, y)) < 1e-12

    @pytest.mark.parametrize("fn", [srcc, lcc])
    def test_constant_is_undefined(self, fn):
        with pytest.raises(UndefinedMetricError):
            fn([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedMetricError):
            fn([1.0], [2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            lcc([1, 2, 3], [1, 2])

    def test_mse(self):
        assert mse_metric([1, 2], [1, 2]) == 0.0
        assert mse_metric([0, 0], [1, 3]) == 5.0


# -- emd -------------------------------------------------------------------
class TestEmd:
    def test_identical(self, rng):
        s = rng.uniform(0, 10, 50)
        assert emd_1d(s, s) == 0.0

    def test_adjacent_bins(self):
        assert emd_1d([3.0, 3.0], [4.0, 4.0]) == 1.0

    def test_histogram_snaps_to_nearest(self):
        h = score_histogram([0.0, 0.49, 0.5, 9.6, 10.0])
        assert h[0] == 0.4 and h[1] == 0.2 and h[10] == 0.4

    def test_empty(self):
        with pytest.raises(UndefinedMetricError):
            score_histogram([])

    def test_transport_lp_suite(self):
        r = np.random.default_rng(20)
        worst = 0.0
        for _ in range(500):
            k = int(r.integers(2, 12))
            p, q = r.dirichlet(np.ones(k)), r.dirichlet(np.ones(k))
            worst = max(worst, abs(emd_hist(p, q) - transport_oracle(p, q)))
        assert worst < 1e-9

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_metric_axioms(self, seed):
        r = np.random.default_rng(seed)
        p, q, s = (r.dirichlet(np.ones(11)) for _ in range(3))
        assert emd_hist(p, q) >= 0
        assert abs(emd_hist(p, q) - emd_hist(q, p)) < 1e-12
        assert emd_hist(p, s) <= emd_hist(p, q) + emd_hist(q, s) + 1e-12

    def test_orderings(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        gt = np.array([[1.0, 3.0], [3.0, 5.0]])
        # dataset order: attribute 0 matches, attribute 1 shifts one bin
        assert emd_attributes(pred, gt, "dataset") == 0.5
        # image order: each image moves half its mass by one bin
        assert emd_attributes(pred, gt, "image") == 0.5
        with pytest.raises(ValueError):
            emd_attributes(pred, gt, "pixel")


# -- fid -------------------------------------------------------------------
class TestFid:
    def test_identical(self, rng):
        st_ = GaussianStats(rng.normal(size=4), random_psd(rng, 4), 10)
        assert fid(st_, st_) < 1e-8

    def test_identity_cov_mean_gap(self, rng):
        d = rng.normal(size=5)
        a = GaussianStats(np.zeros(5), np.eye(5), 10)
        b = GaussianStats(d, np.eye(5), 10)
        assert abs(fid(a, b) - d @ d) < 1e-8

    @pytest.mark.parametrize("n", [2, 6, 16, 32])
    def test_eigen_oracle(self, rng, n):
        ma, mb = rng.normal(size=n), rng.normal(size=n)
        ca, cb = random_psd(rng, n), random_psd(rng, n)
        value = fid(GaussianStats(ma, ca, 1), GaussianStats(mb, cb, 1))
        assert abs(value - fid_oracle(ma, ca, mb, cb)) < 1e-6

    def test_symmetric(self, rng):
        a = GaussianStats(rng.normal(size=6), random_psd(rng, 6), 1)
        b = GaussianStats(rng.normal(size=6), random_psd(rng, 6), 1)
        assert abs(fid(a, b) - fid(b, a)) < 1e-8

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            fid(GaussianStats(np.zeros(2), np.eye(2), 3), GaussianStats(np.zeros(3), np.eye(3), 3))

    def test_asymmetric_cov(self):
        with pytest.raises(DomainError):
            GaussianStats(np.zeros(2), np.array([[1.0, 0.2], [0.0, 1.0]]), 3)

    def test_from_features_unbiased(self, rng):
        x = rng.normal(size=(50, 3))
        s = GaussianStats.from_features(x)
        np.testing.assert_allclose(s.cov, np.cov(x, rowvar=False), atol=1e-12)
        assert s.count == 50

    def test_shrinkage_when_underdetermined(self, rng):
        x = rng.normal(size=(4, 6))
        s = GaussianStats.from_features(x)
        assert np.linalg.eigvalsh(s.cov).min() > 0
        assert fid(s, s) < 1e-6


# -- report ----------------------------------------------------------------
class TestReport:
    def test_schema(self, rng):
        g = rng.uniform(0, 1, (20, 8))
        report = evaluate_scores(g + rng.normal(0, 0.05, g.shape), g)
        assert set(report.per_attribute) == set(ATTRIBUTES)
        for entry in report.per_attribute.values():
            assert tuple(entry) == METRIC_KEYS
        assert tuple(report.mean) == METRIC_KEYS
        assert report.count == 20 and report.config["emd_ordering"] == "dataset"

    def test_perfect_prediction(self, rng):
        g = rng.uniform(0, 1, (15, 8))
        m = evaluate_scores(g, g).mean
        assert m["srcc"] == pytest.approx(1.0) and m["mse"] == 0.0 and m["emd"] == 0.0

    def test_undefined_reported_as_none(self, rng):
        g = rng.uniform(0, 1, (10, 8))
        p = g.copy()
        p[:, 2] = 0.5
        report = evaluate_scores(p, g)
        assert report.per_attribute["roughness"]["srcc"] is None
        assert report.mean["srcc"] is None and report.mean["mse"] is not None

    def test_emd_on_score_scale(self):
        g = np.full((4, 8), 0.3)
        report = evaluate_scores(g + 0.1, g)
        assert report.mean["emd"] == pytest.approx(1.0)
        assert report.mean["mse"] == pytest.approx(0.01)

    def test_json_round_trip(self, rng):
        g = rng.uniform(0, 1, (12, 8))
        report = evaluate_scores(rng.uniform(0, 1, g.shape), g)
        again = MetricReport.from_dict(json.loads(report.to_json()))
        assert again.to_dict() == json.loads(report.to_json())


# -- saliency --------------------------------------------------------------
class LinearModel:
    """Feature map is a fixed strided conv of the input; scores are linear in it."""

    def __init__(self, rng, channels=3, size=16, stride=4, bias=True):
        self.kernel = T.Tensor(rng.normal(size=(channels, 3, stride, stride)))
        self.readout = T.Tensor(np.abs(rng.normal(size=(channels * (size // stride) ** 2, 8))))
        self.bias = T.Tensor(rng.normal(size=channels)) if bias else None
        self.stride = stride
        self.dtype = np.float64

    def saliency_forward(self, x):
        fmap = T.conv2d(x, self.kernel, self.bias, stride=self.stride)
        raw = T.matmul(T.reshape(fmap, (1, -1)), self.readout)
        return fmap, raw

    def analytic(self, image, k):
        x = np.asarray(image, dtype=np.float64)
        c, h = self.kernel.shape[0], x.shape[1] // self.stride
        acts = np.zeros((c, h, h))
        for o in range(c):
            for i in range(h):
                for j in range(h):
                    patch = x[:, i * self.stride:(i + 1) * self.stride, j * self.stride:(j + 1) * self.stride]
                    acts[o, i, j] = (patch * self.kernel.data[o]).sum()
                    if self.bias is not None:
                        acts[o, i, j] += self.bias.data[o]
        grads = self.readout.data[:, k].reshape(c, h, h)
        cam = np.maximum(np.tensordot(grads.mean(axis=(1, 2)), acts, axes=1), 0)
        return (cam - cam.min()) / (cam.max() - cam.min())


@pytest.fixture
def linear_model(f64, rng):
    return LinearModel(rng)


class TestSaliency:
    @pytest.mark.parametrize("k", [0, 3, 7])
    def test_linear_model_analytic(self, linear_model, rng, k):
        image = rng.uniform(0, 1, (3, 16, 16))
        heat = smooth_grad_cam(linear_model, image, k, n=1, noise_std=0.0)
        assert np.abs(heat - linear_model.analytic(image, k)).max() < 1e-6

    def test_degenerate_smoothing_is_grad_cam(self, linear_model, rng):
        image = rng.uniform(0, 1, (3, 16, 16))
        np.testing.assert_array_equal(smooth_grad_cam(linear_model, image, 2, n=1, noise_std=0.0),
                                      grad_cam(linear_model, image, 2))

    def test_range_shape_reproducible(self, linear_model, rng):
        image = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        a = smooth_grad_cam(linear_model, image, 1, n=4, seed=9)
        assert a.shape == (4, 4) and a.min() >= 0 and a.max() <= 1
        np.testing.assert_array_equal(a, smooth_grad_cam(linear_model, image, 1, n=4, seed=9))

    def test_brightness_shift_keeps_argmax(self, f64, rng):
        # without bias the map is linear in the image, so uniform scaling keeps its shape
        model = LinearModel(rng, bias=False)
        image = rng.uniform(0.1, 0.5, (3, 16, 16))
        a, b = grad_cam(model, image, 0), grad_cam(model, 1.8 * image, 0)
        assert a.argmax() == b.argmax()

    def test_constant_map_warns(self, f64, rng):
        model = LinearModel(rng)
        model.kernel.data[:] = 0.0
        with pytest.warns(SaliencyWarning):
            heat = grad_cam(model, rng.uniform(0, 1, (3, 16, 16)), 0)
        assert not heat.any()

    def test_bad_attribute(self, linear_model, rng):
        with pytest.raises(IndexError):
            grad_cam(linear_model, rng.uniform(0, 1, (3, 16, 16)), 8)

    def test_bad_arguments(self, linear_model, rng):
        image = rng.uniform(0, 1, (3, 16, 16))
        with pytest.raises(ValueError):
            smooth_grad_cam(linear_model, image, 0, n=0)
        with pytest.raises(ValueError):
            smooth_grad_cam(linear_model, image, 0, noise_std=-1.0)

    def test_write_heatmap(self, tmp_path, rng):
        heat = rng.uniform(0, 1, (4, 4))
        image = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        write_heatmap(heat, image, tmp_path / "h.pgm", tmp_path / "o.ppm")
        assert pnm.read(tmp_path / "h.pgm").shape == (4, 4)
        assert pnm.read(tmp_path / "o.ppm").shape == (16, 16, 3)
