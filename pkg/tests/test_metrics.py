import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from depthfocus import tensor as T
from depthfocus.gradcheck import grad_check
from depthfocus.metrics import LossConfig, MetricsReport, compute_metrics, total_loss
from depthfocus.optics import DomainError
from depthfocus.tensor import ShapeError, Tensor


def loop_metrics(pred, gt):
    """Per-pixel scalar loops, written without numpy vector ops."""
    h, w = len(gt), len(gt[0])
    n = h * w

    def at(a, i, j):
        return float(a[i][j])

    delta = [[at(pred, i, j) - at(gt, i, j) for j in range(w)] for i in range(h)]

    def d2(i, j, axis):
        # central second difference; at a border use the one-sided stencil
        if axis == 1:
            c = min(max(j, 1), w - 2)
            return delta[i][c + 1] - 2 * delta[i][c] + delta[i][c - 1]
        c = min(max(i, 1), h - 2)
        return delta[c + 1][j] - 2 * delta[c][j] + delta[c - 1][j]

    def d1(a, i, j, axis):
        if axis == 1:
            if j == 0:
                return a[i][1] - a[i][0]
            if j == w - 1:
                return a[i][w - 1] - a[i][w - 2]
            return (a[i][j + 1] - a[i][j - 1]) / 2
        if i == 0:
            return a[1][j] - a[0][j]
        if i == h - 1:
            return a[h - 1][j] - a[h - 2][j]
        return (a[i + 1][j] - a[i - 1][j]) / 2

    dx = [[d1(delta, i, j, 1) for j in range(w)] for i in range(h)]
    sq = lsq = ab = sr = bump = 0.0
    acc = [0, 0, 0]
    for i in range(h):
        for j in range(w):
            p, g = at(pred, i, j), at(gt, i, j)
            e = p - g
            sq += e * e
            lsq += (math.log(p) - math.log(g)) ** 2
            ab += abs(e) / g
            sr += e * e / g
            hxx, hyy, hxy = d2(i, j, 1), d2(i, j, 0), d1(dx, i, j, 0)
            bump += min(0.05, math.sqrt(hxx * hxx + 2 * hxy * hxy + hyy * hyy))
            r = max(p / g, g / p)
            for t in range(3):
                if r < 1.25 ** (t + 1):
                    acc[t] += 1
    return [math.sqrt(sq / n), math.sqrt(lsq / n), ab / n, sr / n, 100 * bump / n] + [100 * a / n for a in acc]


class TestMetrics:
    def test_perfect(self):
        g = np.random.default_rng(0).uniform(0.5, 2, (8, 8))
        r = compute_metrics(g, g)
        assert r.rmse == r.log_rmse == r.abs_rel == r.sqr_rel == r.bump == 0
        assert r.acc_1 == r.acc_2 == r.acc_3 == 100

    def test_uniform_scale(self):
        g = np.random.default_rng(0).uniform(0.5, 2, (8, 8))
        r = compute_metrics(1.3 * g, g)
        assert (r.acc_1, r.acc_2, r.acc_3) == (0, 100, 100)
        assert r.abs_rel == pytest.approx(0.3)

    def test_affine_delta_has_no_bump(self):
        yy, xx = np.mgrid[0:16, 0:16]
        g = np.full((16, 16), 3.0)
        assert compute_metrics(g + 0.01 * xx - 0.02 * yy, g).bump == pytest.approx(0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.uniform(0.2, 2.0, (16, 16))
        p = g * rng.uniform(0.5, 2.0, (16, 16))
        r = compute_metrics(p, g)
        np.testing.assert_allclose(r.as_row(), loop_metrics(p.tolist(), g.tolist()), rtol=0, atol=1e-9)
        assert r.acc_1 <= r.acc_2 <= r.acc_3
        assert r.bump <= 5

    def test_mask(self):
        rng = np.random.default_rng(3)
        g = rng.uniform(0.5, 2, (6, 6))
        p = g.copy()
        p[0, 0] = 10.0
        mask = np.ones_like(g, dtype=bool)
        mask[0, 0] = False
        assert compute_metrics(p, g, mask).rmse == 0

    def test_errors(self):
        g = np.ones((4, 4))
        with pytest.raises(DomainError):
            compute_metrics(g, g * 0)
        with pytest.raises(DomainError):
            compute_metrics(g, g, np.zeros_like(g, dtype=bool))
        with pytest.raises(ShapeError):
            compute_metrics(g, np.ones((4, 5)))

    def test_csv_and_json(self):
        r = compute_metrics(np.full((4, 4), 2.0), np.ones((4, 4)))
        assert MetricsReport.csv_header().strip().split(",") == [
            "rmse", "log_rmse", "abs_rel", "sqr_rel", "bump", "acc_1", "acc_2", "acc_3"]
        assert len(r.to_csv_row().strip().split(",")) == 8
        assert '"rmse": 1.0' in r.to_json()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.1, 10.0))
def test_delta_accuracy_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.2, 2, (8, 8))
    p = g * rng.uniform(0.5, 2, (8, 8))
    a, b = compute_metrics(p, g), compute_metrics(p * scale, g * scale)
    assert (a.acc_1, a.acc_2, a.acc_3) == (b.acc_1, b.acc_2, b.acc_3)
    assert b.abs_rel == pytest.approx(a.abs_rel, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (6, 7), elements=st.floats(0.01, 100.0)),
       hnp.arrays(np.float64, (6, 7), elements=st.floats(0.01, 100.0)))
def test_metric_invariants(p, g):
    r = compute_metrics(p, g)
    assert all(np.isfinite(v) and v >= 0 for v in r.as_row())
    assert r.acc_1 <= r.acc_2 <= r.acc_3 <= 100
    assert r.bump <= 5


class TestLoss:
    def test_hand_example(self):
        pred = Tensor([[1.0, 2.0], [3.0, 4.0]])
        value = float(total_loss(pred, np.zeros((2, 2))).data)
        assert value == pytest.approx(8.1, rel=1e-6)

    def test_alpha_zero_is_mse(self):
        rng = np.random.default_rng(0)
        p, g = rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5))
        with T.precision(np.float64):
            v = float(total_loss(Tensor(p), g, LossConfig(alpha=0.0)).data)
        assert v == np.mean((p - g) ** 2)

    def test_mae_variant(self):
        with T.precision(np.float64):
            v = total_loss(Tensor([[1.0, -3.0]]), np.zeros((1, 2)), LossConfig(variant="mae"))
        assert float(v.data) == 2.0

    def test_zero_iff_equal(self):
        g = np.random.default_rng(1).uniform(size=(4, 4))
        assert float(total_loss(Tensor(g), g).data) == 0
        p = g.copy()
        p[1, 2] += 1e-3
        assert float(total_loss(Tensor(p), g).data) > 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            total_loss(Tensor(np.ones((2, 2))), np.ones((2, 3)))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=-1)
        with pytest.raises(ValueError):
            LossConfig(variant="huber")

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        p = Tensor(rng.uniform(size=(5, 6)), requires_grad=True, dtype=np.float64)
        g = rng.uniform(size=(5, 6))
        report = grad_check(lambda: total_loss(p, g), [p])
        assert report.passed, report
