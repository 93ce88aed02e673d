import numpy as np
import pytest

from depthfocus import tensor as T
from depthfocus.encoder import TokenSet
from depthfocus.fusion import INF, FusionConfig, FusionError, StackFusion, group_tokens, scaled_norms
from depthfocus.gradcheck import grad_check
from depthfocus.nn import lstm_cell
from depthfocus.tensor import Tensor

D = 8


def make_fusion(threshold=0.4, seed=0, **kw):
    with T.precision(np.float64):
        return StackFusion(D, FusionConfig(threshold=threshold, **kw), np.random.default_rng(seed)).astype(np.float64)


def frames(seed, n=3, k=4, scale=1.0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, (n, k, D)) * scale, dtype=np.float64)


class TestGrouping:
    def test_hand_example(self):
        d = 4
        # one-hot tokens with entry s*sqrt(d) have scaled norm s
        tokens = np.zeros((3, d))
        for i, s in enumerate([0.3, 0.5, 0.4]):
            tokens[i, 0] = s * np.sqrt(d)
        np.testing.assert_allclose(scaled_norms(tokens), [0.3, 0.5, 0.4])
        active, rest = group_tokens(tokens, FusionConfig(threshold=0.4))
        assert active.tolist() == [1] and rest.tolist() == [0, 2]

    def test_zero_threshold_activates_all(self):
        active, rest = group_tokens(np.ones((5, 3)), FusionConfig(threshold=0.0))
        assert active.size == 5 and rest.size == 0

    def test_infinite_threshold_activates_none(self):
        active, _ = group_tokens(np.full((5, 3), 1e30), FusionConfig(threshold=INF))
        assert active.size == 0

    def test_raw_norm_option(self):
        t = np.full((1, 16), 0.2)  # raw norm 0.8, scaled 0.2
        assert group_tokens(t, FusionConfig(threshold=0.4, normalize_before_threshold=False))[0].size == 1
        assert group_tokens(t, FusionConfig(threshold=0.4))[0].size == 0

    def test_tokenset_accepted(self):
        ts = TokenSet(Tensor(np.ones((4, 2))), (2, 2))
        assert group_tokens(ts, FusionConfig(threshold=0.0))[0].size == 4

    def test_invalid_config(self):
        with pytest.raises(FusionError):
            FusionConfig(threshold=-0.1)
        with pytest.raises(FusionError):
            FusionConfig(lstm_hidden=0)


class TestFuseStep:
    def test_single_frame_average_passthrough(self):
        fus = make_fusion(INF)
        x = frames(1, n=1)[0]
        _, out = fus.fuse_step(fus.initial_state(4, np.float64), x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_single_frame_lstm_matches_direct_cells(self):
        fus = make_fusion(0.0)
        x = frames(2, n=1)[0]
        _, out = fus.fuse_step(fus.initial_state(4, np.float64), x)
        z = Tensor(np.zeros((4, D)), dtype=np.float64)
        h = x
        for cell in fus.cells:
            h, _ = lstm_cell(h, z, z, cell.w_x, cell.w_h, cell.bias)
        np.testing.assert_allclose(out.data, h.data, atol=1e-14)

    def test_running_mean_of_equal_tokens(self):
        fus = make_fusion(INF)
        x = frames(3, n=1)[0]
        state = fus.initial_state(4, np.float64)
        state, _ = fus.fuse_step(state, x)
        state, out = fus.fuse_step(state, x)
        np.testing.assert_allclose(out.data, x.data, atol=1e-15)
        assert state.counts.tolist() == [2, 2, 2, 2] and state.frames_seen == 2

    def test_mixed_groups_keep_input_order(self):
        fus = make_fusion(0.4)
        x = np.zeros((4, D))
        x[0] = 0.01  # quiet
        x[1] = 2.0  # loud
        x[2] = 0.02
        x[3] = -3.0
        state = fus.initial_state(4, np.float64)
        state, out = fus.fuse_step(state, Tensor(x, dtype=np.float64))
        np.testing.assert_array_equal(out.data[[0, 2]], x[[0, 2]])
        _, lstm_only = make_fusion(0.0).fuse_step(state.initial(4, D, D, 2, np.float64), Tensor(x, dtype=np.float64))
        np.testing.assert_allclose(out.data[[1, 3]], lstm_only.data[[1, 3]], atol=1e-14)
        assert state.counts.tolist() == [1, 0, 1, 0]

    def test_geometry_mismatch(self):
        fus = make_fusion()
        with pytest.raises(FusionError):
            fus.fuse_step(fus.initial_state(4, np.float64), Tensor(np.zeros((5, D))))


class TestFuseStack:
    def test_infinite_threshold_is_running_mean(self):
        fus = make_fusion(INF)
        x = frames(4, n=3)
        out = fus.fuse_stack(x)
        np.testing.assert_allclose(out.data, x.data.mean(axis=0), atol=1e-6)

    def test_zero_threshold_leaves_averages(self):
        fus = make_fusion(0.0)
        out, state = fus.fuse_stack(frames(5, n=3), return_state=True)
        np.testing.assert_array_equal(state.avg.data, 0.0)
        assert state.counts.sum() == 0
        assert out.shape == (4, D)

    def test_single_frame_equals_one_step(self):
        fus = make_fusion(0.4)
        x = frames(6, n=1, scale=3.0)
        _, step = fus.fuse_step(fus.initial_state(4, np.float64), x[0])
        np.testing.assert_array_equal(fus.fuse_stack(x).data, step.data)

    def test_arbitrary_lengths(self):
        fus = make_fusion(0.4)
        for n in (1, 2, 10, 13):
            assert fus.fuse_stack(frames(n, n=n, scale=2.0)).shape == (4, D)

    def test_order_sensitive(self):
        fus = make_fusion(0.0)
        x = frames(7, n=4)
        rev = Tensor(x.data[::-1].copy(), dtype=np.float64)
        assert np.max(np.abs(fus.fuse_stack(x).data - fus.fuse_stack(rev).data)) > 1e-6

    def test_empty(self):
        with pytest.raises(FusionError):
            make_fusion().fuse_stack([])

    def test_state_memory_independent_of_length(self):
        fus = make_fusion(0.4)
        _, s2 = fus.fuse_stack(frames(8, n=2, scale=2.0), return_state=True)
        _, s9 = fus.fuse_stack(frames(8, n=9, scale=2.0), return_state=True)
        assert s2.nbytes() == s9.nbytes()
        assert s2.nbytes() == 4 * (2 * 2 * D + D) * 8 + 4 * 8

    def test_parameter_count_independent_of_k(self):
        fus = make_fusion()
        before = fus.num_parameters()
        fus.fuse_stack(frames(9, k=16))
        assert fus.num_parameters() == before
        # per layer: 4 gates × (d_in + d_h + 1) × d_h
        assert before == 2 * 4 * (D + D + 1) * D

    def test_projection_when_hidden_differs(self):
        fus = make_fusion(0.0, lstm_hidden=5)
        assert fus.proj is not None
        assert fus.fuse_stack(frames(10)).shape == (4, D)

    def test_gradcheck(self):
        fus = make_fusion(0.4, lstm_layers=1)
        data = np.random.default_rng(11).uniform(-1, 1, (3, 4, D))
        data[:, ::2] *= 0.1  # quiet positions take the averaging path
        x = Tensor(data, requires_grad=True, dtype=np.float64)
        active = [group_tokens(x.data[i], fus.config)[0].size for i in range(3)]
        assert 0 < sum(active) < 12  # both paths exercised
        params = dict(fus.named_parameters())
        params["tokens"] = x
        r = np.random.default_rng(0).uniform(-1, 1, (4, D))
        report = grad_check(lambda: (fus.fuse_stack(x) * Tensor(r, dtype=np.float64)).sum(), params)
        assert report.passed, report
