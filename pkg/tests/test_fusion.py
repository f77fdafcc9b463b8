import math

import numpy as np
import pytest

from rjcma import autodiff as ad
from rjcma import fusion as fu
from rjcma.autodiff import Tensor
from rjcma.metrics import ccc_loss


def make_inputs(cfg, seed=0, mags=1.0):
    rng = np.random.default_rng(seed)
    return {
        m: fu.ModalityFeatures(Tensor(mags * rng.normal(size=(cfg.dim(m), cfg.K))), m)
        for m in fu.MODALITIES
    }


def jca_single_pass(xa, xv, xt, params):
    """Independent single-pass joint cross-attention oracle (plain numpy).

    Mirrors: J = FC([Xa;Xv;Xt]); C_m = tanh((Xm^T W_j J)/sqrt(d));
    H_m = ReLU(Xm W_c C_m); X_att,m = H_m W_h + Xm; concat; MLP head.
    """
    stacked = np.concatenate([xa, xv, xt], axis=0)
    joint = params["fc_joint/w"].data @ stacked + params["fc_joint/b"].data
    d = joint.shape[0]
    attended = []
    for m, x in zip(("a", "v", "t"), (xa, xv, xt)):
        corr = np.tanh(((x.T @ params[f"iter1/W_j{m}"].data) @ joint)
                       * (1.0 / math.sqrt(d)))
        pre = (x @ params[f"iter1/W_c{m}"].data) @ corr
        amap = np.where(pre > 0.0, pre, 0.0)
        attended.append(amap @ params[f"iter1/W_h{m}"].data + x)
    cat = np.concatenate(attended, axis=0)
    hidden = params["head/w1"].data @ cat + params["head/b1"].data
    hidden = np.where(hidden > 0.0, hidden, 0.0)
    out = params["head/w2"].data @ hidden + params["head/b2"].data
    return cat, np.tanh(out)


class TestConfigAndParams:
    def test_joint_dim_is_sum(self):
        cfg = fu.FusionConfig(3, 4, 5, K=7)
        assert cfg.d == 12

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            fu.FusionConfig(0, 1, 1, K=4)
        with pytest.raises(ValueError):
            fu.FusionConfig(1, 1, 1, K=4, iterations=0)

    def test_param_count_is_pure_function_of_config(self):
        cfg = fu.FusionConfig(3, 4, 5, K=6, iterations=2)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        assert params.count() == fu.expected_param_count(cfg)
        d, K, h = 12, 6, 6
        by_hand = (d * d + d
                   + 2 * ((3 + 4 + 5) * d + 3 * 2 * K * K)
                   + h * d + h + h + 1)
        assert params.count() == by_hand

    def test_all_params_require_grad(self):
        cfg = fu.FusionConfig(2, 2, 2, K=3)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        assert all(p.requires_grad for _, p in params.named())


class TestJointRepresentation:
    def test_shape(self):
        cfg = fu.FusionConfig(2, 2, 2, K=3)
        x = make_inputs(cfg)
        fc_w = Tensor(np.eye(6))
        fc_b = Tensor(np.zeros((6, 1)))
        joint = fu.joint_representation(x["a"].features, x["v"].features,
                                        x["t"].features, fc_w, fc_b)
        assert joint.shape == (6, 3)

    def test_identity_fc_gives_raw_concat(self):
        cfg = fu.FusionConfig(2, 2, 2, K=3)
        x = make_inputs(cfg)
        joint = fu.joint_representation(x["a"].features, x["v"].features,
                                        x["t"].features,
                                        Tensor(np.eye(6)), Tensor(np.zeros((6, 1))))
        expected = np.concatenate(
            [x[m].features.data for m in ("a", "v", "t")], axis=0)
        np.testing.assert_array_equal(joint.data, expected)

    def test_column_locality(self):
        # column j of J depends only on column j of each modality
        cfg = fu.FusionConfig(2, 3, 2, K=4)
        rng = np.random.default_rng(1)
        fc_w = Tensor(rng.normal(size=(7, 7)))
        fc_b = Tensor(rng.normal(size=(7, 1)))
        xs = [rng.normal(size=(d, 4)) for d in (2, 3, 2)]

        def run(arrs):
            return fu.joint_representation(Tensor(arrs[0]), Tensor(arrs[1]),
                                           Tensor(arrs[2]), fc_w, fc_b).data

        base = run(xs)
        bumped = [x.copy() for x in xs]
        bumped[1][:, 0] += 1.0
        after = run(bumped)
        assert not np.array_equal(after[:, 0], base[:, 0])
        np.testing.assert_array_equal(after[:, 1:], base[:, 1:])

    def test_frame_count_mismatch(self):
        with pytest.raises(ad.DimensionError):
            fu.joint_representation(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))),
                                    Tensor(np.ones((2, 3))),
                                    Tensor(np.eye(6)), Tensor(np.zeros((6, 1))))


class TestJointCrossCorrelation:
    def test_zero_weight_gives_zero(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
        joint = Tensor(np.random.default_rng(1).normal(size=(6, 3)))
        corr = fu.joint_cross_correlation(x, joint, Tensor(np.zeros((2, 6))))
        np.testing.assert_array_equal(corr.data, np.zeros((3, 3)))

    def test_all_ones_hand_case(self):
        # d_m=1, d=3, K=2, everything ones: each entry tanh(3/sqrt(3)) = tanh(sqrt(3))
        corr = fu.joint_cross_correlation(Tensor(np.ones((1, 2))),
                                          Tensor(np.ones((3, 2))),
                                          Tensor(np.ones((1, 3))))
        expected = math.tanh(math.sqrt(3.0))
        assert expected == pytest.approx(0.9393, abs=1e-4)
        np.testing.assert_allclose(corr.data, np.full((2, 2), expected))

    def test_entries_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(2)
        corr = fu.joint_cross_correlation(Tensor(rng.normal(size=(3, 5))),
                                          Tensor(rng.normal(size=(9, 5))),
                                          Tensor(rng.normal(size=(3, 9))))
        assert np.all(np.abs(corr.data) < 1.0)
        assert corr.shape == (5, 5)


class TestAttentionMap:
    def test_zero_weight(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 4)))
        out = fu.attention_map(x, Tensor(np.eye(4)), Tensor(np.zeros((4, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        out = fu.attention_map(Tensor(rng.normal(size=(2, 4))),
                               Tensor(rng.normal(size=(4, 4))),
                               Tensor(rng.normal(size=(4, 4))))
        assert np.all(out.data >= 0.0)

    def test_identity_weights_give_relu(self):
        x = Tensor(np.random.default_rng(2).normal(size=(3, 4)))
        out = fu.attention_map(x, Tensor(np.eye(4)), Tensor(np.eye(4)))
        np.testing.assert_array_equal(out.data, np.maximum(x.data, 0.0))


class TestAttend:
    def test_zero_map_residual_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
        out = fu.attend(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 3))), x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_weight_residual_identity(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 3)))
        out = fu.attend(Tensor(rng.normal(size=(2, 3))), Tensor(np.zeros((3, 3))), x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_2x2(self):
        h = np.array([[1.0, 2.0], [0.0, 1.0]])
        w = np.array([[1.0, 0.0], [1.0, 1.0]])
        x = np.array([[0.5, 0.5], [1.0, -1.0]])
        out = fu.attend(Tensor(h), Tensor(w), Tensor(x))
        np.testing.assert_array_equal(out.data, h @ w + x)


class TestRjcmaForward:
    def test_l1_reduces_to_single_pass_oracle(self):
        cfg = fu.FusionConfig(3, 4, 2, K=5, iterations=1)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        x = make_inputs(cfg, seed=1)
        out = fu.rjcma_forward(x["a"], x["v"], x["t"], params, cfg)
        cat, preds = jca_single_pass(x["a"].features.data, x["v"].features.data,
                                     x["t"].features.data, params.tensors)
        np.testing.assert_array_equal(out.attended.data, cat)
        np.testing.assert_array_equal(out.predictions.data, preds)

    @pytest.mark.parametrize("l", [1, 2, 3, 4])
    def test_zero_attention_identity(self, l):
        cfg = fu.FusionConfig(3, 3, 3, K=4, iterations=l)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        for i in range(1, l + 1):
            for m in fu.MODALITIES:
                params[f"iter{i}/W_c{m}"].data[:] = 0.0
        x = make_inputs(cfg, seed=2)
        out = fu.rjcma_forward(x["a"], x["v"], x["t"], params, cfg)
        expected = np.concatenate(
            [x[m].features.data for m in fu.MODALITIES], axis=0)
        np.testing.assert_array_equal(out.attended.data, expected)

    def test_deterministic_across_runs(self):
        cfg = fu.FusionConfig(4, 4, 4, K=6, iterations=3)
        params = fu.RjcmaParams(cfg, np.random.default_rng(3))
        x = make_inputs(cfg, seed=4)
        a = fu.rjcma_forward(x["a"], x["v"], x["t"], params, cfg)
        b = fu.rjcma_forward(x["a"], x["v"], x["t"], params, cfg)
        assert np.array_equal(a.predictions.data, b.predictions.data)
        assert np.array_equal(a.attended.data, b.attended.data)

    def test_recursion_nesting(self):
        # step-1 intermediates of an l=3 run equal an independent l=1 run
        cfg3 = fu.FusionConfig(3, 3, 3, K=4, iterations=3)
        params3 = fu.RjcmaParams(cfg3, np.random.default_rng(5))
        x = make_inputs(cfg3, seed=6)
        deep = fu.rjcma_forward(x["a"], x["v"], x["t"], params3, cfg3,
                                collect_intermediates=True)

        cfg1 = fu.FusionConfig(3, 3, 3, K=4, iterations=1)
        params1 = fu.RjcmaParams(cfg1, np.random.default_rng(99))
        for name in ("fc_joint/w", "fc_joint/b"):
            params1.tensors[name].data = params3[name].data.copy()
        for m in fu.MODALITIES:
            for kind in ("W_j", "W_c", "W_h"):
                params1.tensors[f"iter1/{kind}{m}"].data = \
                    params3[f"iter1/{kind}{m}"].data.copy()
        shallow = fu.rjcma_forward(x["a"], x["v"], x["t"], params1, cfg1,
                                   collect_intermediates=True)
        for m in fu.MODALITIES:
            np.testing.assert_array_equal(
                deep.intermediates[0][m]["attended"].data,
                shallow.intermediates[0][m]["attended"].data)

    def test_intermediate_shapes(self):
        cfg = fu.FusionConfig(3, 4, 5, K=6, iterations=2)
        params = fu.RjcmaParams(cfg, np.random.default_rng(7))
        x = make_inputs(cfg, seed=8)
        out = fu.rjcma_forward(x["a"], x["v"], x["t"], params, cfg,
                               collect_intermediates=True)
        for step in out.intermediates:
            for m in fu.MODALITIES:
                assert step[m]["corr"].shape == (6, 6)
                assert step[m]["map"].shape == (cfg.dim(m), 6)
                assert step[m]["attended"].shape == (cfg.dim(m), 6)
        assert out.attended.shape == (12, 6)
        assert out.predictions.shape == (1, 6)

    def test_frame_permutation_conjugates_correlation(self):
        # with W_j fixed, permuting frames of X_m and J conjugates C_m by P
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 5))
        joint = rng.normal(size=(9, 5))
        w = rng.normal(size=(3, 9))
        perm = rng.permutation(5)
        p = np.eye(5)[:, perm]
        base = fu.joint_cross_correlation(Tensor(x), Tensor(joint), Tensor(w)).data
        permuted = fu.joint_cross_correlation(Tensor(x @ p), Tensor(joint @ p),
                                              Tensor(w)).data
        np.testing.assert_allclose(permuted, p.T @ base @ p, atol=1e-12)

    def test_shape_mismatch_propagates(self):
        cfg = fu.FusionConfig(3, 3, 3, K=4)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        bad = fu.ModalityFeatures(Tensor(np.ones((3, 5))), "a")
        good = make_inputs(cfg)
        with pytest.raises(ad.DimensionError):
            fu.rjcma_forward(bad, good["v"], good["t"], params, cfg)


class TestPredictHead:
    def test_zero_weights_give_zero(self):
        cfg = fu.FusionConfig(2, 2, 2, K=5)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        for name in ("head/w1", "head/b1", "head/w2", "head/b2"):
            params.tensors[name].data[:] = 0.0
        out = fu.predict_head(Tensor(np.random.default_rng(1).normal(size=(6, 5))),
                              params)
        np.testing.assert_array_equal(out.data, np.zeros((1, 5)))

    @pytest.mark.parametrize("k", [1, 4, 17])
    def test_output_shape(self, k):
        cfg = fu.FusionConfig(2, 2, 2, K=k)
        params = fu.RjcmaParams(cfg, np.random.default_rng(0))
        out = fu.predict_head(Tensor(np.ones((6, k))), params)
        assert out.shape == (1, k)
        assert np.all(np.abs(out.data) <= 1.0)

    def test_head_gradient_through_ccc_loss(self):
        cfg = fu.FusionConfig(2, 2, 2, K=8)
        params = fu.RjcmaParams(cfg, np.random.default_rng(10))
        rng = np.random.default_rng(11)
        x_att = rng.normal(size=(6, 8))
        gt = np.clip(rng.normal(scale=0.5, size=8), -1, 1)
        head = {n: params[n] for n in
                ("head/w1", "head/b1", "head/w2", "head/b2")}
        report = ad.grad_check(
            lambda: ccc_loss(fu.predict_head(Tensor(x_att), params), gt),
            head, h=1e-5, tol=1e-4)
        assert report.passed, report.errors


class TestFullBlockGradients:
    def test_rjcma_gradcheck_at_spec_size(self):
        # every fusion parameter at d_m=8, K=16, l=3 passes at 1e-4
        cfg = fu.FusionConfig(8, 8, 8, K=16, iterations=3)
        params = fu.RjcmaParams(cfg, np.random.default_rng(12))
        rng = np.random.default_rng(13)
        # O(1) attention weights keep ReLU pre-activations off the kink
        for name, p in params.named():
            if "/W_c" in name or "/W_h" in name:
                p.data = rng.uniform(-0.5, 0.5, size=p.data.shape)
        x = make_inputs(cfg, seed=14)
        gt = np.clip(rng.normal(scale=0.5, size=16), -1, 1)

        def f():
            out = fu.rjcma_forward(x["a"], x["v"], x["t"], params, cfg)
            return ccc_loss(out.predictions, gt)

        report = ad.grad_check(f, dict(params.named()), h=1e-5, tol=1e-4)
        assert report.passed, sorted(report.errors.items(), key=lambda kv: -kv[1])[:3]
