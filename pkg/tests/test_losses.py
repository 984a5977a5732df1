"""Objective terms: analytic values, gradients, and edge cases."""

import numpy as np
import pytest

import advpatch.diffcore as dc
from advpatch import losses, textures
from advpatch.diffcore import gradcheck
from advpatch.losses import (ContentLossConfig, LossError, LossWeights,
                             adv_mde_loss, adv_ss_targeted, adv_ss_untargeted,
                             content_loss, total_loss, tv_loss)


def full_mask(h, w):
    return np.ones((h, w), dtype=np.float64)


class TestMdeLoss:
    def test_uniform_half_disparity(self):
        disp = dc.Tensor(np.full((4, 6), 0.5))
        val = adv_mde_loss(disp, full_mask(4, 6)).item()
        assert abs(val - (-np.log(0.5 + 1e-6))) < 1e-12
        assert abs(val - 0.6931) < 1e-4

    def test_gradient_pushes_disparity_up(self):
        # loss decreases as disparity grows, so d(loss)/d(disp) < 0 on mask
        mask = np.zeros((3, 3))
        mask[1, :2] = 1.0
        disp = dc.Tensor(np.full((3, 3), 0.4), requires_grad=True)
        with dc.Tape():
            adv_mde_loss(disp, mask).backward()
        assert np.all(disp.grad[mask > 0] < 0)
        assert np.all(disp.grad[mask == 0] == 0)

    def test_masked_mean_semantics(self):
        rng = np.random.default_rng(0)
        disp = rng.uniform(0.1, 0.9, size=(6, 8))
        mask = (rng.random((6, 8)) < 0.5).astype(np.float64)
        mask[0, 0] = 1.0
        small = adv_mde_loss(dc.Tensor(disp), mask).item()
        big = adv_mde_loss(dc.Tensor(np.repeat(np.repeat(disp, 2, 0), 2, 1)),
                           np.repeat(np.repeat(mask, 2, 0), 2, 1)).item()
        assert abs(small - big) < 1e-12

    def test_empty_mask_raises(self):
        with pytest.raises(LossError):
            adv_mde_loss(dc.Tensor(np.full((2, 2), 0.5)), np.zeros((2, 2)))

    def test_mask_shape_mismatch_raises(self):
        with pytest.raises(LossError):
            adv_mde_loss(dc.Tensor(np.full((2, 2), 0.5)), np.ones((2, 3)))

    def test_finite_difference(self):
        rng = np.random.default_rng(1)
        mask = (rng.random((4, 5)) < 0.6).astype(np.float64)
        mask[2, 2] = 1.0

        def f(disp):
            return adv_mde_loss(disp, mask)

        gradcheck.check_gradients(f, [rng.uniform(0.2, 0.8, size=(4, 5))])


class TestUntargetedLoss:
    def test_uniform_quarter_complement(self):
        probs = np.full((3, 4, 4), 0.1)
        probs[0] = 0.75
        val = adv_ss_untargeted(dc.Tensor(probs), full_mask(4, 4)).item()
        assert abs(val - (-np.log(0.25 + 1e-6))) < 1e-12
        assert abs(val - 1.3863) < 1e-4

    def test_gradient_pushes_road_down(self):
        probs = dc.Tensor(np.full((2, 3, 3), 0.5), requires_grad=True)
        with dc.Tape():
            adv_ss_untargeted(probs, full_mask(3, 3), road_class=0).backward()
        assert np.all(probs.grad[0] > 0)       # raising p_road raises the loss
        assert np.all(probs.grad[1] == 0)

    def test_bad_road_class(self):
        with pytest.raises(LossError):
            adv_ss_untargeted(dc.Tensor(np.full((2, 2, 2), 0.5)),
                              full_mask(2, 2), road_class=5)

    def test_finite_difference(self):
        rng = np.random.default_rng(2)
        mask = (rng.random((3, 4)) < 0.7).astype(np.float64)
        mask[1, 1] = 1.0

        def f(probs):
            return adv_ss_untargeted(probs, mask, road_class=1)

        gradcheck.check_gradients(f, [rng.uniform(0.1, 0.9, size=(4, 3, 4))])


class TestTargetedLoss:
    def test_value_with_single_target(self):
        probs = np.full((6, 2, 2), 0.05)
        probs[4] = 0.6
        val = adv_ss_targeted(dc.Tensor(probs), full_mask(2, 2), [4]).item()
        assert abs(val - (-np.log(0.6 + 1e-6))) < 1e-12

    def test_max_over_target_set(self):
        probs = np.full((6, 2, 2), 0.05)
        probs[3] = 0.2
        probs[5] = 0.55
        val = adv_ss_targeted(dc.Tensor(probs), full_mask(2, 2), [3, 4, 5]).item()
        assert abs(val - (-np.log(0.55 + 1e-6))) < 1e-12

    def test_tie_routes_to_first_listed(self):
        probs = dc.Tensor(np.full((6, 2, 2), 0.3), requires_grad=True)
        with dc.Tape():
            adv_ss_targeted(probs, full_mask(2, 2), [4, 3]).backward()
        assert np.all(probs.grad[4] < 0)        # winner gets the pull
        assert np.all(probs.grad[3] == 0)
        assert np.all(probs.grad[5] == 0)

    def test_empty_targets_raise(self):
        with pytest.raises(LossError):
            adv_ss_targeted(dc.Tensor(np.full((6, 2, 2), 0.3)),
                            full_mask(2, 2), [])

    def test_finite_difference(self):
        rng = np.random.default_rng(3)
        mask = (rng.random((3, 3)) < 0.7).astype(np.float64)
        mask[0, 0] = 1.0
        probs = rng.uniform(0.1, 0.9, size=(6, 3, 3))
        # pull argmax candidates apart so h=1e-3 cannot flip the winner
        probs[3] += 0.05
        probs[4][probs[4] > probs[3]] = probs[3][probs[4] > probs[3]] - 0.03
        probs[5][probs[5] > probs[3]] = probs[3][probs[5] > probs[3]] - 0.03

        def f(p):
            return adv_ss_targeted(p, mask, [3, 4, 5])

        gradcheck.check_gradients(f, [probs])


class TestTvLoss:
    def test_constant_is_zero(self):
        assert tv_loss(dc.Tensor(np.full((8, 8, 3), 0.37))).item() == 0.0

    def test_checkerboard_unit_value(self):
        theta = np.zeros((2, 2, 1))
        theta[0, 1, 0] = 1.0
        theta[1, 0, 0] = 1.0
        assert abs(tv_loss(dc.Tensor(theta)).item() - 1.0) < 1e-12

    def test_homogeneity(self):
        rng = np.random.default_rng(4)
        theta = rng.random((6, 6, 3))
        base = tv_loss(dc.Tensor(theta)).item()
        scaled = tv_loss(dc.Tensor(3.0 * theta)).item()
        assert abs(scaled - 3.0 * base) < 1e-10

    def test_non_square_raises(self):
        with pytest.raises(LossError):
            tv_loss(dc.Tensor(np.zeros((4, 5, 3))))

    def test_finite_difference(self):
        # well-separated values keep FD probes away from the |.| kinks
        rng = np.random.default_rng(5)
        theta = rng.permuted(np.linspace(0.1, 0.9, 75)).reshape(5, 5, 3)
        gradcheck.check_gradients(lambda t: tv_loss(t), [theta])


def _toy_extractor():
    rng = np.random.default_rng(99)
    w = dc.constant(rng.normal(0, 0.4, size=(4, 3, 3, 3)))

    def extract(theta):
        h, wd, c = theta.shape
        img = dc.reshape(dc.transpose(theta, (2, 0, 1)), (1, c, h, wd))
        return dc.sigmoid(dc.conv2d(img, w, padding=1))

    return extract


class TestContentLoss:
    def test_zero_at_reference(self):
        refs = textures.reference_set(16)
        cfg = ContentLossConfig(extractor=_toy_extractor(), references=refs)
        val = content_loss(dc.Tensor(refs[1].astype(np.float64)), cfg).item()
        assert val < 1e-12

    def test_selects_nearest_branch(self):
        refs = textures.reference_set(16)
        cfg = ContentLossConfig(extractor=_toy_extractor(), references=refs)
        theta = dc.Tensor(refs[2].astype(np.float64) + 1e-3, requires_grad=True)
        with dc.Tape():
            val = content_loss(theta, cfg)
            val.backward()
        # near ref 2 the distance is tiny; gradient exists and is finite
        assert val.item() < 0.05
        assert np.all(np.isfinite(theta.grad))

    def test_no_references_raises(self):
        cfg = ContentLossConfig(extractor=_toy_extractor(), references=[])
        with pytest.raises(LossError):
            content_loss(dc.Tensor(np.zeros((16, 16, 3))), cfg)

    def test_finite_difference(self):
        # pooled features keep every |f - ref| entry far from its kink,
        # which a full feature map cannot guarantee under FD probes
        rng = np.random.default_rng(6)
        base = _toy_extractor()

        def pooled(theta):
            return dc.reduce_mean(base(theta), axes=(2, 3))

        refs = textures.reference_set(8)
        cfg = ContentLossConfig(extractor=pooled, references=refs)
        theta = rng.uniform(0.3, 0.7, size=(8, 8, 3))
        feats = pooled(dc.constant(theta)).data
        ref_feats = cfg.reference_features()
        best = int(np.argmin([np.mean(np.abs(feats - rf)) for rf in ref_feats]))
        assert np.min(np.abs(feats - ref_feats[best])) > 0.01   # clear of kinks

        gradcheck.check_gradients(lambda t: content_loss(t, cfg), [theta])


class TestTotalLoss:
    def unit_components(self):
        return {k: dc.constant(1.0) for k in
                ("mde", "ss_untargeted", "ss_targeted", "tv", "content")}

    def test_default_weights_sum(self):
        val = total_loss(self.unit_components(), LossWeights()).item()
        assert abs(val - 4.5) < 1e-12

    def test_zero_weight_drops_gradient_exactly(self):
        theta = dc.Tensor(np.array([0.5]), requires_grad=True)
        with dc.Tape():
            comp = {"tv": dc.reduce_sum(dc.mul(theta, theta)),
                    "mde": dc.reduce_sum(theta)}
            total_loss(comp, LossWeights(alpha=0.0, gamma=1.0,
                                         beta_ua=0.0, beta_ta=0.0,
                                         delta=0.0)).backward()
        assert abs(theta.grad[0] - 1.0) < 1e-12   # only d(theta^2) = 2*0.5

    def test_missing_components_skipped(self):
        val = total_loss({"tv": dc.constant(2.0)}, LossWeights()).item()
        assert abs(val - 2.0) < 1e-12

    def test_unknown_component_rejected(self):
        with pytest.raises(LossError):
            total_loss({"bogus": dc.constant(1.0)}, LossWeights())

    def test_negative_weight_rejected(self):
        with pytest.raises(LossError):
            LossWeights(alpha=-1.0)

    def test_all_zero_weights_yield_zero(self):
        val = total_loss(self.unit_components(),
                         LossWeights(0.0, 0.0, 0.0, 0.0, 0.0)).item()
        assert val == 0.0

    def test_linearity_of_gradient(self):
        rng = np.random.default_rng(7)
        base = rng.uniform(0.2, 0.8, size=(4, 4, 3))
        mask = np.ones((4, 4))

        def combined(t):
            comp = {
                "mde": adv_mde_loss(dc.reduce_mean(t, axes=2), mask),
                "tv": tv_loss(t),
            }
            return total_loss(comp, LossWeights(alpha=2.0, gamma=1.0,
                                                beta_ua=0.0, beta_ta=0.0,
                                                delta=0.0))

        g_total = gradcheck.analytic_gradients(combined, [base])[0]
        g_mde = gradcheck.analytic_gradients(
            lambda t: adv_mde_loss(dc.reduce_mean(t, axes=2), mask), [base])[0]
        g_tv = gradcheck.analytic_gradients(lambda t: tv_loss(t), [base])[0]
        assert np.max(np.abs(g_total - (2.0 * g_mde + g_tv))) < 1e-9


class TestReferenceTextures:
    def test_shapes_and_range(self):
        for tex in textures.reference_set(32):
            assert tex.shape == (32, 32, 3)
            assert tex.min() >= 0.0 and tex.max() <= 1.0

    def test_deterministic(self):
        a = textures.concentric_rings(24)
        b = textures.concentric_rings(24)
        assert np.array_equal(a, b)

    def test_mutually_distinct(self):
        refs = textures.reference_set(32)
        for i in range(len(refs)):
            for j in range(i + 1, len(refs)):
                assert np.mean(np.abs(refs[i] - refs[j])) > 0.01
