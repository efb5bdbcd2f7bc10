"""Loss closed forms, reductions, and gradient checks."""

import math

import numpy as np
import pytest

from lbpinpaint.losses import (
    FeatureExtractor,
    LossWeights,
    adversarial_losses,
    frozen_random_extractor,
    identity_extractor,
    multi_level_loss,
    perceptual_loss,
    reconstruction_loss,
    style_loss,
    weighted_total,
)
from lbpinpaint.tensor import ConvParams, Tensor, conv2d, grad_check


class TestReconstruction:
    def test_identical_is_zero(self):
        x = Tensor(np.random.default_rng(0).standard_normal((1, 3, 4, 4)))
        assert reconstruction_loss(x, x).item() == 0.0

    def test_hand_norm(self):
        out = Tensor(np.array([1.0, 2.0]))
        gt = Tensor(np.zeros(2))
        assert reconstruction_loss(out, gt).item() == pytest.approx(math.sqrt(5), abs=1e-12)

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        gt = Tensor(rng.standard_normal((2, 5)))
        d = rng.standard_normal((2, 5))
        base = reconstruction_loss(Tensor(gt.data + d), gt).item()
        scaled = reconstruction_loss(Tensor(gt.data + 3.5 * d), gt).item()
        assert scaled == pytest.approx(3.5 * base, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(Exception):
            reconstruction_loss(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1))))


class TestMultiLevel:
    def test_identical_is_zero(self):
        feats = [Tensor(np.random.default_rng(2).standard_normal((1, 2, 3, 3)))]
        assert multi_level_loss(feats, feats).item() == 0.0

    def test_single_layer_hand_value(self):
        out = [Tensor(np.array([3.0, 4.0]))]
        gt = [Tensor(np.zeros(2))]
        assert multi_level_loss(out, gt).item() == pytest.approx(5.0, abs=1e-12)

    def test_additivity_over_layers(self):
        rng = np.random.default_rng(3)
        o1, g1 = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))
        o2, g2 = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)))
        combined = multi_level_loss([o1, o2], [g1, g2]).item()
        separate = multi_level_loss([o1], [g1]).item() + multi_level_loss([o2], [g2]).item()
        assert combined == pytest.approx(separate, rel=1e-12)

    def test_layer_mismatch_names_layer(self):
        with pytest.raises(Exception) as e:
            multi_level_loss(
                [Tensor(np.zeros(2)), Tensor(np.zeros(3))],
                [Tensor(np.zeros(2)), Tensor(np.zeros(4))],
            )
        assert "layer 1" in str(e.value)

    def test_target_branch_gets_no_gradient(self):
        out = Tensor(np.ones(3), requires_grad=True)
        gt = Tensor(np.zeros(3), requires_grad=True)
        multi_level_loss([out], [gt]).backward()
        assert out.grad is not None
        assert gt.grad is None


class TestAdversarial:
    def test_uninformative_discriminator_closed_form(self):
        half = Tensor(np.full((1, 1, 2, 2), 0.5))
        d_loss, g_loss = adversarial_losses(half, half)
        assert d_loss.item() == pytest.approx(2 * math.log(2), abs=1e-12)
        assert g_loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_discriminator_limit(self):
        d_real = Tensor(np.full((1, 1, 1, 4), 1.0 - 1e-9))
        d_fake = Tensor(np.full((1, 1, 1, 4), 1e-9))
        d_loss, _ = adversarial_losses(d_real, d_fake)
        assert d_loss.item() < 1e-6  # floored by the 1e-7 clamp before the logs

    def test_out_of_range_rejected(self):
        bad = Tensor(np.array([1.5]))
        with pytest.raises(ValueError):
            adversarial_losses(bad, Tensor(np.array([0.5])))


class TestPerceptual:
    def test_identical_is_zero(self):
        fx = frozen_random_extractor(in_channels=3)
        x = Tensor(np.random.default_rng(4).standard_normal((1, 3, 8, 8)))
        assert perceptual_loss(x, x, fx).item() == 0.0

    def test_identity_extractor_reduces_to_reconstruction(self):
        rng = np.random.default_rng(5)
        out = Tensor(rng.standard_normal((1, 2, 4, 4)))
        gt = Tensor(rng.standard_normal((1, 2, 4, 4)))
        assert perceptual_loss(out, gt, identity_extractor()).item() == pytest.approx(
            reconstruction_loss(out, gt).item(), rel=1e-15
        )

    def test_matches_reference_evaluation(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((2, 3, 3, 3)) * 0.2
        b = rng.standard_normal(2) * 0.1
        p = ConvParams(2, 3, 2, 1)
        fx = FeatureExtractor(
            [("conv", lambda t: conv2d(t, Tensor(w), Tensor(b), p))]
        )
        out = rng.standard_normal((1, 3, 6, 6))
        gt = rng.standard_normal((1, 3, 6, 6))
        got = perceptual_loss(Tensor(out), Tensor(gt), fx).item()

        def ref_conv(x):
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
            res = np.zeros((1, 2, 3, 3))
            for o in range(2):
                for i in range(3):
                    for j in range(3):
                        patch = xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                        res[0, o, i, j] = (patch * w[o]).sum() + b[o]
            return res

        want = np.linalg.norm((ref_conv(out) - ref_conv(gt)).reshape(-1))
        assert got == pytest.approx(want, abs=1e-10)

    def test_missing_stage_rejected(self):
        with pytest.raises(ValueError):
            FeatureExtractor([("a", lambda t: t)], selected=["a", "b"])


class TestStyle:
    def test_identical_is_zero(self):
        fx = frozen_random_extractor(in_channels=3)
        x = Tensor(np.random.default_rng(7).standard_normal((1, 3, 8, 8)))
        assert style_loss(x, x, fx).item() == 0.0

    def test_zero_map_gram(self):
        fx = identity_extractor()
        z = Tensor(np.zeros((1, 2, 2, 2)))
        assert style_loss(z, z, fx).item() == 0.0

    def test_hand_gram_value(self):
        fx = identity_extractor()
        out = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 2, 1, 2))
        gt = Tensor(np.zeros((1, 2, 1, 2)))
        assert style_loss(out, gt, fx).item() == pytest.approx(math.sqrt(2) / 4, abs=1e-12)


class TestWeightedTotal:
    def zero_parts(self, names):
        return {n: Tensor(np.asarray(0.0)) for n in names}

    def unit_parts(self, names):
        return {n: Tensor(np.asarray(1.0)) for n in names}

    def test_all_zero(self):
        parts = self.zero_parts(("multi_level", "reconstruction", "adversarial"))
        assert weighted_total(parts, LossWeights(), "lbp_stage").item() == 0.0

    def test_structure_stage_default_total(self):
        parts = self.unit_parts(("multi_level", "reconstruction", "adversarial"))
        assert weighted_total(parts, LossWeights(), "lbp_stage").item() == 10.21

    def test_inpaint_stage_default_total(self):
        parts = self.unit_parts(
            ("multi_level", "reconstruction", "adversarial", "perceptual", "style")
        )
        assert weighted_total(parts, LossWeights(), "inpaint_stage").item() == 21.21

    def test_missing_part_rejected(self):
        parts = self.unit_parts(("multi_level", "reconstruction"))
        with pytest.raises(ValueError):
            weighted_total(parts, LossWeights(), "lbp_stage")

    def test_linearity(self):
        rng = np.random.default_rng(8)
        names = ("multi_level", "reconstruction", "adversarial")
        a = {n: Tensor(np.asarray(rng.standard_normal())) for n in names}
        b = {n: Tensor(np.asarray(rng.standard_normal())) for n in names}
        w = LossWeights()
        combined = weighted_total(
            {n: a[n] + b[n] for n in names}, w, "lbp_stage"
        ).item()
        assert combined == pytest.approx(
            weighted_total(a, w, "lbp_stage").item()
            + weighted_total(b, w, "lbp_stage").item(),
            rel=1e-12,
        )

    def test_zero_multi_level_weight_removes_term(self):
        names = ("multi_level", "reconstruction", "adversarial")
        parts = {n: Tensor(np.asarray(1.0)) for n in names}
        total = weighted_total(parts, LossWeights(multi_level=0.0), "lbp_stage").item()
        assert total == pytest.approx(10.2, abs=1e-15)


class TestLossGradients:
    def test_reconstruction(self):
        rng = np.random.default_rng(9)
        out = Tensor(rng.standard_normal((1, 2, 3, 3)))
        gt = Tensor(rng.standard_normal((1, 2, 3, 3)))
        err = grad_check(lambda ts: reconstruction_loss(ts[0], gt), [out])
        assert err < 1e-4

    def test_multi_level(self):
        rng = np.random.default_rng(10)
        o1 = Tensor(rng.standard_normal((1, 2, 2, 2)))
        g1 = Tensor(rng.standard_normal((1, 2, 2, 2)))
        err = grad_check(lambda ts: multi_level_loss([ts[0]], [g1]), [o1])
        assert err < 1e-4

    def test_adversarial(self):
        rng = np.random.default_rng(11)
        d_real = Tensor(rng.uniform(0.2, 0.8, (1, 1, 2, 2)))
        d_fake = Tensor(rng.uniform(0.2, 0.8, (1, 1, 2, 2)))

        def d_fn(ts):
            return adversarial_losses(ts[0], ts[1])[0]

        def g_fn(ts):
            return adversarial_losses(d_real, ts[0])[1]

        assert grad_check(d_fn, [d_real, d_fake]) < 1e-4
        assert grad_check(g_fn, [d_fake]) < 1e-4

    def test_perceptual_and_style(self):
        rng = np.random.default_rng(12)
        fx = frozen_random_extractor(in_channels=2, channels=(4, 8))
        out = Tensor(rng.standard_normal((1, 2, 8, 8)))
        gt = Tensor(rng.standard_normal((1, 2, 8, 8)))
        assert grad_check(lambda ts: perceptual_loss(ts[0], gt, fx), [out]) < 1e-4
        assert grad_check(lambda ts: style_loss(ts[0], gt, fx), [out]) < 1e-4
