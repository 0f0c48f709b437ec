"""
Tests for the decomposition and enhancement losses, including finite
difference gradient checks in float64.
"""

import math
import unittest
from unittest.mock import patch

import torch
import torch.nn.functional as F
from loguru import logger
from torch.autograd import gradcheck

from src.core.errors import ShapeMismatchError
from src.decomposer.strategy import DecompositionStrategy, LatentComponents
from src.losses import retinex
from src.losses.perceptual import RandomFeatureExtractor, build_extractor, enhance_loss, perceptual_distance
from src.losses.retinex import decom_loss, recon_loss, reflectance_consistency, smoothness_loss

V3 = DecompositionStrategy.V3_RGB_ADD_LOG
GRADCHECK = dict(eps=1e-4, atol=1e-5, rtol=1e-3)


def _sum_rule(parts: LatentComponents) -> torch.Tensor:
    return parts.R + parts.L


def _rand(*shape, seed=0, dtype=torch.float32):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


class TestReconLoss(unittest.TestCase):
    def test_exact_reconstruction(self):
        R, L = _rand(1, 3, 4, 4, seed=1), _rand(1, 3, 4, 4, seed=2)
        parts = LatentComponents(R, L, V3)
        self.assertEqual(float(recon_loss(parts, parts, R + L, R + L, _sum_rule)), 0.0)

    def test_constant_offset(self):
        R, L = _rand(1, 3, 4, 4, seed=1), _rand(1, 3, 4, 4, seed=2)
        parts = LatentComponents(R, L, V3)
        loss = recon_loss(parts, parts, R + L + 0.25, R + L, _sum_rule)
        self.assertAlmostEqual(float(loss), 0.25, places=6)

    def test_loop_oracle(self):
        gen = [_rand(1, 2, 3, 3, seed=s) for s in range(6)]
        pl, pn = LatentComponents(gen[0], gen[1], V3), LatentComponents(gen[2], gen[3], V3)
        s_l, s_n = gen[4], gen[5]
        expected = 0.0
        for parts, target in ((pl, s_l), (pn, s_n)):
            acc = 0.0
            for c in range(2):
                for i in range(3):
                    for j in range(3):
                        acc += abs(float(parts.R[0, c, i, j]) + float(parts.L[0, c, i, j]) - float(target[0, c, i, j]))
            expected += acc / 18
        self.assertAlmostEqual(float(recon_loss(pl, pn, s_l, s_n, _sum_rule)), expected, places=5)

    def test_shape_mismatch(self):
        parts = LatentComponents(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4), V3)
        with self.assertRaises(ShapeMismatchError):
            recon_loss(parts, parts, torch.zeros(1, 3, 4, 5), torch.zeros(1, 3, 4, 4), _sum_rule)

    def test_symmetric_in_labels(self):
        gen = [_rand(1, 2, 4, 4, seed=s) for s in range(6)]
        pl, pn = LatentComponents(gen[0], gen[1], V3), LatentComponents(gen[2], gen[3], V3)
        a = recon_loss(pl, pn, gen[4], gen[5], _sum_rule)
        b = recon_loss(pn, pl, gen[5], gen[4], _sum_rule)
        self.assertAlmostEqual(float(a), float(b), places=6)


class TestSmoothness(unittest.TestCase):
    def test_only_positive_alpha_warns(self):
        R, L = _rand(1, 3, 4, 4, seed=1), _rand(1, 3, 4, 4, seed=2)
        messages = []
        sink = logger.add(messages.append, level="WARNING", format="{message}")
        try:
            with patch.object(retinex, "_alpha_signs_logged", set()):
                smoothness_loss(R, L, -10.0)
                self.assertEqual(messages, [])
                smoothness_loss(R, L, 2.0)
        finally:
            logger.remove(sink)
        self.assertEqual(len(messages), 1)
        self.assertIn("alpha=2.0", messages[0])

    def test_constant_illumination(self):
        R = _rand(2, 4, 5, 5, seed=3)
        self.assertEqual(float(smoothness_loss(R, torch.full((2, 4, 5, 5), 0.7), -10.0)), 0.0)

    def test_horizontal_ramp(self):
        slope = 0.15
        L = (torch.arange(6.0) * slope).view(1, 1, 1, 6).expand(1, 2, 5, 6)
        R = torch.full((1, 2, 5, 6), 0.4)
        self.assertAlmostEqual(float(smoothness_loss(R, L, -10.0)), slope, places=6)
        self.assertAlmostEqual(float(smoothness_loss(R, -L, 3.0)), slope, places=6)

    def test_loop_oracle(self):
        alpha = -10.0
        R, L = _rand(1, 2, 4, 4, seed=4), _rand(1, 2, 4, 4, seed=5)
        r = [[sum(float(R[0, c, i, j]) for c in range(2)) / 2 for j in range(4)] for i in range(4)]
        horiz, vert = [], []
        for c in range(2):
            for i in range(4):
                for j in range(4):
                    if j + 1 < 4:
                        dl = float(L[0, c, i, j + 1]) - float(L[0, c, i, j])
                        horiz.append(abs(dl) * math.exp(alpha * abs(r[i][j + 1] - r[i][j])))
                    if i + 1 < 4:
                        dl = float(L[0, c, i + 1, j]) - float(L[0, c, i, j])
                        vert.append(abs(dl) * math.exp(alpha * abs(r[i + 1][j] - r[i][j])))
        expected = sum(horiz) / len(horiz) + sum(vert) / len(vert)
        self.assertAlmostEqual(float(smoothness_loss(R, L, alpha)), expected, places=5)

    def test_single_pixel_is_zero(self):
        self.assertEqual(float(smoothness_loss(torch.ones(1, 3, 1, 1), torch.ones(1, 1, 1, 1), -10.0)), 0.0)


class TestReflectanceConsistency(unittest.TestCase):
    def test_identical(self):
        R = _rand(1, 3, 4, 4)
        self.assertEqual(float(reflectance_consistency(R, R)), 0.0)

    def test_offset(self):
        R = _rand(1, 3, 4, 4)
        self.assertAlmostEqual(float(reflectance_consistency(R, R + 0.3)), 0.3, places=6)

    def test_loop_oracle_and_symmetry(self):
        a, b = _rand(1, 2, 3, 3, seed=1), _rand(1, 2, 3, 3, seed=2)
        expected = sum(abs(float(x) - float(y)) for x, y in zip(a.flatten(), b.flatten())) / 18
        self.assertAlmostEqual(float(reflectance_consistency(a, b)), expected, places=6)
        self.assertEqual(float(reflectance_consistency(a, b)), float(reflectance_consistency(b, a)))

    def test_pixel_permutation(self):
        a, b = _rand(1, 2, 4, 4, seed=1), _rand(1, 2, 4, 4, seed=2)
        perm = torch.randperm(16, generator=torch.Generator().manual_seed(0))

        def shuffle(t):
            return t.flatten(2)[..., perm].view_as(t)

        self.assertAlmostEqual(float(reflectance_consistency(a, b)), float(reflectance_consistency(shuffle(a), shuffle(b))), places=6)


class TestDecomLoss(unittest.TestCase):
    def test_total_combines_terms(self):
        gen = [_rand(1, 2, 4, 4, seed=s) for s in range(6)]
        pl, pn = LatentComponents(gen[0], gen[1], V3), LatentComponents(gen[2], gen[3], V3)
        terms = decom_loss(pl, pn, gen[4], gen[5], _sum_rule, 0.1, 1.0, -10.0)
        expected = terms.recon + 0.1 * terms.is_smooth + 1.0 * terms.ir_consistency
        self.assertAlmostEqual(float(terms.total), float(expected), places=6)
        self.assertEqual(set(terms.as_floats()), {"recon", "smooth", "consistency"})
        zero = decom_loss(pl, pn, gen[4], gen[5], _sum_rule, 0.0, 0.0, -10.0)
        self.assertEqual(float(zero.total), float(zero.recon))


class TestEnhanceLoss(unittest.TestCase):
    def test_identical_inputs(self):
        s = _rand(1, 3, 8, 8) * 0.69
        terms = enhance_loss(s, s.clone(), 0.01, RandomFeatureExtractor())
        self.assertEqual(float(terms.total), 0.0)

    def test_zero_weight_is_plain_l1(self):
        a, b = _rand(1, 3, 8, 8, seed=1), _rand(1, 3, 8, 8, seed=2)
        terms = enhance_loss(a, b, 0.0, RandomFeatureExtractor())
        self.assertEqual(float(terms.total), float((a - b).abs().mean()))

    def test_two_pass_oracle(self):
        extractor = RandomFeatureExtractor()
        a, b = _rand(1, 3, 8, 8, seed=3), _rand(1, 3, 8, 8, seed=4)
        feats = []
        for x in (a, b):
            stages = []
            h = x
            for i, stage in enumerate(extractor.stages):
                conv = stage[0]
                h = F.relu(F.conv2d(h, conv.weight, conv.bias, stride=1 if i == 0 else 2, padding=1))
                stages.append(h)
            feats.append(stages)
        mse = [((fa - fb) ** 2).mean() for fa, fb in zip(*feats)]
        expected = float((a - b).abs().mean()) + 0.5 * float(sum(mse) / 3)
        terms = enhance_loss(a, b, 0.5, extractor)
        self.assertAlmostEqual(float(terms.total), expected, places=5)
        self.assertEqual([f.shape[1] for f in feats[0]], [16, 32, 64])

    def test_extractor_is_fixed(self):
        a, b = RandomFeatureExtractor(), RandomFeatureExtractor()
        for pa, pb in zip(a.parameters(), b.parameters()):
            self.assertTrue(torch.equal(pa, pb))
            self.assertFalse(pa.requires_grad)
        a.train()
        self.assertFalse(a.training)

    def test_missing_extractor(self):
        a, b = _rand(1, 3, 8, 8, seed=1), _rand(1, 3, 8, 8, seed=2)
        terms = enhance_loss(a, b, 0.01, build_extractor("none"))
        self.assertFalse(terms.perceptual_available)
        self.assertEqual(float(terms.perceptual), 0.0)
        self.assertEqual(float(terms.total), float(terms.l1))


class TestGradients(unittest.TestCase):
    """Analytic gradients against central differences on 4×4×2 fixtures."""

    def test_recon_loss(self):
        conv = torch.nn.Conv2d(2, 2, 3, padding=1).double()
        target_l, target_n = _rand(1, 2, 4, 4, seed=9, dtype=torch.float64), _rand(1, 2, 4, 4, seed=10, dtype=torch.float64)

        def fn(rl, ll, rn, ln):
            rec = lambda c: conv(c.R + c.L)
            return recon_loss(LatentComponents(rl, ll, V3), LatentComponents(rn, ln, V3), target_l, target_n, rec)

        inputs = tuple(_rand(1, 2, 4, 4, seed=s, dtype=torch.float64).requires_grad_() for s in range(4))
        self.assertTrue(gradcheck(fn, inputs, **GRADCHECK))

    def test_smoothness_loss(self):
        R = _rand(1, 2, 4, 4, seed=11, dtype=torch.float64).requires_grad_()
        L = _rand(1, 2, 4, 4, seed=12, dtype=torch.float64).requires_grad_()
        self.assertTrue(gradcheck(lambda r, l: smoothness_loss(r, l, -10.0), (R, L), **GRADCHECK))

    def test_reflectance_consistency(self):
        a = _rand(1, 2, 4, 4, seed=13, dtype=torch.float64).requires_grad_()
        b = _rand(1, 2, 4, 4, seed=14, dtype=torch.float64).requires_grad_()
        self.assertTrue(gradcheck(reflectance_consistency, (a, b), **GRADCHECK))

    def test_enhance_loss(self):
        extractor = RandomFeatureExtractor().double()
        target = _rand(1, 3, 4, 4, seed=15, dtype=torch.float64)
        s_en = _rand(1, 3, 4, 4, seed=16, dtype=torch.float64).requires_grad_()
        self.assertTrue(gradcheck(lambda s: enhance_loss(s, target, 0.01, None).total, (s_en,), **GRADCHECK))
        # ReLU kinks make the feature term sensitive to the step size
        self.assertTrue(gradcheck(lambda s: perceptual_distance(extractor, s, target), (s_en,), eps=1e-6, atol=1e-5, rtol=1e-3))


if __name__ == "__main__":
    unittest.main()
