"""
Tests for the decomposer network, strategies and the Jacobian diagnostic.
"""

import tempfile
import unittest
from pathlib import Path

import torch
import torch.nn.functional as F

from src.core.checkpoint import state_checksum
from src.core.config import TrainConfig
from src.core.errors import ArtifactError, ConfigError, NumericalError, ShapeMismatchError, StrategyMismatchError
from src.core.init import count_parameters, initialize_weights, make_generator
from src.decomposer.jacobian import jacobian_diagnostic
from src.decomposer.network import Decomposer
from src.decomposer.strategy import DecompositionStrategy, LatentComponents

S = DecompositionStrategy


def _model(strategy=S.FULL, channels=8, seed=0) -> Decomposer:
    model = Decomposer(strategy, channels=channels)
    return initialize_weights(model, make_generator(seed))


def _image(seed=0, size=12, batch=2):
    return torch.rand(batch, 3, size, size, generator=torch.Generator().manual_seed(seed))


class TestStrategy(unittest.TestCase):
    def test_traits(self):
        self.assertEqual((S.FULL.combine, S.FULL.space, S.FULL.log_transform), ("additive", "latent", True))
        self.assertEqual((S.V0_PIXEL_MULT.combine, S.V0_PIXEL_MULT.space, S.V0_PIXEL_MULT.log_transform), ("multiplicative", "pixel", False))
        self.assertEqual((S.V1_LATENT_MULT.combine, S.V1_LATENT_MULT.space, S.V1_LATENT_MULT.log_transform), ("multiplicative", "latent", False))
        self.assertEqual((S.V2_LATENT_ADD_NOLOG.combine, S.V2_LATENT_ADD_NOLOG.space, S.V2_LATENT_ADD_NOLOG.log_transform), ("additive", "latent", False))
        self.assertEqual((S.V3_RGB_ADD_LOG.combine, S.V3_RGB_ADD_LOG.space, S.V3_RGB_ADD_LOG.log_transform), ("additive", "pixel", True))

    def test_parse(self):
        self.assertIs(S.parse("v1"), S.V1_LATENT_MULT)
        self.assertIs(S.parse("full"), S.FULL)
        self.assertIs(S.parse("v3_rgb_add_log"), S.V3_RGB_ADD_LOG)
        with self.assertRaises(ConfigError):
            S.parse("v9")


class TestDecompose(unittest.TestCase):
    def test_full_shapes(self):
        model = _model()
        x, p = model.prepare(_image())
        c = model.decompose(x, p)
        self.assertEqual(c.R.shape, (2, 8, 12, 12))
        self.assertEqual(c.L.shape, (2, 8, 12, 12))
        self.assertIs(c.strategy, S.FULL)

    def test_v0_pixel_components(self):
        model = _model(S.V0_PIXEL_MULT)
        x, p = model.prepare(_image(1))
        c = model.decompose(x, p)
        self.assertEqual(c.R.shape, (2, 3, 12, 12))
        self.assertEqual(c.L.shape, (2, 1, 12, 12))
        for t in (c.R, c.L):
            self.assertGreaterEqual(float(t.min()), 0.0)
            self.assertLessEqual(float(t.max()), 1.0)

    def test_zero_heads_give_bias_maps(self):
        model = _model()
        with torch.no_grad():
            model.r_head.weight.zero_()
            model.l_head.weight.zero_()
            model.r_head.bias.copy_(torch.arange(8.0))
            model.l_head.bias.copy_(-torch.arange(8.0))
        x, p = model.prepare(_image(2))
        c = model.decompose(x, p)
        self.assertTrue(torch.equal(c.R, torch.arange(8.0).view(1, 8, 1, 1).expand_as(c.R)))
        self.assertTrue(torch.equal(c.L, (-torch.arange(8.0)).view(1, 8, 1, 1).expand_as(c.L)))

    def test_deterministic(self):
        img = _image(3)
        a = _model(seed=4)
        b = _model(seed=4)
        self.assertEqual(state_checksum(a), state_checksum(b))
        self.assertTrue(torch.equal(a(img), b(img)))

    def test_misaligned_prior(self):
        model = _model()
        x, p = model.prepare(_image())
        with self.assertRaises(ShapeMismatchError):
            model.decompose(x, p[..., :-1])

    def test_non_finite_names_layer(self):
        model = _model()
        with torch.no_grad():
            model.input_proj.weight[0, 0, 0, 0] = float("inf")
            model.input_proj.weight[0, 1, 0, 0] = float("-inf")
        x, p = model.prepare(_image())
        with self.assertRaises(NumericalError) as ctx:
            model.decompose(x, p)
        self.assertIn("input_proj", str(ctx.exception))

    def test_parameter_count_depends_on_config(self):
        self.assertEqual(count_parameters(_model(channels=8, seed=0)), count_parameters(_model(channels=8, seed=9)))
        self.assertLess(count_parameters(_model(channels=8)), count_parameters(_model(channels=16)))

    def test_from_config_uses_seed(self):
        cfg = TrainConfig.desk(seed=3)
        a = Decomposer.from_config(cfg)
        b = Decomposer.from_config(cfg, seed=3)
        c = Decomposer.from_config(cfg, seed=4)
        self.assertEqual(state_checksum(a), state_checksum(b))
        self.assertNotEqual(state_checksum(a), state_checksum(c))
        self.assertEqual(a.channels, 8)


class TestReconstruct(unittest.TestCase):
    def test_full_with_zero_illumination(self):
        model = _model()
        gen = torch.Generator().manual_seed(5)
        R = torch.randn(1, 8, 6, 6, generator=gen)
        out = model.reconstruct(LatentComponents(R, torch.zeros_like(R), S.FULL))
        self.assertTrue(torch.allclose(out, model.out_proj(R), atol=0, rtol=0))

    def test_v0_unit_illumination(self):
        model = _model(S.V0_PIXEL_MULT)
        R = torch.rand(1, 3, 4, 4, generator=torch.Generator().manual_seed(6))
        out = model.reconstruct(LatentComponents(R, torch.ones(1, 1, 4, 4), S.V0_PIXEL_MULT))
        self.assertTrue(torch.equal(out, R))

    def test_v0_product_matches_loop(self):
        model = _model(S.V0_PIXEL_MULT)
        R = torch.tensor([[[0.1, 0.2], [0.3, 0.4]], [[0.5, 0.6], [0.7, 0.8]], [[0.9, 1.0], [0.0, 0.25]]]).unsqueeze(0)
        L = torch.tensor([[[0.5, 0.25], [1.0, 0.75]]]).unsqueeze(0)
        out = model.reconstruct(LatentComponents(R, L, S.V0_PIXEL_MULT))
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    self.assertAlmostEqual(float(out[0, c, i, j]), float(R[0, c, i, j]) * float(L[0, 0, i, j]), places=6)

    def test_latent_multiplicative_uses_projection(self):
        model = _model(S.V1_LATENT_MULT)
        gen = torch.Generator().manual_seed(8)
        R, L = torch.randn(1, 8, 5, 5, generator=gen), torch.randn(1, 8, 5, 5, generator=gen)
        out = model.reconstruct(LatentComponents(R, L, S.V1_LATENT_MULT))
        self.assertTrue(torch.allclose(out, F.conv2d(R * L, model.out_proj.weight, model.out_proj.bias, padding=1)))

    def test_rgb_additive_is_plain_sum(self):
        model = _model(S.V3_RGB_ADD_LOG)
        self.assertIsNone(model.out_proj)
        R, L = torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 4)
        self.assertTrue(torch.equal(model.reconstruct(LatentComponents(R, L, S.V3_RGB_ADD_LOG)), R + L))

    def test_strategy_mismatch(self):
        model = _model()
        R = torch.zeros(1, 8, 4, 4)
        with self.assertRaises(StrategyMismatchError):
            model.reconstruct(LatentComponents(R, R, S.V2_LATENT_ADD_NOLOG))
        with self.assertRaises(StrategyMismatchError):
            model.reconstruct(LatentComponents(R, torch.zeros(1, 4, 4, 4), S.FULL))

    def test_output_domain(self):
        img = _image(9)
        for strategy in S:
            model = _model(strategy)
            out = model.round_trip(img)
            self.assertEqual(out.shape, img.shape)
            self.assertGreaterEqual(float(out.min()), 0.0)
            self.assertLessEqual(float(out.max()), 1.0)


class TestCheckpoint(unittest.TestCase):
    def test_round_trip_is_bit_exact(self):
        model = _model(S.V1_LATENT_MULT, seed=12)
        with tempfile.TemporaryDirectory() as tmp:
            path = model.save(Path(tmp) / "decomposer.pt")
            loaded = Decomposer.load(path)
        self.assertIs(loaded.strategy, S.V1_LATENT_MULT)
        self.assertEqual(loaded.header(), model.header())
        self.assertEqual(state_checksum(loaded), state_checksum(model))

    def test_missing_checkpoint(self):
        with self.assertRaises(ArtifactError):
            Decomposer.load("/nonexistent/decomposer.pt")


class TestJacobianDiagnostic(unittest.TestCase):
    def setUp(self):
        gen = torch.Generator().manual_seed(21)
        self.R = torch.randn(1, 4, 8, 8, generator=gen)
        self.L = torch.randn(1, 4, 8, 8, generator=gen)

    def test_additive_partials_are_one(self):
        report = jacobian_diagnostic(S.FULL, LatentComponents(self.R, self.L, S.FULL))
        self.assertTrue(report.identity_exact)
        for name in ("R", "L"):
            self.assertTrue(torch.equal(report.autograd[name], torch.ones_like(report.autograd[name])))
        self.assertEqual(report.offdiag_max, 0.0)
        self.assertLess(report.max_discrepancy, 1e-3)

    def test_multiplicative_partials_are_partner(self):
        report = jacobian_diagnostic(S.V1_LATENT_MULT, LatentComponents(self.R, self.L, S.V1_LATENT_MULT))
        self.assertFalse(report.identity_exact)
        self.assertTrue(torch.allclose(report.autograd["R"], self.L.double()))
        self.assertTrue(torch.allclose(report.autograd["L"], self.R.double()))
        self.assertTrue(torch.allclose(report.numeric["R"], self.L.double(), atol=1e-3))
        self.assertLess(report.max_discrepancy, 1e-3)

    def test_single_channel_illumination_is_expanded(self):
        R = torch.rand(1, 3, 4, 4)
        L = torch.rand(1, 1, 4, 4)
        report = jacobian_diagnostic("v0", LatentComponents(R, L, S.V0_PIXEL_MULT))
        self.assertEqual(report.analytic["R"].shape, R.shape)
        self.assertTrue(torch.allclose(report.analytic["R"], L.double().expand_as(R)))
        self.assertLess(report.max_discrepancy, 1e-3)

    def test_size_limit(self):
        big = torch.zeros(1, 8, 8, 8)
        with self.assertRaises(ValueError):
            jacobian_diagnostic(S.FULL, LatentComponents(big, big, S.FULL))


if __name__ == "__main__":
    unittest.main()
