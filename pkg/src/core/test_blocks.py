"""
Tests for the guided channel attention and the guidance fusion block.
"""

import math
import unittest

import torch
from loguru import logger

from src.core.blocks import GuidanceFusionBlock, GuidedChannelAttention
from src.core.errors import NumericalError, ShapeMismatchError
from src.core.init import initialize_weights, make_generator


def _attention(channels, fusion="cross", qk_norm=True, heads=1, seed=0):
    attn = GuidedChannelAttention(channels, heads=heads, fusion=fusion, qk_norm=qk_norm)
    initialize_weights(attn, make_generator(seed), std=0.5)
    return attn


def _conv1x1(weight, bias, x, c_out, i, j):
    """Scalar 1×1 convolution of pixel (i, j)."""
    return [float(bias[o]) + sum(float(weight[o, c, 0, 0]) * float(x[c, i, j]) for c in range(x.shape[0])) for o in range(c_out)]


def _conv3x3_single(weight, bias, g, c_out):
    """Scalar 3×3 zero-padded convolution of a single-channel map."""
    h, w = g.shape
    out = [[[0.0] * w for _ in range(h)] for _ in range(c_out)]
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = float(bias[o])
                for di in range(3):
                    for dj in range(3):
                        ii, jj = i + di - 1, j + dj - 1
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += float(weight[o, 0, di, dj]) * float(g[ii, jj])
                out[o][i][j] = acc
    return out


def _loop_attention(q, k, v, alpha, normalize):
    """softmax(q kᵀ / α) v over channel rows, all as nested lists."""
    c, n = len(q), len(q[0])
    if normalize:
        def unit(rows):
            return [[val / max(math.sqrt(sum(t * t for t in row)), 1e-12) for val in row] for row in rows]
        q, k = unit(q), unit(k)
    out = [[0.0] * n for _ in range(c)]
    rows = []
    for a in range(c):
        logits = [sum(q[a][p] * k[b][p] for p in range(n)) / alpha for b in range(c)]
        top = max(logits)
        exps = [math.exp(t - top) for t in logits]
        total = sum(exps)
        weights = [e / total for e in exps]
        rows.append(weights)
        for p in range(n):
            out[a][p] = sum(weights[b] * v[b][p] for b in range(c))
    return out, rows


class TestGuidedChannelAttention(unittest.TestCase):
    def test_single_channel_gives_twice_v(self):
        attn = _attention(1)
        x = torch.randn(1, 1, 4, 4, generator=torch.Generator().manual_seed(1))
        g = torch.rand(1, 1, 4, 4, generator=torch.Generator().manual_seed(2))
        y, (a_m, a_g) = attn(x, g, return_maps=True)
        self.assertTrue(torch.equal(a_m, torch.ones_like(a_m)))
        self.assertTrue(torch.equal(a_g, torch.ones_like(a_g)))
        self.assertTrue(torch.allclose(y, 2 * attn.to_v(x), atol=1e-6))

    def test_huge_temperature_gives_uniform_rows(self):
        attn = _attention(4)
        with torch.no_grad():
            attn.temperature.fill_(1e9)
            attn.guidance_temperature.fill_(1e9)
        x = torch.randn(2, 4, 5, 5, generator=torch.Generator().manual_seed(3))
        g = torch.rand(2, 1, 5, 5)
        _, (a_m, a_g) = attn(x, g, return_maps=True)
        self.assertTrue(torch.allclose(a_m, torch.full_like(a_m, 0.25), atol=1e-6))
        self.assertTrue(torch.allclose(a_g, torch.full_like(a_g, 0.25), atol=1e-6))

    def test_matches_scalar_loop(self):
        for qk_norm in (True, False):
            attn = _attention(2, qk_norm=qk_norm, seed=5)
            with torch.no_grad():
                attn.temperature.fill_(0.7)
                attn.guidance_temperature.fill_(1.3)
            gen = torch.Generator().manual_seed(6)
            x = torch.randn(1, 2, 4, 4, generator=gen)
            g = torch.rand(1, 1, 4, 4, generator=gen)
            y = attn(x, g)

            pixels = [(i, j) for i in range(4) for j in range(4)]
            def project(conv, src, c_out):
                cols = [_conv1x1(conv.weight, conv.bias, src, c_out, i, j) for i, j in pixels]
                return [[cols[p][o] for p in range(len(pixels))] for o in range(c_out)]

            q = project(attn.to_q, x[0], 2)
            k = project(attn.to_k, x[0], 2)
            v = project(attn.to_v, x[0], 2)
            gf = torch.tensor(_conv3x3_single(attn.guidance_proj.weight, attn.guidance_proj.bias, g[0, 0], 2))
            qg = project(attn.to_g, gf, 2)

            y_m, rows_m = _loop_attention(q, k, v, 0.7, qk_norm)
            y_g, rows_g = _loop_attention(qg, k, v, 1.3, qk_norm)
            for o in range(2):
                for p, (i, j) in enumerate(pixels):
                    self.assertAlmostEqual(float(y[0, o, i, j]), y_m[o][p] + y_g[o][p], delta=1e-5)
            for row in rows_m + rows_g:
                self.assertAlmostEqual(sum(row), 1.0, delta=1e-5)

    def test_rows_are_stochastic(self):
        attn = _attention(8, heads=2)
        x = torch.randn(3, 8, 6, 7, generator=torch.Generator().manual_seed(7))
        g = torch.rand(3, 1, 6, 7)
        _, maps = attn(x, g, return_maps=True)
        for a in maps:
            self.assertEqual(a.shape, (3, 2, 4, 4))
            self.assertGreaterEqual(float(a.min()), 0.0)
            self.assertTrue(torch.allclose(a.sum(-1), torch.ones(3, 2, 4), atol=1e-5))

    def test_temperatures_start_at_sqrt_head_dim(self):
        attn = GuidedChannelAttention(8, heads=2)
        self.assertTrue(torch.allclose(attn.temperature, torch.full((2, 1, 1), 2.0)))
        self.assertTrue(torch.allclose(attn.guidance_temperature, torch.full((2, 1, 1), 2.0)))

    def test_none_fusion_has_no_guidance_parameters(self):
        attn = GuidedChannelAttention(4, fusion="none")
        names = {name for name, _ in attn.named_parameters()}
        self.assertFalse(any("guidance" in n or "to_g" in n for n in names))
        y = attn(torch.randn(1, 4, 3, 3))
        self.assertEqual(y.shape, (1, 4, 3, 3))

    def test_multiplicative_fusions(self):
        x = torch.randn(2, 4, 5, 5)
        g = torch.rand(2, 1, 5, 5)
        for fusion in ("mul_v", "mul_in"):
            attn = _attention(4, fusion=fusion)
            self.assertEqual(attn(x, g).shape, x.shape)
            with self.assertRaises(ShapeMismatchError):
                attn(x, None)

    def test_misaligned_guidance(self):
        attn = _attention(4)
        with self.assertRaises(ShapeMismatchError):
            attn(torch.randn(1, 4, 4, 4), torch.rand(1, 1, 2, 2))

    def test_non_finite_logits(self):
        attn = _attention(4, qk_norm=False)
        with torch.no_grad():
            attn.to_q.weight.fill_(float("inf"))
        with self.assertRaises(NumericalError):
            attn(torch.randn(1, 4, 3, 3), torch.rand(1, 1, 3, 3))

    def test_non_positive_temperature_warns(self):
        attn = _attention(4)
        with torch.no_grad():
            attn.temperature.fill_(-1.0)
        messages = []
        sink = logger.add(messages.append, level="WARNING", format="{message}")
        try:
            attn(torch.randn(1, 4, 3, 3), torch.rand(1, 1, 3, 3))
            attn(torch.randn(1, 4, 3, 3), torch.rand(1, 1, 3, 3))
        finally:
            logger.remove(sink)
        self.assertEqual(len(messages), 1)
        self.assertIn("temperature", messages[0])


class TestGuidanceFusionBlock(unittest.TestCase):
    def test_shape_preserved(self):
        for channels, h, w in ((1, 1, 1), (2, 4, 4), (8, 7, 5), (16, 3, 9)):
            block = initialize_weights(GuidanceFusionBlock(channels), make_generator(0))
            x = torch.randn(2, channels, h, w)
            self.assertEqual(block(x, torch.rand(2, 1, h, w)).shape, x.shape)

    def test_zeroed_guidance_matches_self_attention_block(self):
        cross = initialize_weights(GuidanceFusionBlock(6, fusion="cross"), make_generator(3), std=0.2)
        plain = GuidanceFusionBlock(6, fusion="none")
        result = plain.load_state_dict(cross.state_dict(), strict=False)
        self.assertEqual(result.missing_keys, [])
        self.assertTrue(all("guidance" in k or "to_g" in k for k in result.unexpected_keys))

        x = torch.randn(2, 6, 5, 5, generator=torch.Generator().manual_seed(4))
        muted = cross.finish(x, cross.attn.self_attention(cross.norm1(x)))
        self.assertTrue(torch.equal(plain(x), muted))

    def test_rejects_unbatched_input(self):
        block = GuidanceFusionBlock(4)
        with self.assertRaises(ShapeMismatchError):
            block(torch.randn(4, 3, 3), torch.rand(1, 3, 3))


if __name__ == "__main__":
    unittest.main()
