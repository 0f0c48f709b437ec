"""
Tests for the offset-log transforms and guidance maps.
"""

import math
import unittest

import numpy as np
import torch

from src.core.errors import ImageRangeError, ShapeMismatchError
from src.imaging.transforms import (
    LN2,
    guidance_max,
    guidance_mean,
    illumination_prior,
    log_forward,
    log_inverse,
    to_float_image,
    validate_pixels,
)


class TestLogTransforms(unittest.TestCase):
    def setUp(self):
        self.gen = torch.Generator().manual_seed(7)

    def test_zero_image_maps_to_zero(self):
        s = log_forward(torch.zeros(3, 4, 5))
        self.assertTrue(torch.equal(s, torch.zeros(3, 4, 5)))

    def test_ones_image_maps_to_ln2(self):
        s = log_forward(torch.ones(3, 2, 2))
        self.assertTrue(torch.allclose(s, torch.full((3, 2, 2), LN2), atol=1e-7))
        self.assertAlmostEqual(float(s[0, 0, 0]), 0.693147, places=6)

    def test_round_trip_over_many_images(self):
        imgs = torch.rand(1000, 3, 8, 8, generator=self.gen)
        back = log_inverse(log_forward(imgs))
        self.assertLessEqual(float((back - imgs).abs().max()), 1e-6)

    def test_range_and_finiteness(self):
        imgs = torch.rand(200, 3, 6, 6, generator=self.gen)
        imgs[0] = 0.0
        imgs[1] = 1.0
        s = log_forward(imgs)
        self.assertTrue(torch.isfinite(s).all())
        self.assertGreaterEqual(float(s.min()), 0.0)
        self.assertLessEqual(float(s.max()), LN2 + 1e-7)

    def test_strictly_increasing(self):
        x = torch.linspace(0, 1, 301).view(1, 1, -1).expand(3, 1, -1).contiguous()
        s = log_forward(x)
        self.assertTrue(bool((s[..., 1:] > s[..., :-1]).all()))

    def test_inverse_clamps_above_ln2(self):
        s = torch.zeros(3, 2, 2)
        s[1, 0, 1] = 0.75
        img = log_inverse(s)
        self.assertEqual(float(img[1, 0, 1]), 1.0)
        self.assertTrue(torch.equal(log_inverse(torch.full((3, 2, 2), LN2)), torch.ones(3, 2, 2)))

    def test_rejects_non_finite(self):
        img = torch.zeros(3, 2, 2)
        img[0, 0, 0] = float("nan")
        with self.assertRaises(ImageRangeError):
            log_forward(img)
        with self.assertRaises(ImageRangeError):
            log_inverse(torch.full((3, 1, 1), float("inf")))

    def test_out_of_range_tolerance(self):
        img = torch.zeros(3, 2, 2)
        img[0, 0, 0] = 1.0 + 5e-7
        img[1, 0, 0] = -5e-7
        clamped = validate_pixels(img)
        self.assertEqual(float(clamped.max()), 1.0)
        self.assertEqual(float(clamped.min()), 0.0)
        img[2, 1, 1] = 1.01
        with self.assertRaises(ImageRangeError):
            log_forward(img)

    def test_layout_checked(self):
        with self.assertRaises(ShapeMismatchError):
            log_forward(torch.zeros(4, 2, 2))

    def test_uint8_is_scaled(self):
        arr = np.full((3, 2, 2), 255, dtype=np.uint8)
        self.assertTrue(torch.equal(to_float_image(arr), torch.ones(3, 2, 2)))


class TestGuidance(unittest.TestCase):
    def test_prior_is_channel_max(self):
        s = torch.tensor([math.log(1.1), math.log(1.5), math.log(1.3)]).view(3, 1, 1)
        p = illumination_prior(s)
        self.assertEqual(p.kind, "prior_p")
        self.assertAlmostEqual(float(p.data), 0.405465, places=6)

    def test_equal_channels(self):
        s = torch.full((3, 2, 2), 0.3)
        self.assertTrue(torch.equal(illumination_prior(s).data, s[:1]))
        self.assertTrue(torch.allclose(guidance_mean(s).data, s[:1]))

    def test_mean_of_known_pixel(self):
        s = torch.tensor([0.0, 0.0, 0.6]).view(3, 1, 1)
        self.assertAlmostEqual(float(guidance_mean(s).data), 0.2, places=6)

    def test_loop_oracles(self):
        s = torch.rand(3, 3, 3, generator=torch.Generator().manual_seed(3))
        p = illumination_prior(s).data
        m = guidance_mean(s).data
        g = guidance_max(s).data
        for i in range(3):
            for j in range(3):
                values = [float(s[c, i, j]) for c in range(3)]
                self.assertEqual(float(p[0, i, j]), max(values))
                self.assertEqual(float(g[0, i, j]), max(values))
                self.assertAlmostEqual(float(m[0, i, j]), sum(values) / 3, places=6)
                for c in range(3):
                    self.assertGreaterEqual(float(p[0, i, j]), values[c])

    def test_max_dominates_mean(self):
        s = torch.rand(16, 3, 5, 5, generator=torch.Generator().manual_seed(4))
        self.assertTrue(bool((guidance_max(s).data >= guidance_mean(s).data).all()))
        self.assertEqual(guidance_max(s).kind, "max")
        self.assertEqual(guidance_max(s).data.shape, (16, 1, 5, 5))


if __name__ == "__main__":
    unittest.main()
