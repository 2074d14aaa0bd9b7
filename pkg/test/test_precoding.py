# -*- coding: utf-8 -*-
import unittest

import numpy as np

from cmolink.autodiff import ComplexTensor
from cmolink.channel import Numerology, get_profile, sample_channel
from cmolink.csi import extract_csi
from cmolink.errors import ShapeError, ZeroVectorError
from cmolink.precoding import (Precoder, apply_precoding, apply_precoding_tensor, eigen_precoder,
                               normalize_power, normalize_power_tensor, pruned_layers)

from .utils import BaseTest, random_complex


class TestPrecoder(BaseTest):

    def test_vectors(self):
        m = random_complex(self.rng, 3, 4, 2)
        p = Precoder(m)
        v = p.as_vectors()
        self.assertEqual(v.shape, (3, 8))
        self.assertAllClose(v[1, 4:], m[1, :, 1])
        self.assertAllClose(Precoder.from_vectors(v, 2).matrices, m)

    def test_validation(self):
        with self.assertRaises(ShapeError):
            Precoder(np.ones((4, 2)))
        with self.assertRaises(ShapeError):
            Precoder(np.full((1, 2, 1), np.nan))
        with self.assertRaises(ShapeError):
            Precoder.from_vectors(np.ones((3, 7)), 2)

    def test_eigen_precoder(self):
        num = Numerology.desk()
        csi = extract_csi(sample_channel(get_profile("CDL-C"), num, 1), 2)
        p = eigen_precoder(csi)
        self.assertEqual(p.matrices.shape, (3, 8, 2))
        self.assertAllClose(p.as_vectors(), csi.w)


class TestApply(BaseTest):

    def test_per_subband(self):
        num = Numerology.desk()
        p = Precoder(random_complex(self.rng, 3, 8, 2))
        s = random_complex(self.rng, 2, 24, 14)
        x = apply_precoding(p, s, num)
        self.assertEqual(x.shape, (8, 24, 14))
        # Subcarrier 17 lies in the third subband of eight subcarriers each.
        self.assertAllClose(x[:, 17, 4], p[2] @ s[:, 17, 4])

    def test_mismatch(self):
        num = Numerology.desk()
        with self.assertRaises(ShapeError):
            apply_precoding(Precoder(np.ones((2, 8, 1))), np.ones((1, 24, 14)), num)
        with self.assertRaises(ShapeError):
            apply_precoding(Precoder(np.ones((3, 8, 1))), np.ones((2, 24, 14)), num)

    def test_normalize_power(self):
        x = normalize_power(3.0 * random_complex(self.rng, 8, 24, 14))
        self.assertAlmostEqual(float(np.sum(np.abs(x) ** 2) / (24 * 14)), 1.0)
        with self.assertRaises(ZeroVectorError):
            normalize_power(np.zeros((8, 24, 14)))
        with self.assertRaises(ShapeError):
            normalize_power(np.ones((8, 24)))

    def test_pruned_layers(self):
        m = random_complex(self.rng, 3, 4, 3)
        m[:, :, 1] = 0
        m[0, :, 2] = 0
        self.assertEqual(pruned_layers(Precoder(m)), [1])


class TestTensorVersions(BaseTest):

    def test_match_numpy(self):
        p = random_complex(self.rng, 2, 3, 4, 2)
        s = random_complex(self.rng, 2, 5, 2)
        subband = np.array([0, 0, 1, 2, 2])
        x = apply_precoding_tensor(ComplexTensor.constant(p), ComplexTensor.constant(s), subband)
        self.assertEqual(x.shape, (2, 5, 4))
        self.assertAllClose(x.numpy()[1, 3], p[1, 2] @ s[1, 3])

        y = normalize_power_tensor(x).numpy()
        self.assertAllClose(np.mean(np.sum(np.abs(y) ** 2, axis=-1), axis=-1), np.ones(2))

    def test_zero(self):
        with self.assertRaises(ZeroVectorError):
            normalize_power_tensor(ComplexTensor.constant(np.zeros((1, 3, 2), dtype=complex)))


if __name__ == '__main__':
    unittest.main()
