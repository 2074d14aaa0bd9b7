# -*- coding: utf-8 -*-
import os
import unittest

import numpy as np

from cmolink import csi
from cmolink.autodiff import ComplexTensor, Tensor
from cmolink.channel import Numerology, get_profile, sample_channel
from cmolink.csi import (UPLINK_SCHEMES, CsiCodec, UplinkScheme, dequantize_csi,
                         extract_csi, get_uplink_scheme, quantize_csi, quantized_feedback, sgcs,
                         sgcs_tensor, subband_covariance, uplink_feedback)
from cmolink.errors import BudgetError, ConfigError, ShapeError, ZeroVectorError
from cmolink.precoding import Precoder

from .utils import BaseTest, random_complex


def desk_channel(seed=1, noise_variance=0.0):
    return sample_channel(get_profile("CDL-C"), Numerology.desk(), seed, noise_variance)


class TestExtraction(BaseTest):

    def test_covariance(self):
        h = random_complex(self.rng, 6, 2, 3, 4)
        cov = subband_covariance(h, 3)
        manual = np.mean([h[f, t].conj().T @ h[f, t] for f in (2, 3) for t in (0, 1)], axis=0)
        self.assertAllClose(cov[1], manual)
        with self.assertRaises(ShapeError):
            subband_covariance(h, 4)

    def test_orthonormal_layers(self):
        m = extract_csi(desk_channel(), 2)
        self.assertEqual(m.w.shape, (3, 16))
        self.assertEqual((m.n_subbands, m.n_tx, m.n_layer), (3, 8, 2))
        v = m.vectors()
        for k in range(3):
            self.assertAllClose(v[k].conj() @ v[k].T, np.eye(2), atol=1e-10)
        self.assertTrue(np.all(m.eigenvalues[:, 0] >= m.eigenvalues[:, 1]))

    def test_layer_limit(self):
        with self.assertRaises(ConfigError):
            extract_csi(desk_channel(), 3)


class TestSgcs(BaseTest):

    def test_bounds_and_invariance(self):
        w = random_complex(self.rng, 3, 8)
        self.assertAlmostEqual(sgcs(w, w), 1.0)
        self.assertAlmostEqual(sgcs(w, (0.3 - 2j) * w), 1.0)
        p = random_complex(self.rng, 3, 8)
        value = sgcs(w, p)
        self.assertTrue(0.0 <= value <= 1.0)
        self.assertAlmostEqual(value, sgcs(p, w))

    def test_orthogonal(self):
        w = np.array([[1, 0], [0, 1]], dtype=complex)
        self.assertAlmostEqual(sgcs(w, w[::-1]), 0.0)

    def test_types(self):
        m = extract_csi(desk_channel(), 1)
        self.assertAlmostEqual(sgcs(m, Precoder.from_vectors(m.w, 1)), 1.0)

    def test_errors(self):
        with self.assertRaises(ZeroVectorError):
            sgcs(np.zeros((2, 3)), np.ones((2, 3)))
        with self.assertRaises(ShapeError):
            sgcs(np.ones((2, 3)), np.ones((3, 3)))

    def test_tensor_matches(self):
        w = random_complex(self.rng, 2, 3, 8)
        p = random_complex(self.rng, 2, 3, 8)
        value = sgcs_tensor(w, ComplexTensor.constant(p))
        self.assertAlmostEqual(float(value.data), np.mean([sgcs(w[0], p[0]), sgcs(w[1], p[1])]))

    def test_tensor_gradient_at_optimum(self):
        w = random_complex(self.rng, 1, 3, 4)
        re = Tensor(w.real, requires_grad=True)
        im = Tensor(w.imag, requires_grad=True)
        sgcs_tensor(w, ComplexTensor(re, im)).backward()
        self.assertAllClose(re.grad, np.zeros(w.shape), atol=1e-10)


class TestQuantized(BaseTest):

    def test_budget(self):
        m = extract_csi(desk_channel(), 1)
        bits = quantize_csi(m, 192)
        self.assertEqual(bits.shape, (192,))
        self.assertTrue(set(np.unique(bits)) <= {0, 1})
        with self.assertRaises(BudgetError):
            quantize_csi(m, 40)
        with self.assertRaises(BudgetError):
            dequantize_csi(bits[:100], 3, 8, 1, 192)

    def test_reconstruction(self):
        m = extract_csi(desk_channel(), 1)
        _, rebuilt = quantized_feedback(m, 192)
        self.assertGreater(sgcs(m, rebuilt), 0.9)
        self.assertAllClose(np.linalg.norm(rebuilt.vectors(), axis=-1), np.ones((3, 1)))

    def test_coarser_is_worse(self):
        m = extract_csi(desk_channel(3), 2)
        fine = sgcs(m, quantized_feedback(m, 384)[1])
        coarse = sgcs(m, quantized_feedback(m, 96)[1])
        self.assertGreater(fine, coarse)

    def test_all_zero_bits(self):
        m = dequantize_csi(np.zeros(192, dtype=np.uint8), 3, 8, 1)
        self.assertAllClose(np.abs(m.vectors()[:, 0, 0]), np.ones(3))


class TestCodec(BaseTest):

    def codec(self, form):
        return CsiCodec(3, 8, 2, form=form, dim=16, heads=2, blocks=1)

    def test_bits(self):
        codec = self.codec("bits")
        m = extract_csi(desk_channel(), 2)
        payload = codec.encode(m)
        self.assertEqual(payload.shape, (192,))
        self.assertEqual(payload.dtype, np.uint8)
        p = codec.decode(payload)
        self.assertEqual(p.matrices.shape, (3, 8, 2))

    def test_symbols(self):
        codec = self.codec("symbols")
        payload = codec.encode(extract_csi(desk_channel(), 2))
        self.assertEqual(payload.shape, (96,))
        self.assertAlmostEqual(float(np.mean(np.abs(payload) ** 2)), 1.0)
        self.assertEqual(codec.payload_size, 96)

    def test_tensor_path(self):
        codec = self.codec("bits")
        w = np.stack([extract_csi(desk_channel(i), 2).w for i in range(4)])
        out = codec.decode_tensor(codec.encode_tensor(w))
        self.assertEqual(out.shape, (4, 3, 16))

    def test_checks(self):
        codec = self.codec("bits")
        with self.assertRaises(ShapeError) as ex:
            codec.encode(np.ones((3, 8), dtype=complex))
        self.assertIn("csi_encoder", str(ex.exception))
        with self.assertRaises(ShapeError):
            codec.decode(np.zeros(10, dtype=np.uint8))
        with self.assertRaises(ConfigError):
            CsiCodec(3, 8, 2, form="analog")

    def test_from_graphs(self):
        codec = self.codec("symbols")
        copy = CsiCodec.from_graphs(codec.encoder, codec.decoder, 2)
        self.assertEqual((copy.form, copy.n_tx, copy.n_symbols), ("symbols", 8, 96))


class TestUplink(BaseTest):

    def ul_channel(self, n_subcarriers=96, noise_variance=1e-3):
        return sample_channel(get_profile("CDL-C"), Numerology.uplink(8, n_subcarriers), 5, noise_variance)

    def test_required_res(self):
        for name in ("cmo2a", "cmo2b", "cmo2c", "symbols"):
            self.assertEqual(UPLINK_SCHEMES[name].required_res(192 if name != "symbols" else 96), 96)
        self.assertEqual(get_uplink_scheme("ideal").required_res(192), 0)

    def test_schemes(self):
        with self.assertRaises(ConfigError):
            get_uplink_scheme("cmo2z")
        with self.assertRaises(ConfigError):
            UplinkScheme("x", "analog")
        with self.assertRaises(ConfigError):
            UplinkScheme("x", "bits", code_rate=1.5)

    def test_ideal(self):
        bits = self.rng.integers(0, 2, size=192).astype(np.uint8)
        self.assertTrue(np.array_equal(uplink_feedback(bits, self.ul_channel(), "ideal"), bits))

    def test_bits_at_high_snr(self):
        bits = self.rng.integers(0, 2, size=192).astype(np.uint8)
        received = uplink_feedback(bits, self.ul_channel(), "cmo2c", seed=3)
        self.assertTrue(np.array_equal(received, bits))

    def test_symbols_at_high_snr(self):
        symbols = (self.rng.standard_normal(96) + 1j * self.rng.standard_normal(96)) / np.sqrt(2)
        received = uplink_feedback(symbols, self.ul_channel(noise_variance=1e-4), "symbols", seed=3)
        self.assertLess(float(np.mean(np.abs(received - symbols) ** 2)), 1e-3)

    def test_budget(self):
        bits = np.zeros(192, dtype=np.uint8)
        with self.assertRaises(BudgetError):
            uplink_feedback(bits, self.ul_channel(n_subcarriers=48), "cmo2c")

    def test_dump(self):
        self.assertEqual(csi.payload_to_hex([1, 0, 0, 0, 0, 0, 0, 1]), "81")
        path = os.path.join(self.tempdir(), "payload.txt")
        csi.dump_payload(np.array([1, 0, 0, 0, 0, 0, 0, 1], dtype=np.uint8), path)
        with open(path) as fp:
            self.assertEqual(fp.read(), "8 81\n")


if __name__ == '__main__':
    unittest.main()
