# -*- coding: utf-8 -*-
import os
import unittest

import numpy as np

from cmolink.errors import CodingError, ConfigError
from cmolink.ldpc import LLR_CLIP, LdpcCode, get_code, read_alist, write_alist

from .utils import BaseTest


class TestConstruction(BaseTest):

    def test_dimensions(self):
        code = LdpcCode.ira(96, 0.5)
        self.assertEqual((code.n, code.k, code.m), (96, 48, 48))
        self.assertEqual(code.rate, 0.5)
        self.assertEqual(code.h.shape, (48, 96))

    def test_column_weight(self):
        code = LdpcCode.ira(120, 1 / 3, col_weight=3)
        weights = np.asarray(code.h[:, :code.k].sum(axis=0)).ravel()
        self.assertTrue(np.all(weights == 3))

    def test_non_integer_rate(self):
        with self.assertRaises(ConfigError):
            LdpcCode.ira(100, 1 / 3)

    def test_cached(self):
        self.assertIs(get_code(64, 0.5), get_code(64, 0.5))

    def test_rejects_non_staircase(self):
        h = np.zeros((2, 4), dtype=np.uint8)
        h[:, :2] = 1
        with self.assertRaises(ConfigError):
            LdpcCode(h)


class TestEncoding(BaseTest):

    def test_codewords(self):
        code = get_code(192, 0.5)
        info = self.rng.integers(0, 2, size=(10, code.k))
        cw = code.encode(info)
        self.assertEqual(cw.shape, (10, 192))
        self.assertTrue(np.all(code.is_codeword(cw)))
        self.assertTrue(np.array_equal(cw[:, :code.k], info))

    def test_wrong_length(self):
        with self.assertRaises(CodingError):
            get_code(64, 0.5).encode(np.zeros(31))
        with self.assertRaises(CodingError):
            get_code(64, 0.5).decode(np.zeros(63))


class TestDecoding(BaseTest):

    def test_noiseless(self):
        code = get_code(192, 0.5)
        info = self.rng.integers(0, 2, size=code.k)
        llr = 4.0 * (1 - 2.0 * code.encode(info))
        decoded, converged, iterations = code.decode(llr, return_iterations=True)
        self.assertTrue(converged)
        self.assertEqual(iterations, 1)
        self.assertTrue(np.array_equal(decoded, info))

    def test_corrects_errors(self):
        code = get_code(384, 0.5)
        info = self.rng.integers(0, 2, size=(20, code.k))
        signal = 1 - 2.0 * code.encode(info)
        sigma = 0.6  # about 4.4 dB Eb/N0
        y = signal + sigma * self.rng.standard_normal(signal.shape)
        llr = 2 * y / sigma ** 2
        decoded, converged = code.decode(llr, max_iter=50)
        self.assertGreater(np.mean(np.all(decoded == info, axis=1)), 0.9)
        self.assertTrue(np.all(np.all(decoded == info, axis=1)[converged]))

    def test_erasures_do_not_converge(self):
        code = get_code(64, 0.5)
        decoded, converged = code.decode(np.zeros(64), max_iter=5)
        self.assertFalse(converged)
        self.assertEqual(decoded.shape, (32,))

    def test_clipping(self):
        code = get_code(64, 0.5)
        llr = np.full(64, 1e6) * (1 - 2.0 * code.encode(np.zeros(32)))
        decoded, converged = code.decode(llr)
        self.assertTrue(converged)
        self.assertEqual(LLR_CLIP, 30.0)


class TestAlist(BaseTest):

    def test_write_and_read(self):
        code = get_code(96, 0.5)
        path = os.path.join(self.tempdir(), "code.alist")
        write_alist(code, path)
        h = read_alist(path)
        self.assertEqual((h != code.h).nnz, 0)
        self.assertEqual(LdpcCode(h).k, code.k)

    def test_truncated(self):
        path = os.path.join(self.tempdir(), "bad.alist")
        with open(path, "w") as fp:
            fp.write("96 48\n3 6\n")
        with self.assertRaises(ConfigError):
            read_alist(path)


if __name__ == '__main__':
    unittest.main()
