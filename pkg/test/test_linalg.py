# -*- coding: utf-8 -*-
import unittest

import numpy as np

from cmolink.errors import ConvergenceError, ShapeError, SingularMatrixError
from cmolink.linalg import fix_phase, hermitian_eig, psd_sqrt, solve_hermitian_plus_diag

from .utils import BaseTest, random_complex, random_hermitian


class TestHermitianEig(BaseTest):

    def test_reconstruction(self):
        r = random_hermitian(self.rng, 6)
        values, vectors = hermitian_eig(r)
        self.assertTrue(np.all(np.diff(values) <= 0))
        self.assertAllClose(vectors @ np.diag(values) @ vectors.conj().T, r, rtol=1e-9, atol=1e-9)
        self.assertAllClose(vectors.conj().T @ vectors, np.eye(6), atol=1e-10)

    def test_phase_convention(self):
        _, vectors = hermitian_eig(random_hermitian(self.rng, 5))
        first = vectors[0]
        self.assertAllClose(first.imag, np.zeros(5), atol=1e-15)
        self.assertTrue(np.all(first.real >= 0))

    def test_stack(self):
        r = np.stack([random_hermitian(self.rng, 4) for _ in range(3)])
        values, vectors = hermitian_eig(r)
        self.assertEqual(values.shape, (3, 4))
        self.assertEqual(vectors.shape, (3, 4, 4))
        self.assertAllClose(values[1], hermitian_eig(r[1]).eigenvalues)

    def test_rank_one(self):
        v = random_complex(self.rng, 4)
        values, vectors = hermitian_eig(np.outer(v, v.conj()))
        self.assertAlmostEqual(values[0], float(np.vdot(v, v).real))
        self.assertAllClose(values[1:], np.zeros(3), atol=1e-12)
        self.assertAlmostEqual(abs(np.vdot(vectors[:, 0], v)) ** 2, float(np.vdot(v, v).real))

    def test_rejects_non_hermitian(self):
        with self.assertRaises(ShapeError):
            hermitian_eig(random_complex(self.rng, 3, 3))
        with self.assertRaises(ShapeError):
            hermitian_eig(np.ones((2, 3)))

    def test_rejects_nan(self):
        r = np.eye(3, dtype=complex)
        r[1, 1] = np.nan
        with self.assertRaises(ConvergenceError):
            hermitian_eig(r)

    def test_fix_phase_idempotent(self):
        v = random_complex(self.rng, 4, 2)
        once = fix_phase(v)
        self.assertAllClose(fix_phase(once), once)
        self.assertAllClose(np.abs(once), np.abs(v))


class TestSolve(BaseTest):

    def test_diagonal_load(self):
        a = random_hermitian(self.rng, 4, rank=2)
        b = random_complex(self.rng, 4, 2)
        x = solve_hermitian_plus_diag(a, 0.3, b)
        self.assertAllClose((a + 0.3 * np.eye(4)) @ x, b, atol=1e-10)

    def test_singular_without_load(self):
        a = random_hermitian(self.rng, 4, rank=2)
        with self.assertRaises(SingularMatrixError):
            solve_hermitian_plus_diag(a, 0.0, np.ones((4, 1)))

    def test_negative_load(self):
        with self.assertRaises(ShapeError):
            solve_hermitian_plus_diag(np.eye(2), -1.0, np.ones((2, 1)))

    def test_psd_sqrt(self):
        r = random_hermitian(self.rng, 5)
        root = psd_sqrt(r)
        self.assertAllClose(root @ root, r, rtol=1e-9, atol=1e-9)


if __name__ == '__main__':
    unittest.main()
