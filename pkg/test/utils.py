from contextlib import contextmanager
import os
import shutil
import tempfile
import unittest

import numpy as np

import cmolink
from cmolink.channel import Numerology
from cmolink.models import LinkModels, ModelConfig

#: Long-running Monte-Carlo checks only run with CMOLINK_SLOW=1
SLOW = os.environ.get("CMOLINK_SLOW") == "1"

slow = unittest.skipUnless(SLOW, "set CMOLINK_SLOW=1 to run")


def random_complex(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_hermitian(rng, n, rank=None):
    a = random_complex(rng, n, rank or n)
    return a @ a.conj().T


def numeric_gradient(f, x, eps=1e-6):
    """ Central differences of the scalar function ``f`` at every entry of ``x``. """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = f(x)
        x[i] = old - eps
        down = f(x)
        x[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def tiny_models(form="bits", bits_per_re=4, n_layer=2, numerology=None, **overrides):
    """ A very small model bundle on the desk numerology. """
    config = ModelConfig.desk(bits_per_re=bits_per_re, n_layer=n_layer, csi_form=form,
                              mod_width=16, mod_depth=2, demod_width=16, demod_blocks=1,
                              csi_dim=16, csi_heads=2, csi_blocks=1, **overrides)
    return LinkModels(config, numerology or Numerology.desk())


class BaseTest(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1234)
        self.to_remove = []

    def tearDown(self):
        for path in self.to_remove:
            shutil.rmtree(path, ignore_errors=True)

    def tempdir(self):
        path = tempfile.mkdtemp(prefix="cmolink-test-")
        self.to_remove.append(path)
        return path

    def assertAllClose(self, actual, expected, rtol=1e-9, atol=1e-12):
        np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)

    @contextmanager
    def assertCmoError(self, message: str = None, cls=cmolink.CmoError):
        with self.assertRaises(cls) as ex:
            yield
        if message:
            self.assertIn(message, str(ex.exception))
