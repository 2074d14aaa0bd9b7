# -*- coding: utf-8 -*-
import os
import unittest

import numpy as np

import cmolink
from cmolink import utils
from cmolink.channel import Numerology
from cmolink.errors import ConfigError, MissingArtifactError, NumericalError, SingularMatrixError
from cmolink.link import LinkConfig

from .utils import BaseTest


class TestStreams(BaseTest):

    def test_reproducible(self):
        a = utils.derive_rng(5, utils.STREAM_CHANNEL, 3).standard_normal(4)
        b = utils.derive_rng(5, utils.STREAM_CHANNEL, 3).standard_normal(4)
        c = utils.derive_rng(5, utils.STREAM_NOISE, 3).standard_normal(4)
        self.assertAllClose(a, b)
        self.assertFalse(np.allclose(a, c))

    def test_seed_sequence(self):
        seq = utils.derive_seed(5, utils.STREAM_CHANNEL, 3)
        self.assertAllClose(utils.derive_rng(seq).standard_normal(3),
                            utils.derive_rng((5, utils.STREAM_CHANNEL, 3)).standard_normal(3))
        self.assertFalse(np.allclose(utils.derive_rng(seq, 1).standard_normal(3),
                                     utils.derive_rng(seq).standard_normal(3)))

    def test_generator(self):
        rng = np.random.default_rng(0)
        self.assertIs(utils.derive_rng(rng), rng)
        with self.assertRaises(ConfigError):
            utils.derive_rng(rng, 1)
        with self.assertRaises(ConfigError):
            utils.derive_rng(None, 1)


class TestParsing(BaseTest):

    def test_grid(self):
        self.assertEqual(utils.parse_grid("-4:2:4"), [-4.0, -2.0, 0.0, 2.0, 4.0])
        self.assertEqual(len(utils.parse_grid("0:0.1:0.3")), 4)
        self.assertEqual(utils.parse_grid("1, 3,8"), [1.0, 3.0, 8.0])
        self.assertEqual(utils.parse_grid(" 7 "), [7.0])
        for bad in ("1:2", "4:1:0", "0:0:1", "a,b"):
            with self.assertRaises(ConfigError):
                utils.parse_grid(bad)

    def test_db(self):
        self.assertAlmostEqual(float(utils.db_to_linear(10.0)), 10.0)
        self.assertAlmostEqual(float(utils.linear_to_db(100.0)), 20.0)


class TestConfigMixin(BaseTest):

    def test_json(self):
        config = LinkConfig(name="x", qam_order=4, payload=8, n_layer=2, numerology=Numerology())
        path = os.path.join(self.tempdir(), "link.json")
        config.save(path)
        self.assertEqual(LinkConfig.load(path), config)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError) as ex:
            LinkConfig.from_dict({"name": "x", "colour": "red"})
        self.assertIn("colour", str(ex.exception))
        with self.assertRaises(ConfigError):
            LinkConfig.from_dict(["name"])

    def test_bad_file(self):
        path = os.path.join(self.tempdir(), "bad.json")
        with open(path, "w") as fp:
            fp.write("{")
        with self.assertRaises(ConfigError):
            LinkConfig.load(path)
        with self.assertRaises(ConfigError):
            LinkConfig.load(path + ".missing")

    def test_hash(self):
        a = utils.config_hash(LinkConfig())
        self.assertEqual(len(a), 16)
        self.assertEqual(a, utils.config_hash(LinkConfig()))
        self.assertNotEqual(a, utils.config_hash(LinkConfig(dl_snr_db=3.0)))
        self.assertEqual(utils.config_hash({"b": 1, "a": 2}), utils.config_hash({"a": 2, "b": 1}))


class TestErrors(BaseTest):

    def test_hierarchy(self):
        self.assertTrue(issubclass(cmolink.CmoError, ValueError))
        self.assertEqual(cmolink.ConfigError.exit_code, 1)
        self.assertEqual(SingularMatrixError.exit_code, 2)
        self.assertTrue(issubclass(SingularMatrixError, NumericalError))

    def test_missing_artifact(self):
        err = MissingArtifactError(["a/bundle.json", "a/modulator.json"])
        self.assertEqual(err.missing, ["a/bundle.json", "a/modulator.json"])
        self.assertIn("a/modulator.json", str(err))
        self.assertIsInstance(err, ConfigError)

    def test_context_manager(self):
        with self.assertCmoError("lo:step:hi", ConfigError):
            utils.parse_grid("1:2")


if __name__ == '__main__':
    unittest.main()
