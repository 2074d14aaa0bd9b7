# -*- coding: utf-8 -*-
import math
import unittest

import numpy as np

from cmolink.channel import Numerology, get_profile, sample_channel
from cmolink.csi import extract_csi
from cmolink.errors import ConfigError
from cmolink.link import LinkConfig, code_layout, effective_channel, run_trial, sinr_features
from cmolink.precoding import eigen_precoder

from .utils import BaseTest, tiny_models


class TestLinkConfig(BaseTest):

    def test_validation(self):
        with self.assertRaises(ConfigError):
            LinkConfig(qam_order=4, payload=2)
        with self.assertRaises(ConfigError):
            LinkConfig(modulation="learned", payload=4, n_layer=2, detector="zf", model_path="m")
        with self.assertRaises(ConfigError):
            LinkConfig(precoding="learned", csi="quantized")
        with self.assertRaises(ConfigError):
            LinkConfig(csi="learned-bits", precoding="learned")
        with self.assertRaises(ConfigError):
            LinkConfig(csi="ideal", uplink="cmo2c")
        with self.assertRaises(ConfigError):
            LinkConfig(csi="learned-symbols", precoding="learned", uplink="cmo2a", model_path="m")
        with self.assertRaises(ConfigError):
            LinkConfig(n_layer=3, payload=6)
        LinkConfig(csi="ideal", uplink="ideal")

    def test_round_trip(self):
        config = LinkConfig(name="qpsk", csi="ideal", uplink="ideal", numerology=Numerology())
        self.assertEqual(LinkConfig.from_dict(config.to_dict()), config)

    def test_code_layout(self):
        code, count = code_layout(LinkConfig())
        self.assertEqual((code.n, code.k, count), (672, 336, 1))
        code, count = code_layout(LinkConfig(qam_order=4, n_layer=2, payload=8, numerology=Numerology()))
        self.assertEqual((code.n, count), (2016, 8))


class TestRunTrial(BaseTest):

    def test_noiseless_qpsk(self):
        config = LinkConfig(csi="ideal", uplink="ideal")
        result = run_trial(config, 1, 2, dl_snr_db=math.inf)
        self.assertFalse(result.block_error)
        self.assertEqual(result.info_bits, 336)
        self.assertAlmostEqual(result.goodput, 336 / 336)
        self.assertAlmostEqual(result.sgcs, 1.0)
        self.assertEqual(result.pruned_layers, [])

    def test_deterministic(self):
        config = LinkConfig(qam_order=4, n_layer=2, payload=8, dl_snr_db=8.0)
        a = run_trial(config, 5, 6)
        b = run_trial(config, 5, 6)
        self.assertEqual(a.block_error, b.block_error)
        self.assertAllClose(a.sinr_db, b.sinr_db)
        self.assertEqual(a.sgcs, b.sgcs)

    def test_detectors_at_high_snr(self):
        for detector in ("zf", "kbest"):
            config = LinkConfig(qam_order=2, n_layer=2, payload=4, csi="ideal", uplink="ideal",
                                detector=detector, kbest_k=8)
            self.assertFalse(run_trial(config, 3, 4, dl_snr_db=40.0).block_error, detector)

    def test_noisy_uplink(self):
        config = LinkConfig(csi="quantized", uplink="cmo2c", ul_snr_db=20.0)
        result = run_trial(config, 1, 2, dl_snr_db=math.inf)
        self.assertGreater(result.sgcs, 0.9)

    def test_low_snr_fails(self):
        config = LinkConfig(qam_order=8, n_layer=2, payload=16, csi="ideal", uplink="ideal")
        result = run_trial(config, 1, 2, dl_snr_db=-5.0)
        self.assertTrue(result.block_error)
        self.assertEqual(result.goodput, 0.0)


class TestLearnedLink(BaseTest):

    def config(self, **fields):
        base = dict(name="learned", modulation="learned", payload=4, n_layer=2, precoding="learned",
                    csi="learned-bits", uplink="cmo2c", model_path=self.path)
        base.update(fields)
        return LinkConfig(**base)

    def setUp(self):
        super().setUp()
        self.path = self.tempdir()
        self.models = tiny_models(form="bits")
        self.models.save(self.path)

    def test_trial(self):
        result = run_trial(self.config(), 1, 2, dl_snr_db=10.0, ul_snr_db=10.0, models=self.models)
        self.assertEqual(result.info_bits, 672)
        self.assertTrue(0.0 <= result.sgcs <= 1.0)
        self.assertEqual(result.sinr_db.shape, (2,))

    def test_loads_from_path(self):
        config = self.config()
        models = config.load_models()
        self.assertEqual(models.config, self.models.config)
        result = run_trial(config, 1, 2, dl_snr_db=10.0)
        self.assertEqual(result.info_bits, 672)

    def test_mismatched_models(self):
        with self.assertRaises(ConfigError):
            self.config(payload=2).load_models()
        with self.assertRaises(ConfigError):
            self.config(csi="learned-symbols", uplink="symbols").load_models()


class TestSinrFeatures(BaseTest):

    def test_shape_and_order(self):
        config = LinkConfig(qam_order=2, n_layer=2, payload=4, csi="ideal", uplink="ideal")
        features = sinr_features(config, 7, dl_snr_db=10.0)
        self.assertEqual(features.shape, (2,))
        self.assertGreaterEqual(features[0], features[1])
        self.assertEqual(sinr_features(config, 7, dl_snr_db=10.0, n_layer=1).shape, (1,))
        self.assertGreater(sinr_features(config, 7, dl_snr_db=20.0)[0], features[0])

    def test_effective_channel(self):
        num = Numerology.desk()
        ch = sample_channel(get_profile("CDL-C"), num, 1)
        p = eigen_precoder(extract_csi(ch, 2))
        heq = effective_channel(ch, p, 0.5)
        self.assertEqual(heq.shape, (24, 14, 2, 2))
        self.assertAllClose(heq[9, 3], 0.5 * ch.h[:, :, 9, 3] @ p[1])


if __name__ == '__main__':
    unittest.main()
