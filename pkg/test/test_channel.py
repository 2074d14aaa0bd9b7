# -*- coding: utf-8 -*-
import os
import unittest

import numpy as np

from cmolink import channel
from cmolink.channel import (ChannelRealization, MixedProfile, Numerology, TdlProfile, get_profile,
                             sample_channel, snr_to_noise_variance, transmit)
from cmolink.errors import ConfigError, ShapeError

from .utils import BaseTest, random_complex


class TestNumerology(BaseTest):

    def test_defaults(self):
        num = Numerology()
        self.assertEqual((num.n_subcarriers, num.n_symbols, num.n_tx, num.n_rx), (144, 14, 32, 4))
        self.assertEqual(num.n_re, 2016)
        self.assertEqual(num.subband_size, 48)
        self.assertEqual(Numerology.desk().n_re, 336)

    def test_subband_of(self):
        num = Numerology(n_subcarriers=6, n_subbands=3)
        self.assertEqual(num.subband_of().tolist(), [0, 0, 1, 1, 2, 2])

    def test_validation(self):
        with self.assertRaises(ConfigError):
            Numerology(n_subcarriers=10, n_subbands=3)
        with self.assertRaises(ConfigError):
            Numerology(n_tx=0)

    def test_uplink(self):
        num = Numerology.uplink(8)
        self.assertEqual((num.n_tx, num.n_rx, num.n_symbols, num.n_subcarriers), (1, 8, 1, 96))

    def test_json(self):
        path = os.path.join(self.tempdir(), "num.json")
        Numerology.desk().save(path)
        self.assertEqual(Numerology.load(path), Numerology.desk())


class TestProfiles(BaseTest):

    def test_builtin(self):
        for name in channel.PROFILES:
            profile = get_profile(name)
            self.assertAlmostEqual(sum(profile.powers), 1.0)
        with self.assertRaises(ConfigError):
            get_profile("CDL-Z")

    def test_delay_spread(self):
        profile = get_profile("CDL-C").with_delay_spread(100e-9)
        d, p = np.array(profile.delays), np.array(profile.powers)
        mean = np.sum(p * d)
        self.assertAlmostEqual(np.sqrt(np.sum(p * (d - mean) ** 2)), 100e-9, delta=1e-15)

    def test_invalid_profile(self):
        with self.assertRaises(ConfigError):
            TdlProfile("bad", delays=(0.0, 1e-7), powers=(0.5, 0.6))
        with self.assertRaises(ConfigError):
            TdlProfile("bad", delays=(0.0,), powers=(1.0,), rho_tx=1.0)

    def test_profile_file(self):
        path = os.path.join(self.tempdir(), "custom.json")
        TdlProfile("custom", delays=(0.0, 5e-8), powers=(0.7, 0.3)).save(path)
        self.assertEqual(get_profile(path).powers, (0.7, 0.3))

    def test_mixed_profile(self):
        a, b = get_profile("flat"), get_profile("two-tap")
        mixed = MixedProfile((a, b), (0.0, 1.0))
        self.assertIs(mixed.choose(self.rng), b)
        with self.assertRaises(ConfigError):
            MixedProfile((a,), (1.0, 1.0))


class TestSampling(BaseTest):

    def test_deterministic(self):
        num = Numerology.desk()
        profile = get_profile("CDL-C")
        a = sample_channel(profile, num, 7)
        b = sample_channel(profile, num, 7)
        c = sample_channel(profile, num, 8)
        self.assertEqual(a.h.shape, (2, 8, 24, 14))
        self.assertAllClose(a.h, b.h)
        self.assertFalse(np.allclose(a.h, c.h))

    def test_unit_average_gain(self):
        num = Numerology(n_subcarriers=12, n_symbols=1, n_tx=4, n_rx=2, n_subbands=3)
        profile = get_profile("CDL-A")
        power = np.mean([np.mean(np.abs(sample_channel(profile, num, (3, i)).h) ** 2) for i in range(400)])
        self.assertAlmostEqual(power, 1.0, delta=0.1)

    def test_flat_profile_is_flat(self):
        h = sample_channel(get_profile("flat"), Numerology.desk(), 1).h
        self.assertAllClose(h, np.broadcast_to(h[:, :, :1, :1], h.shape))

    def test_block_fading_over_symbols(self):
        h = sample_channel(get_profile("CDL-C"), Numerology.desk(), 2).h
        self.assertAllClose(h, np.broadcast_to(h[..., :1], h.shape))

    def test_line_of_sight(self):
        num = Numerology.desk()
        profile = TdlProfile("los", (0.0,), (1.0,), k_factor_db=30.0)
        h = sample_channel(profile, num, 4).h[:, :, 0, 0]
        # A strong line-of-sight component makes the channel close to rank one.
        s = np.linalg.svd(h, compute_uv=False)
        self.assertLess(s[1] / s[0], 0.2)


class TestTransmit(BaseTest):

    def test_noiseless(self):
        num = Numerology.desk()
        ch = sample_channel(get_profile("CDL-C"), num, 1)
        x = random_complex(self.rng, num.n_tx, num.n_subcarriers, num.n_symbols)
        y = transmit(ch, x)
        self.assertAllClose(y[:, 3, 5], ch.h[:, :, 3, 5] @ x[:, 3, 5])

    def test_noise_variance(self):
        num = Numerology.desk()
        ch = ChannelRealization(np.zeros((2, 8, 24, 14), dtype=complex), 0.25, num)
        y = transmit(ch, np.zeros((8, 24, 14)), 3)
        self.assertAlmostEqual(float(np.mean(np.abs(y) ** 2)), 0.25, delta=0.04)

    def test_shapes(self):
        num = Numerology.desk()
        with self.assertRaises(ShapeError):
            ChannelRealization(np.zeros((2, 8, 24, 13)), 0.0, num)
        ch = sample_channel(get_profile("flat"), num, 1)
        with self.assertRaises(ShapeError):
            transmit(ch, np.zeros((4, 24, 14)))

    def test_snr(self):
        self.assertAlmostEqual(snr_to_noise_variance(10.0), 0.1)
        self.assertAlmostEqual(snr_to_noise_variance(0.0, 2.0), 2.0)
        with self.assertRaises(ConfigError):
            snr_to_noise_variance(0.0, 0.0)


if __name__ == '__main__':
    unittest.main()
