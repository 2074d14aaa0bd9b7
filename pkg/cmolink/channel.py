# -*- coding: utf-8 -*-
"""
Frequency-domain fading channels on the OFDM resource grid.

Channels are tapped delay lines: every cluster of a profile contributes a
spatially correlated complex Gaussian gain matrix (Kronecker model) with a
delay-dependent phase ramp across subcarriers. The channel is constant over
the OFDM symbols of one slot (block fading) and independent across slots.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .linalg import psd_sqrt
from .utils import ConfigMixin, derive_rng, SeedLike

__all__ = ["Numerology", "TdlProfile", "MixedProfile", "ChannelRealization",
           "get_profile", "sample_channel", "transmit", "snr_to_noise_variance",
           "PROFILES"]


@dataclass(frozen=True)
class Numerology(ConfigMixin):
    """ OFDM grid and antenna configuration of one link direction.

        The downlink defaults follow the evaluation setup of 144 subcarriers
        in 3 subbands, 14 symbols and 32 x 4 antennas.
    """

    n_subcarriers: int = 144
    n_symbols: int = 14
    n_tx: int = 32
    n_rx: int = 4
    n_subbands: int = 3
    subcarrier_spacing_hz: float = 30e3

    def __post_init__(self):
        for name in ("n_subcarriers", "n_symbols", "n_tx", "n_rx", "n_subbands"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"Numerology.{name} must be a positive integer, got {value!r}")
        if self.n_subcarriers % self.n_subbands:
            raise ConfigError(f"{self.n_subcarriers} subcarriers cannot be split into "
                              f"{self.n_subbands} equal subbands")
        if self.subcarrier_spacing_hz <= 0:
            raise ConfigError("Subcarrier spacing must be positive")

    @classmethod
    def desk(cls) -> "Numerology":
        """ Small grid used for tests and desk-scale training. """
        return cls(n_subcarriers=24, n_symbols=14, n_tx=8, n_rx=2, n_subbands=3)

    @classmethod
    def uplink(cls, n_bs_antennas=32, n_subcarriers=96) -> "Numerology":
        """ Uplink feedback grid: one UE antenna, one OFDM symbol. """
        return cls(n_subcarriers=n_subcarriers, n_symbols=1, n_tx=1, n_rx=n_bs_antennas, n_subbands=1)

    @property
    def n_re(self) -> int:
        return self.n_subcarriers * self.n_symbols

    @property
    def subband_size(self) -> int:
        return self.n_subcarriers // self.n_subbands

    def subband_of(self) -> np.ndarray:
        """ Subband index of every subcarrier. """
        return np.arange(self.n_subcarriers) // self.subband_size


# Normalized cluster delays and powers (dB) of the clustered delay line
# profiles A and C. Delays scale with the configured delay spread.
_CDL_A = (
    (0.0000, -13.4), (0.3819, 0.0), (0.4025, -2.2), (0.5868, -4.0), (0.4610, -6.0),
    (0.5375, -8.2), (0.6708, -9.9), (0.5750, -10.5), (0.7618, -7.5), (1.5375, -15.9),
    (1.8978, -6.6), (2.2242, -16.7), (2.1718, -12.4), (2.4942, -15.2), (2.5119, -10.8),
    (3.0582, -11.3), (4.0810, -12.7), (4.4579, -16.2), (4.5695, -18.3), (4.7966, -18.9),
    (5.0066, -16.6), (5.3043, -19.9), (9.6586, -29.7))
_CDL_C = (
    (0.0000, -4.4), (0.2099, -1.2), (0.2219, -3.5), (0.2329, -5.2), (0.2176, -2.5),
    (0.6366, 0.0), (0.6448, -2.2), (0.6560, -3.9), (0.6584, -7.4), (0.7935, -7.1),
    (0.8213, -10.7), (0.9336, -11.1), (1.2285, -5.1), (1.3083, -6.8), (2.1704, -8.7),
    (2.7105, -13.2), (4.2589, -13.9), (4.6003, -13.9), (5.4902, -15.8), (5.6077, -17.1),
    (6.3065, -16.0), (6.6374, -15.7), (7.0427, -21.6), (8.6523, -22.8))


@dataclass(frozen=True)
class TdlProfile(ConfigMixin):
    """ Tapped delay line with Kronecker spatial correlation.

        :param name: Profile name.
        :param delays: Per-cluster delays in seconds.
        :param powers: Per-cluster linear powers, summing to one.
        :param rho_tx: Exponential correlation coefficient between adjacent
            transmit antennas (``R[i, j] = rho ** |i - j|``).
        :param rho_rx: Same for receive antennas.
        :param k_factor_db: Rician factor of a line-of-sight component added
            on the first cluster, or ``None`` for pure Rayleigh fading.
        :param los_aod_deg: Departure angle of the line-of-sight component.
        :param los_aoa_deg: Arrival angle of the line-of-sight component.
    """

    name: str
    delays: Tuple[float, ...]
    powers: Tuple[float, ...]
    rho_tx: float = 0.0
    rho_rx: float = 0.0
    k_factor_db: Optional[float] = None
    los_aod_deg: float = 30.0
    los_aoa_deg: float = -20.0

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(float(d) for d in self.delays))
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        if not self.delays or len(self.delays) != len(self.powers):
            raise ConfigError(f"Profile {self.name!r}: need one power per delay")
        if min(self.delays) < 0:
            raise ConfigError(f"Profile {self.name!r}: delays must be non-negative")
        if min(self.powers) < 0 or abs(sum(self.powers) - 1.0) > 1e-9:
            raise ConfigError(f"Profile {self.name!r}: powers must be non-negative and sum to 1")
        for rho in (self.rho_tx, self.rho_rx):
            if not 0.0 <= rho < 1.0:
                raise ConfigError(f"Profile {self.name!r}: correlation must be in [0, 1)")

    @classmethod
    def from_table(cls, name, table, delay_spread=300e-9, **kwargs) -> "TdlProfile":
        """ Build a profile from ``(normalized delay, power dB)`` rows. """
        table = np.asarray(table, dtype=float)
        powers = 10.0 ** (table[:, 1] / 10.0)
        return cls(name=name, delays=tuple(table[:, 0] * delay_spread),
                   powers=tuple(powers / powers.sum()), **kwargs)

    @classmethod
    def flat(cls) -> "TdlProfile":
        return cls(name="flat", delays=(0.0,), powers=(1.0,))

    @property
    def n_clusters(self) -> int:
        return len(self.delays)

    def with_delay_spread(self, delay_spread: float) -> "TdlProfile":
        """ Rescale delays so their power-weighted RMS spread is ``delay_spread``. """
        d = np.asarray(self.delays)
        p = np.asarray(self.powers)
        mean = np.sum(p * d)
        rms = np.sqrt(np.sum(p * (d - mean) ** 2))
        if rms == 0:
            return self
        return dataclasses.replace(self, delays=tuple(d * delay_spread / rms))


def get_profile(name: str, delay_spread=300e-9, rho_tx=0.5, rho_rx=0.3,
                k_factor_db=None) -> TdlProfile:
    """ Return a built-in profile by name (``CDL-A``, ``CDL-C``, ``flat``,
        ``two-tap``) or load one from a JSON file path. """
    key = name.upper()
    if key in ("CDL-A", "CDL-C"):
        table = _CDL_A if key == "CDL-A" else _CDL_C
        return TdlProfile.from_table(key, table, delay_spread, rho_tx=rho_tx, rho_rx=rho_rx,
                                     k_factor_db=k_factor_db)
    if key == "FLAT":
        return TdlProfile.flat()
    if key == "TWO-TAP":
        return TdlProfile(name="two-tap", delays=(0.0, delay_spread), powers=(0.5, 0.5))
    if name.endswith(".json"):
        return TdlProfile.load(name)
    raise ConfigError(f"Unknown channel profile {name!r}")


PROFILES = ("CDL-A", "CDL-C", "flat", "two-tap")


@dataclass(frozen=True)
class MixedProfile:
    """ Draws one of several profiles per trial, with given probabilities. """

    profiles: Tuple[TdlProfile, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if not self.profiles or len(self.profiles) != len(self.weights):
            raise ConfigError("MixedProfile needs one weight per profile")
        if min(self.weights) < 0 or sum(self.weights) <= 0:
            raise ConfigError("MixedProfile weights must be non-negative with a positive sum")

    def choose(self, rng: np.random.Generator) -> TdlProfile:
        w = np.asarray(self.weights, dtype=float)
        return self.profiles[int(rng.choice(len(self.profiles), p=w / w.sum()))]


@dataclass
class ChannelRealization:
    """ Channel coefficients of one slot.

        :param h: Complex array ``(n_rx, n_tx, n_subcarriers, n_symbols)``.
        :param noise_variance: Complex noise variance per receive dimension.
        :param numerology: Grid the channel was drawn for.
    """

    h: np.ndarray
    noise_variance: float
    numerology: Numerology

    def __post_init__(self):
        num = self.numerology
        expected = (num.n_rx, num.n_tx, num.n_subcarriers, num.n_symbols)
        if self.h.shape != expected:
            raise ShapeError(f"Channel shape {self.h.shape} does not match numerology {expected}")
        if self.noise_variance < 0:
            raise ConfigError("Noise variance must be non-negative")

    def with_noise(self, noise_variance: float) -> "ChannelRealization":
        return ChannelRealization(self.h, float(noise_variance), self.numerology)

    def per_re(self) -> np.ndarray:
        """ Channel matrices ``(n_subcarriers, n_symbols, n_rx, n_tx)``. """
        return np.transpose(self.h, (2, 3, 0, 1))


def _exp_correlation(n, rho):
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _steering(n, angle_deg):
    return np.exp(1j * np.pi * np.arange(n) * np.sin(np.deg2rad(angle_deg)))


def sample_channel(profile, num: Numerology, seed: SeedLike = None,
                   noise_variance: float = 0.0) -> ChannelRealization:
    """ Draw one block-fading channel realization.

        ``H[f] = sum_l sqrt(p_l) R_rx^1/2 G_l R_tx^1/2 exp(-2j pi f df tau_l)``
        with i.i.d. unit-variance circularly symmetric Gaussian ``G_l``.
        Deterministic for a given seed.

        :param profile: :class:`TdlProfile` or :class:`MixedProfile`.
        :param num: Grid and antenna configuration.
        :param seed: Anything accepted by :func:`cmolink.utils.derive_rng`.
        :param noise_variance: Stored with the realization.
    """
    rng = derive_rng(seed)
    if isinstance(profile, MixedProfile):
        profile = profile.choose(rng)
    n_rx, n_tx = num.n_rx, num.n_tx
    shape = (profile.n_clusters, n_rx, n_tx)
    gains = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    if profile.rho_rx > 0:
        gains = psd_sqrt(_exp_correlation(n_rx, profile.rho_rx)) @ gains
    if profile.rho_tx > 0:
        gains = gains @ psd_sqrt(_exp_correlation(n_tx, profile.rho_tx))
    gains *= np.sqrt(np.asarray(profile.powers))[:, None, None]

    if profile.k_factor_db is not None:
        k = 10.0 ** (profile.k_factor_db / 10.0)
        phase = np.exp(2j * np.pi * rng.uniform())
        los = phase * np.outer(_steering(n_rx, profile.los_aoa_deg), np.conj(_steering(n_tx, profile.los_aod_deg)))
        gains *= np.sqrt(1.0 / (k + 1.0))
        gains[0] += np.sqrt(k / (k + 1.0)) * los

    freqs = np.arange(num.n_subcarriers) * num.subcarrier_spacing_hz
    ramp = np.exp(-2j * np.pi * np.outer(np.asarray(profile.delays), freqs))
    h_f = np.einsum("lrt,lf->rtf", gains, ramp)
    h = np.repeat(h_f[..., None], num.n_symbols, axis=-1)
    return ChannelRealization(h, float(noise_variance), num)


def transmit(channel: ChannelRealization, x: np.ndarray, seed: SeedLike = None) -> np.ndarray:
    """ Apply ``y = H x + n`` on every resource element.

        :param x: Transmit grid ``(n_tx, n_subcarriers, n_symbols)``.
        :returns: Receive grid ``(n_rx, n_subcarriers, n_symbols)``.
    """
    x = np.asarray(x)
    num = channel.numerology
    expected = (num.n_tx, num.n_subcarriers, num.n_symbols)
    if x.shape != expected:
        raise ShapeError(f"Transmit grid shape {x.shape} does not match {expected}")
    y = np.einsum("rtfs,tfs->rfs", channel.h, x)
    if channel.noise_variance > 0:
        rng = derive_rng(seed)
        scale = np.sqrt(channel.noise_variance / 2.0)
        y = y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def snr_to_noise_variance(snr_db: float, signal_power: float = 1.0) -> float:
    """ ``sigma2 = signal_power / 10 ** (snr_db / 10)`` """
    if signal_power <= 0:
        raise ConfigError("Signal power must be positive")
    return float(signal_power / 10.0 ** (snr_db / 10.0))
