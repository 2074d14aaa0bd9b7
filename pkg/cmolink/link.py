# -*- coding: utf-8 -*-
"""
End-to-end simulation of one downlink slot.

A :class:`LinkConfig` selects the modulation scheme (Gray QAM or the learned
cross-layer modulator), the CSI scheme (ideal, quantized eigenvectors, or
learned bit/symbol feedback), the precoder (eigenvectors or the learned
decoder output), the detector and the fixed defaults (numerology, code
rate, channel profile). :func:`run_trial` pushes one transport block
through the whole chain and reports whether it was delivered.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from .channel import (ChannelRealization, Numerology, get_profile, sample_channel,
                      snr_to_noise_variance, transmit)
from .csi import (dequantize_csi, extract_csi, get_uplink_scheme, quantize_csi, sgcs,
                  uplink_feedback)
from .detection import kbest_detect, lmmse_filter, per_layer_sinr_db, zf_equalize
from .errors import ConfigError, ZeroVectorError
from .ldpc import LdpcCode, get_code
from .models import LinkModels, load_models
from .modulation import QAM_ORDERS, get_constellation, qam_demodulate, qam_modulate
from .precoding import Precoder, apply_precoding, eigen_precoder, normalize_power, pruned_layers
from .utils import ConfigMixin, SeedLike, derive_rng

__all__ = ["LinkConfig", "TrialResult", "run_trial", "sinr_features", "code_layout",
           "effective_channel"]

log = logging.getLogger(__name__)

# Floors that keep equalizers and demappers finite on noiseless links.
_SIGMA2_FLOOR = 1e-10
_VAR_FLOOR = 1e-12

# Per-trial random stream counters, below the channel and noise seeds.
_DL_CHANNEL, _UL_CHANNEL, _BITS, _PADDING = 0, 1, 2, 3
_DL_NOISE, _UL_NOISE = 0, 1


@dataclass(frozen=True)
class LinkConfig(ConfigMixin):
    """ One physical layer link: scheme choices plus fixed defaults.

        :param modulation: ``"qam"`` or ``"learned"``.
        :param qam_order: Bits per QAM symbol (QAM links only).
        :param n_layer: Spatial layers.
        :param precoding: ``"eigen"`` or ``"learned"``.
        :param csi: ``"ideal"``, ``"quantized"``, ``"learned-bits"`` or
            ``"learned-symbols"``.
        :param payload: Coded bits per resource element.
        :param uplink: Uplink scheme name used for CSI feedback when an
            uplink SNR is given.
        :param ldpc_rate: Downlink code rate.
        :param max_codeword: Longest downlink LDPC codeword; a slot is split
            into equal codewords no longer than this.
        :param detector: ``"lmmse"``, ``"zf"`` or ``"kbest"``.
        :param csi_bits: Feedback budget of the quantized baseline.
        :param model_path: Directory of a saved :class:`~cmolink.models.LinkModels`.
    """

    name: str = "link"
    modulation: str = "qam"
    qam_order: int = 2
    n_layer: int = 1
    precoding: str = "eigen"
    csi: str = "quantized"
    payload: int = 2
    numerology: Numerology = Numerology.desk()
    dl_snr_db: float = 10.0
    ul_snr_db: Optional[float] = None
    uplink: str = "cmo2c"
    ldpc_rate: float = 0.5
    max_codeword: int = 2016
    detector: str = "lmmse"
    csi_bits: int = 192
    kbest_k: int = 16
    model_path: Optional[str] = None
    profile: str = "CDL-C"
    delay_spread: float = 300e-9

    _nested = {"numerology": Numerology}

    def __post_init__(self):
        choices = {"modulation": ("qam", "learned"), "precoding": ("eigen", "learned"),
                   "csi": ("ideal", "quantized", "learned-bits", "learned-symbols"),
                   "detector": ("lmmse", "zf", "kbest")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"LinkConfig.{name} must be one of {allowed}, got {getattr(self, name)!r}")
        num = self.numerology
        if not 1 <= self.n_layer <= min(num.n_tx, num.n_rx):
            raise ConfigError(f"{self.n_layer} layers do not fit a {num.n_rx}x{num.n_tx} channel")
        if self.modulation == "qam":
            if self.qam_order not in QAM_ORDERS:
                raise ConfigError(f"Unsupported QAM order {self.qam_order}")
            if self.payload != self.qam_order * self.n_layer:
                raise ConfigError(f"Payload {self.payload} bits/RE != {self.qam_order} bits x "
                                  f"{self.n_layer} layers")
        elif self.detector != "lmmse":
            raise ConfigError("The learned demodulator needs LMMSE-equalized input")
        if (self.precoding == "learned") != self.csi.startswith("learned"):
            raise ConfigError("Learned precoding goes with learned CSI feedback and vice versa")
        if self.uses_models and not self.model_path:
            raise ConfigError(f"Link {self.name!r} needs a model_path")
        if not 0 < self.ldpc_rate < 1:
            raise ConfigError(f"Code rate must lie in (0, 1), got {self.ldpc_rate}")
        scheme = get_uplink_scheme(self.uplink)
        expected = {"quantized": "bits", "learned-bits": "bits", "learned-symbols": "symbols"}.get(self.csi)
        if scheme.form not in ("ideal", expected):
            raise ConfigError(f"Uplink scheme {self.uplink!r} cannot carry {self.csi} CSI")
        if self.kbest_k < 1:
            raise ConfigError("K-Best list size must be at least 1")

    @property
    def uses_models(self) -> bool:
        return self.modulation == "learned" or self.csi.startswith("learned")

    def load_models(self) -> Optional[LinkModels]:
        """ Load (cached) models and check they fit this link. """
        if not self.uses_models:
            return None
        models = load_models(self.model_path)
        self.check_models(models)
        return models

    def check_models(self, models: LinkModels):
        mc = models.config
        if mc.n_layer != self.n_layer or (self.modulation == "learned" and mc.bits_per_re != self.payload):
            raise ConfigError(f"Models in {self.model_path} carry {mc.bits_per_re} bits on {mc.n_layer} "
                              f"layers, link {self.name!r} needs {self.payload} on {self.n_layer}")
        form = {"learned-bits": "bits", "learned-symbols": "symbols"}.get(self.csi)
        if form and models.codec.form != form:
            raise ConfigError(f"Link {self.name!r} needs {form} CSI feedback, models provide "
                              f"{models.codec.form}")
        if models.numerology != self.numerology:
            raise ConfigError(f"Models in {self.model_path} were built for a different numerology")


@dataclass
class TrialResult:
    block_error: bool
    #: Information bits of the transport block.
    info_bits: int
    #: Delivered information bits per resource element.
    goodput: float
    #: Mean post-equalization SINR per layer in dB.
    sinr_db: np.ndarray
    #: SGCS between the true CSI and the precoder actually used.
    sgcs: float
    pruned_layers: List[int]


def code_layout(config: LinkConfig) -> Tuple[LdpcCode, int]:
    """ Downlink codeword and codewords per slot.

        The coded bits of a slot (``payload * n_re``) are split into the
        fewest equal codewords no longer than ``max_codeword`` whose length
        keeps ``rate * n`` integral; leftover positions carry known padding.
    """
    total = config.payload * config.numerology.n_re
    rate = Fraction(config.ldpc_rate).limit_denominator(64)
    count = max(1, math.ceil(total / config.max_codeword))
    n = (total // count) // rate.denominator * rate.denominator
    if n < 4 * rate.denominator:
        raise ConfigError(f"Slot of {total} coded bits is too small for rate {rate}")
    return get_code(n, float(rate)), count


def effective_channel(channel: ChannelRealization, precoder: Precoder, scale: float) -> np.ndarray:
    """ Per-RE ``H P / sqrt(power)`` as ``(n_subcarriers, n_symbols, n_rx, n_layer)``. """
    num = channel.numerology
    per_sc = precoder.matrices[num.subband_of()]  # (n_sc, n_tx, n_l)
    return scale * np.einsum("fsrt,ftl->fsrl", channel.per_re(), per_sc)


def _uplink_channel(config: LinkConfig, profile, rng_seed) -> Optional[ChannelRealization]:
    if config.ul_snr_db is None:
        return None
    num = Numerology.uplink(config.numerology.n_tx)
    sigma2 = snr_to_noise_variance(config.ul_snr_db)
    return sample_channel(profile, num, rng_seed, noise_variance=sigma2)


def _feedback(config: LinkConfig, models: Optional[LinkModels], csi, ul_channel, ul_seed) -> Precoder:
    scheme = get_uplink_scheme(config.uplink if ul_channel is not None else "ideal")
    if config.csi == "ideal":
        return eigen_precoder(csi)
    if config.csi == "quantized":
        bits = quantize_csi(csi, config.csi_bits)
        if ul_channel is not None:
            bits = uplink_feedback(bits, ul_channel, scheme, ul_seed)
        return eigen_precoder(dequantize_csi(bits, csi.n_subbands, csi.n_tx, csi.n_layer, config.csi_bits))
    payload = models.codec.encode(csi)
    if ul_channel is not None:
        payload = uplink_feedback(payload, ul_channel, scheme, ul_seed)
    return models.codec.decode(payload)


def _demap(config, models, heq, y, sigma2) -> Tuple[np.ndarray, np.ndarray]:
    """ LLRs ``(n_re, payload)`` and post-SINR ``(n_re, n_layer)``. """
    n_l = config.n_layer
    heq = heq.reshape(-1, heq.shape[-2], n_l)
    y = y.reshape(-1, heq.shape[-2])
    eq_sigma2 = max(sigma2, _SIGMA2_FLOOR)

    if config.detector == "kbest":
        const = get_constellation(config.qam_order)
        result = kbest_detect(heq, y, const, config.kbest_k, eq_sigma2)
        _, err = lmmse_filter(heq, eq_sigma2)
        sinr = np.clip(1.0 / np.maximum(err, _VAR_FLOOR) - 1.0, 0.0, None)
        return result.llr, sinr

    if config.detector == "zf":
        x_hat, sinr = zf_equalize(heq, y, eq_sigma2)
        gain = np.ones_like(sinr)
        var = 1.0 / np.maximum(sinr, _VAR_FLOOR)
    else:
        w, err = lmmse_filter(heq, eq_sigma2)
        x_hat = (w @ y[..., None])[..., 0]
        gain = np.clip(1.0 - err, _VAR_FLOOR, 1.0)
        var = np.maximum(gain * (1.0 - gain), _VAR_FLOOR)
        sinr = np.clip(gain / var, 0.0, 1e12)

    if config.modulation == "learned":
        return models.modulator.demodulate(x_hat), sinr
    llr = qam_demodulate(x_hat, gain, var, config.qam_order)
    return llr, sinr


def run_trial(config: LinkConfig, channel_seed: SeedLike, noise_seed: SeedLike,
              dl_snr_db: Optional[float] = None, ul_snr_db: Optional[float] = None,
              models: Optional[LinkModels] = None) -> TrialResult:
    """ Simulate one slot of ``config``.

        The channel seed fixes the downlink and uplink channels and the
        transmitted bits; the noise seed fixes all noise. Reusing the channel
        seed across SNR points and links gives paired comparisons.

        :param dl_snr_db: Downlink SNR, defaults to ``config.dl_snr_db``;
            ``inf`` disables downlink noise.
        :param ul_snr_db: Uplink SNR for CSI feedback, defaults to
            ``config.ul_snr_db``; ``None`` delivers feedback ideally.
        :param models: Learned models; loaded from ``config.model_path``
            when needed and not given.
    """
    if dl_snr_db is not None or ul_snr_db is not None:
        config = config.replace(dl_snr_db=config.dl_snr_db if dl_snr_db is None else dl_snr_db,
                                ul_snr_db=config.ul_snr_db if ul_snr_db is None else ul_snr_db)
    if config.uses_models and models is None:
        models = config.load_models()
    num = config.numerology
    profile = get_profile(config.profile, config.delay_spread)
    sigma2 = 0.0 if math.isinf(config.dl_snr_db) else snr_to_noise_variance(config.dl_snr_db)

    channel = sample_channel(profile, num, derive_rng(channel_seed, _DL_CHANNEL), sigma2)
    ul_channel = _uplink_channel(config, profile, derive_rng(channel_seed, _UL_CHANNEL))

    csi = extract_csi(channel, config.n_layer)
    precoder = _feedback(config, models, csi, ul_channel, derive_rng(noise_seed, _UL_NOISE))
    pruned = pruned_layers(precoder) if config.precoding == "learned" else []
    try:
        similarity = sgcs(csi, precoder)
    except ZeroVectorError:
        similarity = 0.0

    code, count = code_layout(config)
    bit_rng = derive_rng(channel_seed, _BITS)
    info = bit_rng.integers(0, 2, size=(count, code.k), dtype=np.uint8)
    coded = code.encode(info).reshape(-1)
    total = config.payload * num.n_re
    stream = np.concatenate([coded, bit_rng.integers(0, 2, size=total - len(coded), dtype=np.uint8)])
    bits = stream.reshape(num.n_subcarriers, num.n_symbols, config.payload)

    if config.modulation == "learned":
        symbols = models.modulator.modulate(bits.reshape(-1, config.payload))
    else:
        symbols = qam_modulate(bits.reshape(-1, config.payload), config.qam_order)
    s = symbols.reshape(num.n_subcarriers, num.n_symbols, config.n_layer).transpose(2, 0, 1)

    try:
        raw = apply_precoding(precoder, s, num)
        x = normalize_power(raw)
    except ZeroVectorError:
        log.warning("Link %r produced an all-zero transmit grid", config.name)
        return TrialResult(True, count * code.k, 0.0, np.full(config.n_layer, -30.0), similarity, pruned)
    scale = float(np.sqrt(num.n_re / np.sum(np.abs(raw) ** 2)))
    y = transmit(channel, x, derive_rng(noise_seed, _DL_NOISE))

    heq = effective_channel(channel, precoder, scale)
    y_re = np.transpose(y, (1, 2, 0))
    llr, sinr = _demap(config, models, heq, y_re, sigma2)

    received = llr.reshape(-1)[:count * code.n].reshape(count, code.n)
    decoded, converged = code.decode(received)
    block_error = bool(np.any(decoded != info) or not np.all(converged))
    info_bits = count * code.k
    goodput = 0.0 if block_error else info_bits / num.n_re
    return TrialResult(block_error, info_bits, goodput, per_layer_sinr_db(sinr), similarity, pruned)


def sinr_features(config: LinkConfig, channel_seed: SeedLike, dl_snr_db: Optional[float] = None,
                  n_layer: Optional[int] = None) -> np.ndarray:
    """ Per-layer post-LMMSE SINR (dB) of the slot drawn from
        ``channel_seed``, with ideal eigen precoding on ``n_layer`` layers.
        This is the observation the control agent decides on; it does not
        depend on which candidate scheme is later used. """
    snr = config.dl_snr_db if dl_snr_db is None else dl_snr_db
    n_layer = n_layer or config.n_layer
    num = config.numerology
    profile = get_profile(config.profile, config.delay_spread)
    sigma2 = 0.0 if math.isinf(snr) else snr_to_noise_variance(snr)
    channel = sample_channel(profile, num, derive_rng(channel_seed, _DL_CHANNEL), sigma2)
    precoder = eigen_precoder(extract_csi(channel, n_layer))
    # Equal power on unit-norm columns: the slot power is n_layer per RE.
    heq = effective_channel(channel, precoder, 1.0 / math.sqrt(n_layer))
    _, err = lmmse_filter(heq.reshape(-1, num.n_rx, n_layer), max(sigma2, _SIGMA2_FLOOR))
    sinr = np.clip(1.0 / np.maximum(err, _VAR_FLOOR) - 1.0, 0.0, 1e12)
    return per_layer_sinr_db(sinr)
