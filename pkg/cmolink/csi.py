# -*- coding: utf-8 -*-
"""
Channel state information (CSI) feedback.

The user equipment averages the spatial covariance ``H^H H`` over every
subband, keeps the strongest eigenvectors (the CSI matrix) and feeds them
back to the base station, either through a scalar-quantized baseline or a
learned transformer autoencoder. The learned encoder emits either sign bits
(which go through LDPC coding and QAM on the uplink) or unit-power complex
symbols that are sent directly, one per uplink resource element.
"""

import csv
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .autodiff import (ComplexTensor, Dense, Graph, Reshape, SignQuantizer, Tensor, UnitPower,
                       transformer_block)
from .channel import ChannelRealization, transmit
from .errors import BudgetError, ConfigError, ShapeError, ZeroVectorError
from .ldpc import get_code
from .linalg import hermitian_eig
from .modulation import QAM_ORDERS, qam_demodulate, qam_modulate
from .precoding import Precoder
from .utils import ConfigMixin, SeedLike

__all__ = ["CsiMatrix", "subband_covariance", "extract_csi", "sgcs", "sgcs_tensor",
           "quantize_csi", "dequantize_csi", "quantized_feedback", "CsiCodec",
           "UplinkScheme", "UPLINK_SCHEMES", "get_uplink_scheme", "uplink_feedback",
           "payload_to_hex", "dump_payload", "csi_features", "DEFAULT_CSI_BITS",
           "DEFAULT_CSI_SYMBOLS"]

log = logging.getLogger(__name__)

DEFAULT_CSI_BITS = 192
DEFAULT_CSI_SYMBOLS = 96
_NORM_FLOOR = 1e-300


class CsiMatrix:
    """ Per-subband concatenation of the strongest eigenvectors.

        :param w: Complex ``(n_subbands, n_tx * n_layer)``; row ``k`` holds
            the ``n_layer`` unit-norm eigenvectors of subband ``k`` one after
            the other, strongest first.
        :param n_layer: Number of eigenvectors per subband.
        :param eigenvalues: Optional matching eigenvalues ``(n_subbands, n_layer)``.
    """

    def __init__(self, w, n_layer: int, eigenvalues=None):
        w = np.asarray(w, dtype=np.complex128)
        if w.ndim != 2 or w.shape[1] % n_layer:
            raise ShapeError(f"CSI matrix {w.shape} does not hold {n_layer} layers per subband")
        self.w = w
        self.n_layer = int(n_layer)
        self.eigenvalues = None if eigenvalues is None else np.asarray(eigenvalues, dtype=np.float64)

    def __repr__(self):
        return f"CsiMatrix(n_subbands={self.n_subbands}, n_tx={self.n_tx}, n_layer={self.n_layer})"

    @property
    def n_subbands(self) -> int:
        return self.w.shape[0]

    @property
    def n_tx(self) -> int:
        return self.w.shape[1] // self.n_layer

    def vectors(self) -> np.ndarray:
        """ Eigenvectors as ``(n_subbands, n_layer, n_tx)``. """
        return self.w.reshape(self.n_subbands, self.n_layer, self.n_tx)


##############################################################################
################################# Extraction #################################
##############################################################################


def subband_covariance(h_re, n_subbands: int) -> np.ndarray:
    """ Mean ``H^H H`` over the resource elements of every subband.

        :param h_re: Per-RE channels ``(..., n_subcarriers, n_symbols, n_rx, n_tx)``.
        :returns: Covariances ``(..., n_subbands, n_tx, n_tx)``.
    """
    h_re = np.asarray(h_re, dtype=np.complex128)
    *lead, n_sc, n_sym, n_rx, n_tx = h_re.shape
    if n_sc % n_subbands:
        raise ShapeError(f"{n_sc} subcarriers cannot be split into {n_subbands} subbands")
    h = h_re.reshape(tuple(lead) + (n_subbands, (n_sc // n_subbands) * n_sym, n_rx, n_tx))
    gram = np.einsum("...erx,...ery->...exy", np.conj(h), h)
    return gram.mean(axis=-3)


def extract_csi(channel: ChannelRealization, n_layer: int) -> CsiMatrix:
    """ CSI matrix of a channel realization.

        :param channel: Downlink channel.
        :param n_layer: Eigenvectors kept per subband, at most
            ``min(n_tx, n_rx)``.
    """
    num = channel.numerology
    if not 1 <= n_layer <= min(num.n_tx, num.n_rx):
        raise ConfigError(f"Cannot extract {n_layer} layers from a {num.n_rx}x{num.n_tx} channel")
    cov = subband_covariance(channel.per_re(), num.n_subbands)
    values, vectors = hermitian_eig(cov)
    top = vectors[..., :n_layer]  # (n_sb, n_tx, n_layer)
    w = np.swapaxes(top, -1, -2).reshape(num.n_subbands, -1)
    return CsiMatrix(w, n_layer, values[..., :n_layer])


##############################################################################
#################################### SGCS ####################################
##############################################################################


def _as_vectors(value) -> np.ndarray:
    if isinstance(value, CsiMatrix):
        return value.w
    if isinstance(value, Precoder):
        return value.as_vectors()
    return np.asarray(value, dtype=np.complex128)


def sgcs(w, p) -> float:
    """ Squared generalized cosine similarity, averaged over subbands.

        Per subband ``|w_k^H p_k|**2 / (||w_k||**2 ||p_k||**2)`` on the
        layer-concatenated vectors, so the value lies in ``[0, 1]`` and is
        invariant to a complex scale of either argument.

        :param w: :class:`CsiMatrix` or an array ``(n_subbands, size)``.
        :param p: :class:`~cmolink.precoding.Precoder`, :class:`CsiMatrix`
            or an array of the same shape as ``w``.
        :raises ZeroVectorError: Some subband vector is zero.
    """
    a, b = _as_vectors(w), _as_vectors(p)
    if a.shape != b.shape:
        raise ShapeError(f"Cannot compare CSI {a.shape} with precoder {b.shape}")
    na = np.sum(np.abs(a) ** 2, axis=-1)
    nb = np.sum(np.abs(b) ** 2, axis=-1)
    if np.any(na <= 0) or np.any(nb <= 0):
        raise ZeroVectorError("SGCS is undefined for a zero vector")
    inner = np.abs(np.sum(np.conj(a) * b, axis=-1)) ** 2
    return float(np.clip(np.mean(inner / (na * nb)), 0.0, 1.0))


def sgcs_tensor(w: np.ndarray, p: ComplexTensor) -> Tensor:
    """ Differentiable mean SGCS between fixed CSI ``w`` and learned
        precoder vectors ``p``, both ``(..., n_subbands, size)``. """
    w = np.asarray(w, dtype=np.complex128)
    if tuple(w.shape) != tuple(p.shape):
        raise ShapeError(f"Cannot compare CSI {w.shape} with precoder {p.shape}")
    inner = (ComplexTensor.constant(np.conj(w)) * p).sum(axis=-1)
    num = inner.abs2()
    den = p.abs2().sum(axis=-1) * np.sum(np.abs(w) ** 2, axis=-1)
    if np.any(den.data <= 0):
        raise ZeroVectorError("SGCS is undefined for a zero vector")
    return (num / den).mean()


##############################################################################
########################### Quantized-eigenvector CSI #########################
##############################################################################


def _split_budget(count: int, budget: int) -> Tuple[int, int]:
    per_coefficient = budget // count
    if per_coefficient < 2:
        raise BudgetError(f"{budget} bits cannot describe {count} coefficients "
                          f"(at least 2 bits per coefficient needed)")
    amp_bits = per_coefficient // 2
    return amp_bits, per_coefficient - amp_bits


def _to_bits(values, width):
    shifts = np.arange(width - 1, -1, -1)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)


def _from_bits(bits):
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits.astype(np.int64) @ weights


def quantize_csi(csi: CsiMatrix, budget: int) -> np.ndarray:
    """ Scalar magnitude/phase quantization of every eigenvector coefficient.

        Each layer vector is scaled so that its largest coefficient has
        magnitude one and phase zero. Magnitudes use a uniform mid-tread
        quantizer on ``[0, 1]``, phases a uniform quantizer on the circle.
        The budget is split evenly across coefficients (magnitude gets the
        smaller half); unused bits are zero padding.

        :returns: ``budget`` bits.
        :raises BudgetError: Fewer than two bits per coefficient.
    """
    vectors = csi.vectors()
    amp_bits, phase_bits = _split_budget(vectors.size, budget)
    mag = np.abs(vectors)
    peak = np.argmax(mag, axis=-1)
    ref = np.take_along_axis(vectors, peak[..., None], axis=-1)
    ref_mag = np.maximum(np.abs(ref), _NORM_FLOOR)
    rel = vectors * np.conj(ref) / ref_mag / ref_mag

    amp_levels = 2 ** amp_bits - 1
    amp_index = np.rint(np.clip(np.abs(rel), 0, 1) * amp_levels).astype(np.int64)
    phase_levels = 2 ** phase_bits
    phase_index = np.rint(np.angle(rel) / (2 * np.pi) * phase_levels).astype(np.int64) % phase_levels

    bits = np.concatenate([_to_bits(amp_index, amp_bits), _to_bits(phase_index, phase_bits)], axis=-1)
    bits = bits.reshape(-1)
    return np.concatenate([bits, np.zeros(budget - len(bits), dtype=np.uint8)])


def dequantize_csi(bits, n_subbands: int, n_tx: int, n_layer: int, budget: Optional[int] = None) -> CsiMatrix:
    """ Reconstruct the CSI matrix from :func:`quantize_csi` bits. Each layer
        vector is renormalized to unit norm; a vector whose magnitudes all
        quantize to zero becomes a unit vector on its first coefficient. """
    bits = np.asarray(bits, dtype=np.uint8)
    budget = len(bits) if budget is None else int(budget)
    if len(bits) != budget:
        raise BudgetError(f"Expected {budget} feedback bits, got {len(bits)}")
    count = n_subbands * n_tx * n_layer
    amp_bits, phase_bits = _split_budget(count, budget)
    used = bits[:count * (amp_bits + phase_bits)].reshape(n_subbands, n_layer, n_tx, amp_bits + phase_bits)
    amp = _from_bits(used[..., :amp_bits]) / (2 ** amp_bits - 1)
    phase = _from_bits(used[..., amp_bits:]) * (2 * np.pi / 2 ** phase_bits)
    vectors = amp * np.exp(1j * phase)
    norm = np.linalg.norm(vectors, axis=-1, keepdims=True)
    empty = norm[..., 0] == 0
    if np.any(empty):
        log.warning("%d quantized CSI vectors collapsed to zero", int(empty.sum()))
        vectors[empty, 0] = 1.0
        norm = np.linalg.norm(vectors, axis=-1, keepdims=True)
    vectors = vectors / norm
    return CsiMatrix(vectors.reshape(n_subbands, -1), n_layer)


def quantized_feedback(csi: CsiMatrix, budget: int) -> Tuple[np.ndarray, CsiMatrix]:
    """ Quantize and reconstruct in one step: ``(bits, reconstruction)``. """
    bits = quantize_csi(csi, budget)
    return bits, dequantize_csi(bits, csi.n_subbands, csi.n_tx, csi.n_layer, budget)


##############################################################################
############################### Learned codec ################################
##############################################################################


def csi_features(w) -> np.ndarray:
    """ Real encoder input ``(..., n_subbands, 2 * size)``: real parts, then
        imaginary parts of every CSI row. """
    w = _as_vectors(w)
    return np.concatenate([w.real, w.imag], axis=-1)


class CsiCodec:
    """ Transformer autoencoder for CSI feedback.

        The encoder embeds every subband row as one token, runs ``blocks``
        transformer blocks, flattens and projects onto the feedback payload:
        ``n_bits`` sign bits for ``form="bits"``, or ``n_symbols`` complex
        values normalized to unit mean power for ``form="symbols"``. The
        decoder mirrors it and outputs one precoder row per subband.

        :param n_subbands: Subbands (tokens).
        :param n_tx: Transmit antennas.
        :param n_layer: Layers per subband.
        :param form: ``"bits"`` or ``"symbols"``.
        :param dim: Embedding width.
        :param heads: Attention heads.
        :param blocks: Transformer blocks on each side.
        :param n_bits: Bit-form payload size.
        :param n_symbols: Symbol-form payload size.
        :param seed: Initialization seed (decoder uses ``seed + 1``).
    """

    forms = ("bits", "symbols")

    def __init__(self, n_subbands: int, n_tx: int, n_layer: int, form="symbols", dim=256, heads=4,
                 blocks=6, n_bits=DEFAULT_CSI_BITS, n_symbols=DEFAULT_CSI_SYMBOLS, seed=0):
        if form not in self.forms:
            raise ConfigError(f"Unknown CSI feedback form {form!r}, expected one of {self.forms}")
        self.form = form
        self.n_subbands, self.n_tx, self.n_layer = int(n_subbands), int(n_tx), int(n_layer)
        self.size = self.n_tx * self.n_layer
        self.n_bits, self.n_symbols = int(n_bits), int(n_symbols)
        feat = 2 * self.size
        flat = self.n_subbands * dim

        nodes = [Dense(feat, dim)]
        for _ in range(blocks):
            nodes += transformer_block(dim, heads)
        nodes.append(Reshape((flat,)))
        if form == "bits":
            nodes += [Dense(flat, self.n_bits), SignQuantizer()]
            payload_shape = (self.n_bits,)
        else:
            nodes += [Dense(flat, 2 * self.n_symbols), Reshape((self.n_symbols, 2)), UnitPower("sample")]
            payload_shape = (self.n_symbols, 2)
        self.encoder = Graph(nodes, (self.n_subbands, feat), name="csi_encoder", seed=seed)

        nodes = [] if form == "bits" else [Reshape((2 * self.n_symbols,))]
        nodes += [Dense(int(np.prod(payload_shape)), flat), Reshape((self.n_subbands, dim))]
        for _ in range(blocks):
            nodes += transformer_block(dim, heads)
        nodes.append(Dense(dim, feat))
        self.decoder = Graph(nodes, payload_shape, name="csi_decoder", seed=seed + 1)

    @classmethod
    def from_graphs(cls, encoder: Graph, decoder: Graph, n_layer: int) -> "CsiCodec":
        self = cls.__new__(cls)
        self.encoder, self.decoder = encoder, decoder
        self.n_subbands, feat = encoder.input_shape
        self.n_layer = int(n_layer)
        self.size = feat // 2
        self.n_tx = self.size // self.n_layer
        if len(decoder.input_shape) == 1:
            self.form, self.n_bits, self.n_symbols = "bits", decoder.input_shape[0], DEFAULT_CSI_SYMBOLS
        else:
            self.form, self.n_bits, self.n_symbols = "symbols", DEFAULT_CSI_BITS, decoder.input_shape[0]
        if decoder.output_shape != (self.n_subbands, feat) or encoder.output_shape != decoder.input_shape:
            raise ShapeError("CSI encoder and decoder graphs do not match")
        return self

    def __repr__(self):
        return (f"CsiCodec(form={self.form!r}, n_subbands={self.n_subbands}, n_tx={self.n_tx}, "
                f"n_layer={self.n_layer})")

    @property
    def payload_size(self) -> int:
        return self.n_bits if self.form == "bits" else self.n_symbols

    def _check(self, csi):
        w = _as_vectors(csi)
        if w.shape[-2:] != (self.n_subbands, self.size):
            raise ShapeError(f"Node 'input' of graph 'csi_encoder' expects CSI "
                             f"({self.n_subbands}, {self.size}), got {w.shape}")
        return w

    ###### Differentiable path

    def encode_tensor(self, csi, mode="train") -> Tensor:
        return self.encoder.forward(csi_features(self._check(csi)), mode)

    def decode_tensor(self, payload: Tensor, mode="train") -> ComplexTensor:
        """ Precoder vectors ``(batch, n_subbands, n_tx * n_layer)``. """
        out = self.decoder.forward(payload, mode)
        return ComplexTensor(out[..., :self.size], out[..., self.size:])

    ###### Inference

    def encode(self, csi) -> np.ndarray:
        """ Feedback payload of one CSI matrix: ``n_bits`` bits (``+1`` maps to
            ``0``) or ``n_symbols`` unit-power complex symbols. """
        out = self.encoder.predict(csi_features(self._check(csi)))
        if self.form == "bits":
            return (out < 0).astype(np.uint8)
        return out[..., 0] + 1j * out[..., 1]

    def payload_input(self, payload) -> np.ndarray:
        """ Decoder input for a received payload. """
        payload = np.asarray(payload)
        if payload.shape[-1:] != (self.payload_size,):
            raise ShapeError(f"Node 'input' of graph 'csi_decoder' expects a payload of "
                             f"{self.payload_size}, got {payload.shape}")
        if self.form == "bits":
            return 1.0 - 2.0 * payload.astype(np.float64)
        return np.stack([payload.real, payload.imag], axis=-1)

    def decode(self, payload) -> Precoder:
        out = self.decoder.predict(self.payload_input(payload))
        vectors = out[..., :self.size] + 1j * out[..., self.size:]
        return Precoder.from_vectors(vectors, self.n_layer)


##############################################################################
################################### Uplink ###################################
##############################################################################


@dataclass(frozen=True)
class UplinkScheme(ConfigMixin):
    """ How the CSI payload crosses the uplink.

        ``form="ideal"`` delivers the payload unchanged, ``"symbols"`` maps
        one complex symbol per resource element and ``"bits"`` LDPC-encodes
        at ``code_rate`` and maps onto ``2**qam_order``-QAM.
    """

    name: str = "ideal"
    form: str = "ideal"
    code_rate: float = 0.5
    qam_order: int = 4

    def __post_init__(self):
        if self.form not in ("ideal", "bits", "symbols"):
            raise ConfigError(f"Unknown uplink form {self.form!r}")
        if self.form == "bits":
            if not 0 < self.code_rate < 1:
                raise ConfigError(f"Uplink code rate must lie in (0, 1), got {self.code_rate}")
            if self.qam_order not in QAM_ORDERS:
                raise ConfigError(f"Unsupported uplink QAM order {self.qam_order}")

    def required_res(self, payload_size: int) -> int:
        """ Uplink resource elements needed for a payload. """
        if self.form == "symbols":
            return int(payload_size)
        if self.form == "bits":
            coded = int(round(payload_size / self.code_rate))
            return -(-coded // self.qam_order)
        return 0


UPLINK_SCHEMES = {
    "ideal": UplinkScheme("ideal", "ideal"),
    "cmo2a": UplinkScheme("cmo2a", "bits", 1 / 4, 8),
    "cmo2b": UplinkScheme("cmo2b", "bits", 1 / 3, 6),
    "cmo2c": UplinkScheme("cmo2c", "bits", 1 / 2, 4),
    "symbols": UplinkScheme("symbols", "symbols"),
}


def get_uplink_scheme(name) -> UplinkScheme:
    if isinstance(name, UplinkScheme):
        return name
    try:
        return UPLINK_SCHEMES[name]
    except KeyError:
        raise ConfigError(f"Unknown uplink scheme {name!r}, expected one of "
                          f"{', '.join(UPLINK_SCHEMES)}") from None


def _mrc(ul_channel: ChannelRealization, symbols: np.ndarray, seed: SeedLike):
    num = ul_channel.numerology
    if num.n_tx != 1 or num.n_symbols != 1:
        raise ConfigError("Uplink channel must have one transmit antenna and one OFDM symbol")
    x = np.zeros((1, num.n_subcarriers, 1), dtype=np.complex128)
    x[0, :len(symbols), 0] = symbols
    y = transmit(ul_channel, x, seed)[:, :len(symbols), 0]  # (n_rx, n)
    h = ul_channel.h[:, 0, :len(symbols), 0]  # (n_rx, n)
    gain = np.maximum(np.sum(np.abs(h) ** 2, axis=0), _NORM_FLOOR)
    x_hat = np.sum(np.conj(h) * y, axis=0) / gain
    return x_hat, ul_channel.noise_variance / gain


def uplink_feedback(payload, ul_channel: ChannelRealization, scheme, seed: SeedLike = None) -> np.ndarray:
    """ Send a CSI payload over the single-antenna uplink.

        Symbols (or QAM symbols of the LDPC-coded bits) occupy the first
        resource elements of the uplink grid, are received on every base
        station antenna and combined with maximum-ratio combining under
        ideal channel knowledge.

        :param payload: Bits (``uint8``) or complex symbols.
        :param ul_channel: Uplink channel ``(n_bs, 1, n_subcarriers, 1)``.
        :param scheme: :class:`UplinkScheme` or preset name.
        :returns: Received payload of the same kind and length.
        :raises BudgetError: The payload needs more resource elements than the
            uplink grid offers.
    """
    scheme = get_uplink_scheme(scheme)
    payload = np.asarray(payload)
    if scheme.form == "ideal":
        return payload.copy()
    capacity = ul_channel.numerology.n_subcarriers
    needed = scheme.required_res(len(payload))
    if needed > capacity:
        raise BudgetError(f"Payload needs {needed} uplink REs, only {capacity} available")

    if scheme.form == "symbols":
        x_hat, _ = _mrc(ul_channel, payload.astype(np.complex128), seed)
        return x_hat

    k = len(payload)
    n = int(round(k / scheme.code_rate))
    code = get_code(n, k / n)
    coded = code.encode(payload.astype(np.uint8))
    m = scheme.qam_order
    padded = np.concatenate([coded, np.zeros(-len(coded) % m, dtype=np.uint8)])
    x_hat, noise = _mrc(ul_channel, qam_modulate(padded, m), seed)
    llr = qam_demodulate(x_hat, 1.0, np.maximum(noise, 1e-12), m)[:n]
    bits, converged = code.decode(llr)
    if not converged:
        log.debug("Uplink CSI codeword failed to decode")
    return bits.astype(np.uint8)


def payload_to_hex(bits) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def dump_payload(payload, path):
    """ Write a feedback payload for inspection: hex text for bits, CSV of
        real and imaginary parts for symbols. """
    payload = np.asarray(payload)
    if np.iscomplexobj(payload):
        with open(path, "w", newline="", encoding="utf8") as fp:
            writer = csv.writer(fp)
            writer.writerow(["index", "re", "im"])
            for i, value in enumerate(payload):
                writer.writerow([i, repr(float(value.real)), repr(float(value.imag))])
    else:
        with open(path, "w", encoding="ascii") as fp:
            fp.write(f"{len(payload)} {payload_to_hex(payload)}\n")
