# -*- coding: utf-8 -*-
"""
Bit to symbol mapping.

Two families live here: classical square QAM with Gray labels, mapped
independently on every layer, and the learned cross-layer modulator that maps
all bits of one resource element (RE) jointly onto ``n_layer`` complex
values, together with its learned demodulator.

LLR sign convention, shared with :mod:`cmolink.ldpc`: positive values favour
bit ``0``.
"""

import csv
import functools
import logging
from typing import Tuple

import numpy as np

from .autodiff import (Activation, BatchNorm, Conv1x1, Dense, Graph, Residual, Tensor,
                       UnitPower, no_grad)
from .errors import CodingError, ConfigError, EnumerationLimitError, ShapeError

__all__ = ["QAM_ORDERS", "QamConstellation", "get_constellation", "qam_modulate",
           "qam_demodulate", "bit_patterns", "bits_to_int", "CrossLayerModulator",
           "count_params_and_flops", "dump_constellation", "ENUMERATION_LIMIT"]

log = logging.getLogger(__name__)

QAM_ORDERS = (2, 4, 6, 8)

#: Largest number of points enumerated exhaustively (2**12).
ENUMERATION_LIMIT = 4096


def bit_patterns(nbits: int) -> np.ndarray:
    """ All ``2**nbits`` bit patterns as rows, most significant bit first. """
    if 2 ** nbits > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"Cannot enumerate 2**{nbits} patterns (limit {ENUMERATION_LIMIT})")
    index = np.arange(2 ** nbits)
    shifts = np.arange(nbits - 1, -1, -1)
    return ((index[:, None] >> shifts) & 1).astype(np.uint8)


def bits_to_int(bits) -> np.ndarray:
    """ Interpret the last axis of ``bits`` as an MSB-first integer. """
    bits = np.asarray(bits).astype(np.int64)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ weights


##############################################################################
################################ Classical QAM ###############################
##############################################################################


def _gray_level(bits) -> int:
    # First bit is the sign, the remaining bits pick the magnitude so that
    # neighbouring levels differ in exactly one bit.
    def magnitude(rest):
        if not len(rest):
            return 1
        return 2 ** len(rest) - (1 - 2 * int(rest[0])) * magnitude(rest[1:])
    return (1 - 2 * int(bits[0])) * magnitude(bits[1:])


class QamConstellation:
    """ Square ``2**m``-QAM with Gray labels and unit average power.

        Bits are taken most significant first; even positions drive the
        in-phase axis and odd positions the quadrature axis.

        :param m: Bits per symbol, one of ``QAM_ORDERS``.
    """

    def __init__(self, m: int):
        if m not in QAM_ORDERS:
            raise ConfigError(f"Unsupported QAM order {m} bits/symbol, expected one of {QAM_ORDERS}")
        self.m = int(m)
        self.labels = bit_patterns(self.m)
        raw = np.array([_gray_level(b[0::2]) + 1j * _gray_level(b[1::2]) for b in self.labels])
        self.scale = float(np.sqrt(np.mean(np.abs(raw) ** 2)))
        #: Point for every label integer (row index of :attr:`labels`).
        self.points = raw / self.scale

    def __repr__(self):
        return f"QamConstellation(m={self.m})"

    def __len__(self):
        return len(self.points)

    @property
    def min_distance(self) -> float:
        return 2.0 / self.scale

    def modulate(self, bits) -> np.ndarray:
        return qam_modulate(bits, self.m)

    def demodulate(self, y, gain=1.0, sigma2=1.0) -> np.ndarray:
        return qam_demodulate(y, gain, sigma2, self.m)


@functools.lru_cache(maxsize=None)
def get_constellation(m: int) -> QamConstellation:
    return QamConstellation(m)


def qam_modulate(bits, m: int) -> np.ndarray:
    """ Map a bit sequence onto Gray ``2**m``-QAM symbols.

        :param bits: Bits along the last axis; its length must be a multiple
            of ``m``.
        :returns: Complex symbols, ``len(bits) // m`` along the last axis.
        :raises CodingError: The length is not a multiple of ``m``.
    """
    const = get_constellation(m)
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim == 0 or bits.shape[-1] % m:
        raise CodingError(f"Bit length {bits.shape[-1:] or 0} is not a multiple of {m}")
    groups = bits.reshape(bits.shape[:-1] + (bits.shape[-1] // m, m))
    return const.points[bits_to_int(groups)]


def qam_demodulate(y, gain, sigma2, m: int) -> np.ndarray:
    """ Max-log LLRs of Gray QAM symbols observed as ``y = gain * s + n``.

        For every bit the LLR is the smallest scaled distance
        ``|y - gain * s|**2 / sigma2`` to a point whose bit is one minus the
        smallest distance to a point whose bit is zero, so positive values
        favour ``0``.

        :param y: Observed complex symbols, at least one dimensional.
        :param gain: Real or complex gain, broadcast against ``y``.
        :param sigma2: Positive noise variance, broadcast against ``y``.
        :returns: LLRs with ``m`` values per symbol, flattened into the last
            axis (``y.shape[:-1] + (y.shape[-1] * m,)``).
    """
    const = get_constellation(m)
    y = np.atleast_1d(np.asarray(y, dtype=np.complex128))
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ConfigError("Noise variance must be positive for soft demapping")
    gain = np.broadcast_to(np.asarray(gain), y.shape)
    sigma2 = np.broadcast_to(sigma2, y.shape)
    dist = np.abs(y[..., None] - gain[..., None] * const.points) ** 2 / sigma2[..., None]
    ones = const.labels.T.astype(bool)  # (m, M)
    d1 = np.min(np.where(ones, dist[..., None, :], np.inf), axis=-1)
    d0 = np.min(np.where(~ones, dist[..., None, :], np.inf), axis=-1)
    return (d1 - d0).reshape(y.shape[:-1] + (y.shape[-1] * m,))


##############################################################################
########################### Learned cross-layer pair #########################
##############################################################################


class CrossLayerModulator:
    """ Learned joint modulator and demodulator for ``bits_per_re`` bits on
        ``n_layer`` layers.

        The modulator is a stack of ``n_dense`` ReLU dense layers followed by
        a dense layer to ``2 * n_layer`` reals (real parts, then imaginary
        parts) and a batch-scope unit-power normalization. The demodulator is
        a pointwise convolution to ``demod_width`` channels, ``n_res``
        residual blocks (batch-norm, ReLU, convolution, twice) and an output
        convolution to ``bits_per_re`` logits. Its input is the equalized
        per-RE vector, again as real parts then imaginary parts.

        :param bits_per_re: Bits mapped onto one RE (``m * n_layer``).
        :param n_layer: Number of spatial layers.
        :param width: Modulator hidden width.
        :param n_dense: Number of hidden modulator layers.
        :param demod_width: Demodulator channel count.
        :param n_res: Number of residual blocks in the demodulator.
        :param seed: Initialization seed; the demodulator uses ``seed + 1``.
    """

    def __init__(self, bits_per_re: int, n_layer: int, width=256, n_dense=4, demod_width=256,
                 n_res=4, seed=0):
        if bits_per_re < 1 or n_layer < 1:
            raise ConfigError(f"Invalid modulator size: {bits_per_re} bits on {n_layer} layers")
        self.bits_per_re = int(bits_per_re)
        self.n_layer = int(n_layer)
        dim = 2 * self.n_layer

        nodes, fan_in = [], self.bits_per_re
        for _ in range(n_dense):
            nodes += [Dense(fan_in, width), Activation("relu")]
            fan_in = width
        nodes += [Dense(fan_in, dim), UnitPower("batch")]
        self.mod_graph = Graph(nodes, (self.bits_per_re,), name="modulator", seed=seed)

        nodes = [Conv1x1(dim, demod_width)]
        for _ in range(n_res):
            nodes.append(Residual([BatchNorm(demod_width), Activation("relu"),
                                   Conv1x1(demod_width, demod_width),
                                   BatchNorm(demod_width), Activation("relu"),
                                   Conv1x1(demod_width, demod_width)]))
        nodes.append(Conv1x1(demod_width, self.bits_per_re))
        self.demod_graph = Graph(nodes, (dim,), name="demodulator", seed=seed + 1)

    @classmethod
    def from_graphs(cls, mod_graph: Graph, demod_graph: Graph) -> "CrossLayerModulator":
        self = cls.__new__(cls)
        self.mod_graph, self.demod_graph = mod_graph, demod_graph
        self.bits_per_re = mod_graph.input_shape[-1]
        self.n_layer = mod_graph.output_shape[-1] // 2
        if demod_graph.input_shape != (2 * self.n_layer,) or demod_graph.output_shape[-1] != self.bits_per_re:
            raise ShapeError(f"Demodulator {demod_graph.input_shape}->{demod_graph.output_shape} does "
                             f"not match modulator {mod_graph.input_shape}->{mod_graph.output_shape}")
        return self

    def __repr__(self):
        return f"CrossLayerModulator(bits_per_re={self.bits_per_re}, n_layer={self.n_layer})"

    @property
    def normalization(self) -> UnitPower:
        return self.mod_graph.nodes[-1]

    def _check_bits(self, bits):
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[1] != self.bits_per_re:
            raise ShapeError(f"Node 'input' of graph 'modulator' expects bits (n_re, {self.bits_per_re}), "
                             f"got {bits.shape}")
        return bits

    ###### Differentiable path

    def modulate_tensor(self, bits, mode="train") -> Tensor:
        """ Modulator output ``(n_re, 2 * n_layer)`` as a tensor. """
        bits = self._check_bits(bits)
        return self.mod_graph.forward(1.0 - 2.0 * bits.astype(np.float64), mode)

    def demodulate_tensor(self, equalized: Tensor, mode="train") -> Tensor:
        """ Demodulator logits ``(n_re, bits_per_re)``; a positive logit
            favours bit ``1``. """
        return self.demod_graph.forward(equalized, mode)

    ###### Inference

    def modulate(self, bits) -> np.ndarray:
        """ Map bits ``(n_re, bits_per_re)`` to complex symbols
            ``(n_re, n_layer)``. Before :meth:`freeze_normalization` the
            power is normalized over the given batch. """
        out = self.modulate_tensor(bits, mode="infer").data
        return out[:, :self.n_layer] + 1j * out[:, self.n_layer:]

    def demodulate(self, equalized) -> np.ndarray:
        """ LLRs ``(n_re, bits_per_re)`` of equalized symbols ``(n_re, n_layer)``. """
        equalized = np.asarray(equalized)
        if equalized.ndim != 2 or equalized.shape[1] != self.n_layer:
            raise ShapeError(f"Node 'input' of graph 'demodulator' expects (n_re, {self.n_layer}) "
                             f"symbols, got {equalized.shape}")
        features = np.concatenate([equalized.real, equalized.imag], axis=1)
        return -self.demod_graph.predict(features)

    def constellation(self) -> Tuple[np.ndarray, np.ndarray]:
        """ Enumerate the learned constellation.

            :returns: ``(points, labels)`` with points ``(2**bits_per_re,
                n_layer)`` and MSB-first label rows.
            :raises EnumerationLimitError: More than ``ENUMERATION_LIMIT`` points.
        """
        labels = bit_patterns(self.bits_per_re)
        return self.modulate(labels), labels

    def freeze_normalization(self):
        """ Fix the normalization power used at inference.

            Small constellations are enumerated so that the frozen power is
            exact; larger ones keep the running estimate gathered during
            training.
        """
        norm = self.normalization
        if 2 ** self.bits_per_re <= ENUMERATION_LIMIT:
            x = 1.0 - 2.0 * bit_patterns(self.bits_per_re).astype(np.float64)
            with no_grad():
                h = Tensor(x)
                for node in self.mod_graph.nodes[:-1]:
                    h = node.forward(h, "infer")
            power = float(np.mean(np.sum(h.data ** 2, axis=-1)))
            norm.freeze(power)
        else:
            norm.freeze()
        log.info("Frozen modulator normalization power %.6g", float(norm.buffers["running_power"]))

    def unfreeze_normalization(self):
        self.normalization.unfreeze()


def count_params_and_flops(graph: Graph) -> Tuple[int, int]:
    """ Trainable parameter count and per-sample FLOPs of a graph (two per
        multiply-accumulate of dense, convolution and attention layers;
        bias, normalization and activation work is not counted). """
    return graph.count_parameters(), graph.count_flops()


def dump_constellation(points, labels, path):
    """ Write a constellation as CSV: bit pattern, then real and imaginary
        coordinates per layer. """
    points = np.asarray(points).reshape(len(labels), -1)
    with open(path, "w", newline="", encoding="utf8") as fp:
        writer = csv.writer(fp)
        header = ["bits"]
        for i in range(points.shape[1]):
            header += [f"re{i}", f"im{i}"]
        writer.writerow(header)
        for label, point in zip(labels, points):
            row = ["".join(str(int(b)) for b in label)]
            for value in point:
                row += [repr(float(value.real)), repr(float(value.imag))]
            writer.writerow(row)
