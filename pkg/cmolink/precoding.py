# -*- coding: utf-8 -*-
"""
Per-subband precoding of layer-mapped symbols and slot-wide transmit power
normalization, in plain numpy for the simulator and as tensors for training.
"""

import logging
from typing import TYPE_CHECKING, List

import numpy as np

from .autodiff import ComplexTensor, Tensor
from .channel import Numerology
from .errors import ShapeError, ZeroVectorError

if TYPE_CHECKING:  # pragma: no cover
    from .csi import CsiMatrix

__all__ = ["Precoder", "eigen_precoder", "apply_precoding", "normalize_power",
           "apply_precoding_tensor", "normalize_power_tensor", "transmit_power_tensor", "pruned_layers",
           "PRUNE_THRESHOLD"]

log = logging.getLogger(__name__)

#: Column norm below which a layer counts as not transmitted.
PRUNE_THRESHOLD = 1e-6


class Precoder:
    """ One ``n_tx x n_layer`` complex matrix per subband.

        :param matrices: Array ``(n_subbands, n_tx, n_layer)``.
    """

    def __init__(self, matrices):
        matrices = np.asarray(matrices, dtype=np.complex128)
        if matrices.ndim != 3:
            raise ShapeError(f"Precoder expects (n_subbands, n_tx, n_layer), got {matrices.shape}")
        if not np.all(np.isfinite(matrices)):
            raise ShapeError("Precoder has non-finite entries")
        self.matrices = matrices

    def __repr__(self):
        return "Precoder(n_subbands={}, n_tx={}, n_layer={})".format(*self.matrices.shape)

    def __getitem__(self, subband):
        return self.matrices[subband]

    def __len__(self):
        return len(self.matrices)

    @property
    def n_tx(self) -> int:
        return self.matrices.shape[1]

    @property
    def n_layer(self) -> int:
        return self.matrices.shape[2]

    def as_vectors(self) -> np.ndarray:
        """ Layer-major column concatenation ``(n_subbands, n_tx * n_layer)``,
            the layout of :class:`cmolink.csi.CsiMatrix` rows. """
        return np.swapaxes(self.matrices, 1, 2).reshape(len(self), -1)

    @classmethod
    def from_vectors(cls, vectors, n_layer: int) -> "Precoder":
        vectors = np.asarray(vectors)
        n_sb, size = vectors.shape
        if size % n_layer:
            raise ShapeError(f"Vector length {size} is not a multiple of {n_layer} layers")
        return cls(np.swapaxes(vectors.reshape(n_sb, n_layer, size // n_layer), 1, 2))


def eigen_precoder(csi: "CsiMatrix") -> Precoder:
    """ Use the fed back eigenvectors directly as precoder columns. """
    return Precoder.from_vectors(csi.w, csi.n_layer)


def _check_grid(p_shape, s_shape, num: Numerology):
    n_sb, n_tx, n_l = p_shape
    if n_sb != num.n_subbands or n_tx != num.n_tx:
        raise ShapeError(f"Precoder {p_shape} does not match numerology "
                         f"({num.n_subbands} subbands, {num.n_tx} tx antennas)")
    if tuple(s_shape) != (n_l, num.n_subcarriers, num.n_symbols):
        raise ShapeError(f"Layer grid {tuple(s_shape)} does not match "
                         f"{(n_l, num.n_subcarriers, num.n_symbols)}")


def apply_precoding(p: Precoder, s, num: Numerology) -> np.ndarray:
    """ ``x[:, f, t] = P[subband(f)] @ s[:, f, t]``.

        :param s: Layer grid ``(n_layer, n_subcarriers, n_symbols)``.
        :returns: Transmit grid ``(n_tx, n_subcarriers, n_symbols)``.
    """
    s = np.asarray(s)
    _check_grid(p.matrices.shape, s.shape, num)
    per_sc = p.matrices[num.subband_of()]  # (n_sc, n_tx, n_l)
    return np.einsum("ftl,lfs->tfs", per_sc, s)


def normalize_power(x) -> np.ndarray:
    """ Scale a transmit grid ``(n_tx, n_subcarriers, n_symbols)`` to unit
        mean per-RE total power, summed over antennas.

        :raises ZeroVectorError: The grid is all zeros.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"Transmit grid must be (n_tx, n_subcarriers, n_symbols), got {x.shape}")
    power = np.sum(np.abs(x) ** 2) / (x.shape[1] * x.shape[2])
    if power <= 0:
        raise ZeroVectorError("Cannot normalize an all-zero transmit grid")
    return x / np.sqrt(power)


def pruned_layers(p: Precoder, threshold=PRUNE_THRESHOLD) -> List[int]:
    """ Layers whose precoder column norm stays below ``threshold`` on every
        subband, i.e. layers that carry no power. """
    norms = np.linalg.norm(p.matrices, axis=1)  # (n_sb, n_l)
    pruned = [int(i) for i in np.flatnonzero(np.all(norms < threshold, axis=0))]
    if pruned:
        log.info("Precoder transmits no power on layers %s", pruned)
    return pruned


###### Tensor versions


def apply_precoding_tensor(p: ComplexTensor, s: ComplexTensor, subband: np.ndarray) -> ComplexTensor:
    """ Differentiable precoding of a batch of sampled REs.

        :param p: Precoders ``(batch, n_subbands, n_tx, n_layer)``.
        :param s: Symbols ``(batch, n_re, n_layer)``.
        :param subband: Subband index of each RE ``(n_re,)``.
        :returns: Transmit vectors ``(batch, n_re, n_tx)``.
    """
    per_re = p[:, subband]  # (batch, n_re, n_tx, n_l)
    col = s.reshape(s.shape + (1,))
    x = per_re @ col
    return x.reshape(x.shape[:-1])


def transmit_power_tensor(x: ComplexTensor) -> Tensor:
    """ Mean per-RE total power of each trial of ``(batch, n_re, n_tx)``,
        shaped ``(batch, 1)``. """
    power = x.abs2().sum(axis=-1).mean(axis=-1, keepdims=True)
    if np.any(power.data <= 0):
        raise ZeroVectorError("Cannot normalize an all-zero transmit grid")
    return power


def normalize_power_tensor(x: ComplexTensor) -> ComplexTensor:
    """ Per-trial version of :func:`normalize_power` for ``(batch, n_re, n_tx)``. """
    power = transmit_power_tensor(x)
    return x / power.sqrt().reshape(power.shape + (1,))
