# -*- coding: utf-8 -*-
"""
MIMO detection for the equalized link ``y = Heq x + n``: linear minimum mean
square error (LMMSE) and zero-forcing equalizers, and a breadth-first K-Best
tree search.

All detectors operate on stacks: ``heq`` has shape ``(..., n_rx, n_layer)``
and ``y`` has shape ``(..., n_rx)``, one entry per resource element.
"""

from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError, SingularMatrixError
from .linalg import SINGULAR_COND, solve_hermitian_plus_diag
from .modulation import QamConstellation

__all__ = ["EqualizerOutput", "KBestResult", "lmmse_equalize", "lmmse_filter", "zf_equalize",
           "kbest_detect", "per_layer_sinr_db", "SINR_MAX", "KBEST_LLR_CLIP"]


#: Upper clip for post-equalization SINR (noiseless or interference-free cases).
SINR_MAX = 1e12
KBEST_LLR_CLIP = 15.0


class EqualizerOutput(NamedTuple):
    #: Equalized symbols ``(..., n_layer)``.
    x_hat: np.ndarray
    #: Linear post-equalization SINR per layer ``(..., n_layer)``.
    post_sinr: np.ndarray


class KBestResult(NamedTuple):
    #: Label integer of the detected point per layer ``(..., n_layer)``.
    indices: np.ndarray
    #: Detected symbols ``(..., n_layer)``.
    symbols: np.ndarray
    #: List max-log LLRs ``(..., n_layer * m)``, positive favouring ``0``.
    llr: np.ndarray
    #: Metric ``|Q^H y - R x|**2`` of the best surviving path ``(...)``.
    cost: np.ndarray


def _check(heq, y):
    heq = np.asarray(heq, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if heq.ndim < 2 or y.shape != heq.shape[:-1]:
        raise ShapeError(f"Observation {y.shape} does not match channel {heq.shape}")
    return heq, y


def _hermitian(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _sinr_from_error(err_diag):
    err_diag = np.real(err_diag)
    with np.errstate(divide="ignore"):
        sinr = np.where(err_diag > 0, 1.0 / np.maximum(err_diag, 1e-300) - 1.0, SINR_MAX)
    return np.clip(sinr, 0.0, SINR_MAX)


def lmmse_filter(heq, sigma2):
    """ LMMSE filter ``W = (Heq^H Heq + sigma2 I)^-1 Heq^H`` and the error
        covariance diagonal ``e_ii`` of ``E = sigma2 (Heq^H Heq + sigma2 I)^-1``.

        The push-through identity makes ``W`` equal to
        ``Heq^H (Heq Heq^H + sigma2 I)^-1``; the ``n_layer``-sized solve is
        the smaller one.
    """
    heq = np.asarray(heq, dtype=np.complex128)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    gram = _hermitian(heq) @ heq
    eye = np.broadcast_to(np.eye(heq.shape[-1]), gram.shape)
    inverse = solve_hermitian_plus_diag(gram, sigma2, eye.astype(np.complex128))
    w = inverse @ _hermitian(heq)
    err = sigma2.reshape(sigma2.shape + (1,)) * np.diagonal(inverse, axis1=-2, axis2=-1)
    return w, np.real(err)


def lmmse_equalize(heq, y, sigma2) -> EqualizerOutput:
    """ LMMSE equalization ``x_hat = Heq^H (Heq Heq^H + sigma2 I)^-1 y``.

        :param heq: Effective channel ``(..., n_rx, n_layer)``.
        :param y: Received vectors ``(..., n_rx)``.
        :param sigma2: Noise variance, scalar or one per entry of the stack.
        :returns: :class:`EqualizerOutput` with ``post_sinr = 1 / e_ii - 1``.
        :raises SingularMatrixError: ``sigma2 == 0`` and ``heq`` is
            rank-deficient.
    """
    heq, y = _check(heq, y)
    w, err = lmmse_filter(heq, sigma2)
    x_hat = (w @ y[..., None])[..., 0]
    return EqualizerOutput(x_hat, _sinr_from_error(err))


def zf_equalize(heq, y, sigma2=None) -> EqualizerOutput:
    """ Zero-forcing equalization ``x_hat = pinv(Heq) y``.

        :param sigma2: Optional noise variance; when given the post-SINR is
            ``1 / (sigma2 [(Heq^H Heq)^-1]_ii)``, otherwise it is reported as
            ``SINR_MAX``.
        :raises SingularMatrixError: ``heq`` lacks full column rank.
    """
    heq, y = _check(heq, y)
    gram = _hermitian(heq) @ heq
    cond = np.linalg.cond(gram)
    if np.any(~np.isfinite(cond)) or np.any(cond > SINGULAR_COND):
        raise SingularMatrixError("Zero-forcing needs a channel with full column rank")
    inverse = np.linalg.inv(gram)
    x_hat = (inverse @ _hermitian(heq) @ y[..., None])[..., 0]
    if sigma2 is None:
        sinr = np.full(x_hat.shape, SINR_MAX)
    else:
        noise = np.asarray(sigma2, dtype=np.float64)[..., None] * np.real(np.diagonal(inverse, axis1=-2, axis2=-1))
        with np.errstate(divide="ignore"):
            sinr = np.clip(np.where(noise > 0, 1.0 / np.maximum(noise, 1e-300), SINR_MAX), 0.0, SINR_MAX)
    return EqualizerOutput(x_hat, sinr)


def per_layer_sinr_db(post_sinr, floor_db=-30.0) -> np.ndarray:
    """ Mean linear SINR per layer over all resource elements, in dB.

        :param post_sinr: Linear SINR ``(..., n_layer)`` or an
            :class:`EqualizerOutput`.
    """
    if isinstance(post_sinr, EqualizerOutput):
        post_sinr = post_sinr.post_sinr
    post_sinr = np.asarray(post_sinr, dtype=np.float64)
    mean = post_sinr.reshape(-1, post_sinr.shape[-1]).mean(axis=0)
    return np.maximum(10.0 * np.log10(np.maximum(mean, 1e-300)), floor_db)


##############################################################################
################################### K-Best ###################################
##############################################################################


def kbest_detect(heq, y, constellation: QamConstellation, k=16, sigma2=1.0) -> KBestResult:
    """ Breadth-first K-Best detection.

        The system is triangularized with a QR decomposition and searched from
        the last layer to the first, keeping the ``k`` partial paths with the
        smallest accumulated metric at every level (ties resolved by
        expansion order). With ``k >= len(constellation) ** n_layer`` the
        search is exhaustive and the result is the maximum-likelihood point.

        LLRs use list max-log over the surviving paths; when no survivor has
        the opposite bit value the LLR is set to ``+-KBEST_LLR_CLIP``.
    """
    if k < 1:
        raise ConfigError(f"K-Best list size must be at least 1, got {k}")
    heq, y = _check(heq, y)
    n_rx, n_l = heq.shape[-2:]
    if n_rx < n_l:
        raise ShapeError(f"K-Best needs n_rx >= n_layer, got {n_rx} x {n_l}")
    batch_shape = heq.shape[:-2]
    h = heq.reshape((-1, n_rx, n_l))
    q, r = np.linalg.qr(h)
    z = (_hermitian(q) @ y.reshape(-1, n_rx)[..., None])[..., 0]
    points = constellation.points
    size = len(points)
    nb = h.shape[0]
    rows = np.arange(nb)[:, None]

    paths = np.zeros((nb, 1, 0), dtype=np.int64)  # indices for layers level..n_l-1
    cost = np.zeros((nb, 1))
    for level in range(n_l - 1, -1, -1):
        known = points[paths]  # (nb, P, depth)
        interference = np.einsum("bd,bpd->bp", r[:, level, level + 1:], known)
        residual = z[:, level, None, None] - interference[..., None] - r[:, level, level, None, None] * points
        expanded = cost[..., None] + np.abs(residual) ** 2  # (nb, P, M)
        flat = expanded.reshape(nb, -1)
        keep = min(k, flat.shape[1])
        order = np.argsort(flat, axis=1, kind="stable")[:, :keep]
        parent, symbol = np.divmod(order, size)
        paths = np.concatenate([symbol[..., None], paths[rows, parent]], axis=-1)
        cost = flat[rows, order]

    labels = constellation.labels[paths]  # (nb, K, n_l, m)
    labels = labels.reshape(nb, paths.shape[1], -1).astype(bool)
    metric = cost[..., None] / np.asarray(sigma2, dtype=np.float64).reshape(-1, 1, 1)
    d1 = np.min(np.where(labels, metric, np.inf), axis=1)
    d0 = np.min(np.where(~labels, metric, np.inf), axis=1)
    llr = np.clip(d1 - d0, -KBEST_LLR_CLIP, KBEST_LLR_CLIP)
    llr = np.where(np.isinf(d1), KBEST_LLR_CLIP, np.where(np.isinf(d0), -KBEST_LLR_CLIP, llr))

    best = paths[:, 0]
    m = constellation.m
    return KBestResult(best.reshape(batch_shape + (n_l,)),
                       points[best].reshape(batch_shape + (n_l,)),
                       llr.reshape(batch_shape + (n_l * m,)),
                       cost[:, 0].reshape(batch_shape))
