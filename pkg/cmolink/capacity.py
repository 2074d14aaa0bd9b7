# -*- coding: utf-8 -*-
"""
Constellation analysis: Monte-Carlo BICM capacity over AWGN, per-bit
likelihood ratios, and the sphere-packing approximations used to compare
high-dimensional learned constellations with cubic QAM lattices.

Noise convention: ``sigma2`` is the complex noise variance per complex
dimension (``E|n|**2``), constellations have unit mean total power, so
``Es/N0 = 1 / sigma2``.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import log_expit, logsumexp

from .errors import ConfigError, EnumerationLimitError, ShapeError
from .modulation import (ENUMERATION_LIMIT, CrossLayerModulator, bit_patterns, bits_to_int,
                         dump_constellation, qam_modulate)
from .utils import STREAM_NOISE, derive_rng

__all__ = ["ConstellationSet", "CapacityEstimate", "bicm_capacity_mc", "llr_ratio",
           "bce_capacity_consistency", "sphere_min_distance", "sphere_power", "qam_cube_power",
           "shaping_gain_ratio", "SHAPING_GAIN_LIMIT", "empirical_min_distance",
           "sampled_min_distance", "analyze", "write_analysis"]

log = logging.getLogger(__name__)

#: Ultimate shaping gain of a sphere over a cube, ``pi * e / 6`` (1.53 dB).
SHAPING_GAIN_LIMIT = math.pi * math.e / 6.0

_LN2 = math.log(2.0)
_CHUNK_ELEMENTS = 1 << 22


class ConstellationSet:
    """ Labeled points of a (possibly multi-layer) constellation.

        :param points: Complex ``(M, N)`` array, one row per point on ``N``
            layers; a one-dimensional array is read as ``N = 1``.
        :param labels: ``(M, m)`` bit rows with ``M = 2**m``; defaults to the
            MSB-first binary labels of the row index.
        :param name: Identifier used in analysis output.
    """

    def __init__(self, points, labels=None, name="constellation"):
        points = np.asarray(points, dtype=np.complex128)
        if points.ndim == 1:
            points = points[:, None]
        m = int(round(math.log2(len(points)))) if len(points) else 0
        if len(points) < 2 or 2 ** m != len(points):
            raise ShapeError(f"A constellation needs 2**m >= 2 points, got {len(points)}")
        if not np.all(np.isfinite(points)):
            raise ShapeError("Constellation has non-finite coordinates")
        labels = bit_patterns(m) if labels is None else np.asarray(labels, dtype=np.uint8)
        if labels.shape != (len(points), m):
            raise ShapeError(f"Labels {labels.shape} do not match {len(points)} points")
        if len(np.unique(bits_to_int(labels))) != len(points):
            raise ShapeError("Constellation labels are not unique")
        self.points = points
        self.labels = labels
        self.name = name

    def __repr__(self):
        return f"ConstellationSet({self.name!r}, M={self.size}, N={self.n_layer})"

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    @property
    def n_layer(self) -> int:
        return self.points.shape[1]

    @property
    def power(self) -> float:
        return float(np.mean(np.sum(np.abs(self.points) ** 2, axis=1)))

    def real_coordinates(self) -> np.ndarray:
        """ Points as ``(M, 2N)`` real vectors. """
        return np.concatenate([self.points.real, self.points.imag], axis=1)

    def subset(self, bit: int, value: int) -> np.ndarray:
        """ Row indices of the points whose ``bit``-th label bit equals ``value``. """
        return np.flatnonzero(self.labels[:, bit] == value)

    @classmethod
    def from_qam(cls, m: int, n_layer=1) -> "ConstellationSet":
        """ Independent Gray ``2**m``-QAM on every layer, scaled to unit
            total power. Label bits are layer 0 first. """
        labels = bit_patterns(m * n_layer)
        points = qam_modulate(labels, m) / math.sqrt(n_layer)
        return cls(points, labels, name=f"qam{2 ** m}x{n_layer}")

    @classmethod
    def from_modulator(cls, modulator: CrossLayerModulator, name="learned") -> "ConstellationSet":
        points, labels = modulator.constellation()
        return cls(points, labels, name=name)

    def to_csv(self, path):
        dump_constellation(self.points, self.labels, path)

    @classmethod
    def from_csv(cls, path, name=None) -> "ConstellationSet":
        """ Read a constellation written by :meth:`to_csv`. """
        try:
            with open(path, newline="", encoding="utf8") as fp:
                rows = list(csv.reader(fp))
        except OSError as e:
            raise ConfigError(f"Cannot read constellation file {path}: {e}") from e
        if len(rows) < 2 or rows[0][0] != "bits":
            raise ConfigError(f"{path} is not a constellation CSV file")
        try:
            labels = np.array([[int(c) for c in row[0]] for row in rows[1:]], dtype=np.uint8)
            coords = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        except ValueError as e:
            raise ConfigError(f"Malformed constellation file {path}: {e}") from e
        points = coords[:, 0::2] + 1j * coords[:, 1::2]
        return cls(points, labels, name=name or str(path))


def _check_enumerable(cs: ConstellationSet):
    if cs.size > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"Constellation with {cs.size} points exceeds the exhaustive "
                                    f"enumeration limit of {ENUMERATION_LIMIT}")


def _log_likelihoods(cs: ConstellationSet, y: np.ndarray, sigma2: float) -> np.ndarray:
    # log p(y|x) up to a constant shared by all points: -||y - x||^2 / sigma2
    d = y[:, None, :] - cs.points[None, :, :]
    return -np.sum(d.real ** 2 + d.imag ** 2, axis=-1) / sigma2


def _bit_log_sums(cs: ConstellationSet, y: np.ndarray, sigma2: float) -> np.ndarray:
    """ ``(S, m, 2)`` log-sums of likelihoods over the points with bit
        ``i`` equal to ``0`` and ``1``. """
    ll = _log_likelihoods(cs, y, sigma2)
    masks = np.stack([cs.labels.T == 0, cs.labels.T == 1], axis=-1)  # (m, M, 2)
    return np.stack([logsumexp(ll[:, None, :], axis=-1, b=masks[None, :, :, b].astype(float))
                     for b in (0, 1)], axis=-1)


def _draw(cs: ConstellationSet, sigma2: float, count: int, offset: int, rng) -> Tuple[np.ndarray, np.ndarray]:
    # Stratified transmit indices, every point equally often up to one.
    tx = (np.arange(count) + offset) % cs.size
    noise = (rng.standard_normal((count, cs.n_layer)) + 1j * rng.standard_normal((count, cs.n_layer)))
    return tx, cs.points[tx] + math.sqrt(sigma2 / 2.0) * noise


def _chunks(cs: ConstellationSet, count: int):
    step = max(1, _CHUNK_ELEMENTS // (cs.size * max(cs.m, 1)))
    for start in range(0, count, step):
        yield start, min(count, start + step)


def _shard_terms(cs, sigma2, count, offset, rng) -> Tuple[np.ndarray, np.ndarray]:
    """ Per-sample capacity loss (bits) from the likelihood definition and
        from the bitwise cross-entropy of the exact posteriors. """
    tx, y = _draw(cs, sigma2, count, offset, rng)
    definition = np.empty(count)
    from_bce = np.empty(count)
    bits = cs.labels[tx].astype(bool)  # (S, m)
    for lo, hi in _chunks(cs, count):
        sums = _bit_log_sums(cs, y[lo:hi], sigma2)
        total = np.logaddexp(sums[..., 0], sums[..., 1])
        own = np.where(bits[lo:hi], sums[..., 1], sums[..., 0])
        definition[lo:hi] = np.sum(total - own, axis=-1) / _LN2
        llr = sums[..., 0] - sums[..., 1]
        nll = np.where(bits[lo:hi], -log_expit(-llr), -log_expit(llr))
        from_bce[lo:hi] = np.sum(nll, axis=-1) / _LN2
    return definition, from_bce


class CapacityEstimate(NamedTuple):
    #: BICM capacity estimate in bits per channel use.
    value: float
    #: Standard error of the Monte-Carlo mean.
    stderr: float
    samples: int


def _run_shards(cs, sigma2, samples, seed, shards, workers):
    _check_enumerable(cs)
    if sigma2 <= 0:
        raise ConfigError("Noise variance must be positive")
    if samples < 1 or shards < 1:
        raise ConfigError("Need at least one sample and one shard")
    counts = [samples // shards + (1 if i < samples % shards else 0) for i in range(shards)]
    offsets = np.cumsum([0] + counts[:-1])

    def job(i):
        return _shard_terms(cs, float(sigma2), counts[i], int(offsets[i]),
                            derive_rng(seed, STREAM_NOISE, i))

    if workers and workers > 1 and shards > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(shards)))
    else:
        parts = [job(i) for i in range(shards)]
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def bicm_capacity_mc(cs: ConstellationSet, sigma2: float, samples=100_000, seed=0, shards=1,
                     workers: Optional[int] = None) -> CapacityEstimate:
    """ Monte-Carlo BICM capacity over complex AWGN.

        ``C = m - E[ sum_i log2( sum_{x} p(y|x) / sum_{x in X_{b_i}} p(y|x) ) ]``
        where ``b_i`` is the transmitted value of bit ``i`` and bits are
        equiprobable. All sums are evaluated in the log domain.

        :param cs: Constellation with at most ``ENUMERATION_LIMIT`` points.
        :param sigma2: Complex noise variance.
        :param samples: Total number of noisy observations.
        :param seed: Root seed; shard ``i`` uses stream ``(seed, noise, i)``.
        :param shards: Independent sample shards, aggregated in order.
        :param workers: Thread pool size for the shards.
        :raises EnumerationLimitError: Too many points.
    """
    loss, _ = _run_shards(cs, sigma2, samples, seed, shards, workers)
    value = cs.m - float(np.mean(loss))
    stderr = float(np.std(loss, ddof=1) / math.sqrt(len(loss))) if len(loss) > 1 else float("nan")
    log.debug("BICM capacity of %s at sigma2=%g: %.4f +- %.4f", cs.name, sigma2, value, stderr)
    return CapacityEstimate(value, stderr, len(loss))


def bce_capacity_consistency(cs: ConstellationSet, sigma2: float, samples=100_000, seed=0,
                             shards=1) -> Tuple[float, float]:
    """ Capacity on identical samples computed twice: as ``m`` minus the
        summed binary cross-entropy (base 2) of the exact bit posteriors, and
        from the likelihood-ratio definition.

        :returns: ``(from_bce, from_definition)``
    """
    definition, from_bce = _run_shards(cs, sigma2, samples, seed, shards, None)
    return cs.m - float(np.mean(from_bce)), cs.m - float(np.mean(definition))


def llr_ratio(cs: ConstellationSet, y, bit: int, value: int, sigma2: float) -> float:
    """ Likelihood ratio ``sum_{X_{1-b}} p(y|x) / sum_{X_b} p(y|x)`` of the
        ``bit``-th label bit at observation ``y``, clipped to
        ``exp(+-700)``. """
    _check_enumerable(cs)
    if not 0 <= bit < cs.m or value not in (0, 1):
        raise ConfigError(f"Invalid bit {bit} / value {value} for a {cs.m}-bit constellation")
    y = np.asarray(y, dtype=np.complex128).reshape(1, cs.n_layer)
    ll = _log_likelihoods(cs, y, sigma2)[0]
    other = logsumexp(ll[cs.subset(bit, 1 - value)])
    own = logsumexp(ll[cs.subset(bit, value)])
    return float(np.exp(np.clip(other - own, -700.0, 700.0)))


##############################################################################
############################## Sphere geometry ###############################
##############################################################################


def sphere_min_distance(n: int, m_points: int) -> float:
    """ Sphere-packing approximation ``sqrt(N + 1) * M ** (-1 / (2N))`` of the
        minimum distance of ``M`` unit-power points on ``N`` complex
        dimensions. An approximation, not a bound. """
    if n < 1 or m_points < 2:
        raise ConfigError("Need N >= 1 and M >= 2")
    return math.sqrt(n + 1) * m_points ** (-1.0 / (2 * n))


def sphere_power(radius: float, n: int) -> float:
    """ Mean power ``R**2 / (N + 1)`` of a uniform ball in ``2N`` real dimensions. """
    if radius <= 0:
        raise ConfigError("Radius must be positive")
    return radius ** 2 / (n + 1)


def qam_cube_power(radius: float) -> float:
    """ Mean power per real dimension ``R**2 / 12`` of a uniform interval of
        width ``R``. """
    if radius <= 0:
        raise ConfigError("Radius must be positive")
    return radius ** 2 / 12.0


def shaping_gain_ratio(n: int) -> float:
    """ Power advantage ``pi (N + 1) / (6 (N!) ** (1/N))`` of a ``2N``-ball
        over a cube of equal volume; increases towards
        ``SHAPING_GAIN_LIMIT``. """
    if n < 1:
        raise ConfigError("Need N >= 1")
    return math.pi * (n + 1) / (6.0 * math.exp(math.lgamma(n + 1) / n))


def empirical_min_distance(cs: ConstellationSet) -> float:
    """ Exact minimum pairwise Euclidean distance. """
    _check_enumerable(cs)
    return float(np.min(pdist(cs.real_coordinates())))


def sampled_min_distance(points, max_points=ENUMERATION_LIMIT, seed=0) -> float:
    """ Minimum distance over a random subset of at most ``max_points``
        points; an upper estimate for constellations too large to
        enumerate. """
    points = np.asarray(points, dtype=np.complex128)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) > max_points:
        rng = derive_rng(seed)
        points = points[rng.choice(len(points), max_points, replace=False)]
        log.warning("Minimum distance estimated from %d sampled points (approximate)", max_points)
    coords = np.concatenate([points.real, points.imag], axis=1)
    return float(np.min(pdist(coords)))


##############################################################################
################################## Analysis ##################################
##############################################################################

ANALYSIS_FIELDS = ("constellation", "sigma2", "capacity", "stderr", "d_min", "sphere_d_min")


def analyze(cs: ConstellationSet, sigma2_grid, samples=100_000, seed=0, shards=1,
            workers: Optional[int] = None) -> List[dict]:
    """ Capacity and distance summary of one constellation over a noise grid. """
    d_min = empirical_min_distance(cs)
    approx = sphere_min_distance(cs.n_layer, cs.size)
    rows = []
    for sigma2 in sigma2_grid:
        est = bicm_capacity_mc(cs, sigma2, samples, seed, shards, workers)
        rows.append({"constellation": cs.name, "sigma2": float(sigma2), "capacity": est.value,
                     "stderr": est.stderr, "d_min": d_min, "sphere_d_min": approx})
        log.info("%s sigma2=%g capacity=%.4f", cs.name, sigma2, est.value)
    return rows


def write_analysis(rows, path):
    with open(path, "w", newline="", encoding="utf8") as fp:
        writer = csv.DictWriter(fp, fieldnames=ANALYSIS_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
