# -*- coding: utf-8 -*-
"""
Monte-Carlo sweeps over sets of links, genie and agent-driven link
adaptation, scenario presets and result files.

Trial ``t`` at SNR index ``i`` draws its channel (and bits) from
``(seed, channel stream, t)`` and its noise from
``(seed, noise stream, t, i)``. Every link of a sweep therefore sees the
same channels and noise, and a sweep is fully determined by its links,
grid, trial count and root seed.
"""

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
import platform
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy

from .agent import select_scheme
from .channel import Numerology
from .errors import ConfigError, MissingArtifactError
from .link import LinkConfig, run_trial, sinr_features
from .models import load_models, missing_files
from .modulation import QAM_ORDERS
from .utils import STREAM_CHANNEL, STREAM_NOISE, ConfigMixin, config_hash, derive_seed

__all__ = ["SweepConfig", "SweepPoint", "LinkAdaptationPoint", "run_sweep", "ideal_link_adaptation",
           "scenario_preset", "baseline_candidates", "snr_at_bler", "snr_gain_db",
           "throughput_gain", "check_confidence", "write_results", "write_link_adaptation",
           "PRESETS", "MIN_TRIALS"]

log = logging.getLogger(__name__)

PRESETS = ("cmo1", "cmo2", "cmo3", "baseline5g")

#: Sweeps with fewer trials per point still run, with a warning.
MIN_TRIALS = 100

_Z95 = 1.959963984540054

_QAM_NAMES = {2: "QPSK", 4: "16QAM", 6: "64QAM", 8: "256QAM"}


@dataclass(frozen=True)
class SweepConfig(ConfigMixin):
    """ A sweep as stored in a configuration file. """

    preset: str = "baseline5g"
    payload: int = 8
    scale: str = "desk"
    dl_snr_db: Tuple[float, ...] = (0.0, 4.0, 8.0, 12.0, 16.0)
    ul_snr_db: Tuple[Optional[float], ...] = (None,)
    trials: int = 200
    seed: int = 0
    workers: Optional[int] = None
    model_path: Optional[str] = None
    detector: str = "lmmse"
    profile: str = "CDL-C"
    delay_spread: float = 300e-9
    agent_path: Optional[str] = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"Unknown preset {self.preset!r}, expected one of {', '.join(PRESETS)}")
        if self.scale not in ("desk", "full"):
            raise ConfigError(f"Scale must be 'desk' or 'full', got {self.scale!r}")
        if self.trials < 1:
            raise ConfigError("A sweep needs at least one trial per point")
        if not self.dl_snr_db or not self.ul_snr_db:
            raise ConfigError("SNR grids must not be empty")

    def links(self) -> List[LinkConfig]:
        return scenario_preset(self.preset, payload=self.payload, scale=self.scale,
                               model_path=self.model_path, detector=self.detector,
                               profile=self.profile, delay_spread=self.delay_spread)


@dataclass
class SweepPoint:
    link: str
    config_hash: str
    dl_snr_db: float
    ul_snr_db: Optional[float]
    trials: int
    block_errors: int
    bler: float
    goodput: float
    #: Half width of the 95% normal-approximation interval on ``bler``.
    ci_half_width: float
    seed: int


@dataclass
class LinkAdaptationPoint:
    dl_snr_db: float
    ul_snr_db: Optional[float]
    trials: int
    #: Mean goodput of every candidate, in candidate order.
    candidates: List[float]
    ideal: float
    agent: Optional[float] = None
    #: Fraction of trials on which the agent picked the genie choice.
    agreement: Optional[float] = None


def _ci_half_width(bler: float, trials: int) -> float:
    return _Z95 * math.sqrt(max(bler * (1.0 - bler), 0.0) / trials)


def _trial_seeds(seed: int, trial: int, snr_index: int):
    return derive_seed(seed, STREAM_CHANNEL, trial), derive_seed(seed, STREAM_NOISE, trial, snr_index)


def _prepare(links: Sequence[LinkConfig]):
    """ Validate every link and load its models before anything runs. """
    names = [link.name for link in links]
    if len(set(names)) != len(names):
        raise ConfigError(f"Link names must be unique, got {names}")
    return [link.load_models() for link in links]


def _check_trials(trials: int):
    if trials < 1:
        raise ConfigError("At least one trial per point is required")
    if trials < MIN_TRIALS:
        log.warning("Only %d trials per point; BLER below %.3g is not resolved",
                    trials, 1.0 / trials)


def run_sweep(links: Sequence[LinkConfig], dl_snr_db: Sequence[float], trials: int, seed=0,
              ul_snr_db: Sequence[Optional[float]] = (None,), workers: Optional[int] = None) -> List[SweepPoint]:
    """ BLER and goodput of every link at every (downlink, uplink) SNR pair.

        :param links: Links to simulate; names must be unique.
        :param dl_snr_db: Downlink SNR grid.
        :param trials: Independent slots per point.
        :param seed: Root seed.
        :param ul_snr_db: Uplink SNR grid; ``None`` delivers feedback ideally.
        :param workers: Thread pool size (``None``: executor default).
    """
    links = list(links)
    models = _prepare(links)
    _check_trials(trials)
    grid = [(i, dl, ul) for i, dl in enumerate(dl_snr_db) for ul in ul_snr_db]
    points = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for link, link_models in zip(links, models):
            digest = config_hash(link)
            for i, dl, ul in grid:
                def job(t, i=i, dl=dl, ul=ul, link=link, link_models=link_models):
                    return run_trial(link, *_trial_seeds(seed, t, i), dl, ul, link_models)

                results = list(pool.map(job, range(trials)))
                errors = sum(int(r.block_error) for r in results)
                bler = errors / trials
                goodput = float(sum(r.goodput for r in results)) / trials
                point = SweepPoint(link.name, digest, float(dl), ul, trials, errors, bler, goodput,
                                   _ci_half_width(bler, trials), int(seed))
                log.info("%s @ %.1f dB (UL %s): BLER %.4f +- %.4f, goodput %.4f bits/RE",
                         link.name, dl, "ideal" if ul is None else f"{ul:.1f} dB", bler,
                         point.ci_half_width, goodput)
                points.append(point)
    check_confidence(points)
    return points


def check_confidence(points: Sequence[SweepPoint]) -> List[Tuple[float, Optional[float]]]:
    """ Warn about SNR points where two links differ in BLER by less than
        twice the larger confidence half width. Returns those points. """
    groups: Dict[Tuple[float, Optional[float]], List[SweepPoint]] = {}
    for point in points:
        groups.setdefault((point.dl_snr_db, point.ul_snr_db), []).append(point)
    flagged = []
    for key, group in groups.items():
        for a, b in itertools.combinations(group, 2):
            effect = abs(a.bler - b.bler)
            margin = max(a.ci_half_width, b.ci_half_width)
            if effect > 0 and margin > effect / 2:
                log.warning("BLER difference %.4f between %s and %s at %.1f dB is within "
                            "Monte-Carlo noise (+-%.4f); increase the trial count",
                            effect, a.link, b.link, key[0], margin)
                flagged.append(key)
                break
    return flagged


def ideal_link_adaptation(candidates: Sequence[LinkConfig], dl_snr_db: Sequence[float], trials: int,
                          seed=0, ul_snr_db: Optional[float] = None, agent=None,
                          workers: Optional[int] = None) -> List[LinkAdaptationPoint]:
    """ Genie link adaptation: per trial, the goodput of the best candidate.

        All candidates and the optional control agent see the same trials,
        so the per-candidate, genie and agent curves are directly comparable.

        :param agent: Optional :class:`~cmolink.agent.AgentModel`; its choice
            per trial is made from the per-layer SINR of the realization.
    """
    candidates = list(candidates)
    if not candidates:
        raise ConfigError("Link adaptation needs at least one candidate")
    models = _prepare(candidates)
    _check_trials(trials)
    rows = []

    def job(t, i, dl):
        channel_seed, noise_seed = _trial_seeds(seed, t, i)
        goodput = np.array([run_trial(link, channel_seed, noise_seed, dl, ul_snr_db, m).goodput
                            for link, m in zip(candidates, models)])
        choice = None
        if agent is not None:
            choice = select_scheme(agent, sinr_features(candidates[0], channel_seed, dl, agent.n_layer))
        return goodput, choice

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for i, dl in enumerate(dl_snr_db):
            results = list(pool.map(lambda t: job(t, i, dl), range(trials)))
            goodput = np.array([g for g, _ in results])  # (trials, J)
            row = LinkAdaptationPoint(float(dl), ul_snr_db, trials, goodput.mean(axis=0).tolist(),
                                      float(goodput.max(axis=1).mean()))
            if agent is not None:
                choices = np.array([c for _, c in results])
                row.agent = float(goodput[np.arange(trials), choices].mean())
                row.agreement = float(np.mean(choices == np.argmax(goodput, axis=1)))
            log.info("Link adaptation @ %.1f dB: ideal %.4f, best single %.4f, agent %s",
                     dl, row.ideal, max(row.candidates),
                     "-" if row.agent is None else f"{row.agent:.4f}")
            rows.append(row)
    return rows


##
### Presets
##


def _numerology(scale: str) -> Numerology:
    if scale == "desk":
        return Numerology.desk()
    if scale == "full":
        return Numerology()
    raise ConfigError(f"Scale must be 'desk' or 'full', got {scale!r}")


def baseline_candidates(payload: int, numerology: Numerology, detector="lmmse", **fixed) -> List[LinkConfig]:
    """ Every Gray QAM and layer-count factorization of ``payload`` that
        fits the antenna configuration, each with quantized CSI and eigen
        precoding. """
    max_layers = min(numerology.n_tx, numerology.n_rx)
    links = []
    for m in QAM_ORDERS:
        n_l, rest = divmod(payload, m)
        if rest or not 1 <= n_l <= max_layers:
            continue
        links.append(LinkConfig(name=f"{_QAM_NAMES[m]}x{n_l}", modulation="qam", qam_order=m,
                                n_layer=n_l, precoding="eigen", csi="quantized", payload=payload,
                                numerology=numerology, detector=detector, uplink="cmo2c", **fixed))
    if not links:
        raise ConfigError(f"No QAM order and layer count carry {payload} bits/RE on "
                          f"{max_layers} layers")
    return links


def scenario_preset(name: str, payload=8, scale="desk", model_path=None, detector="lmmse",
                    **fixed) -> List[LinkConfig]:
    """ Candidate links of a named scenario.

        ``baseline5g`` returns every QAM factorization of ``payload``;
        ``cmo1`` and ``cmo2`` return the learned link with bit-form CSI
        feedback, ``cmo3`` the learned link with symbol-form feedback. The
        learned presets use 4 layers at full scale and 2 at desk scale.

        :param fixed: Further :class:`LinkConfig` fields (SNRs, code rate,
            channel profile).
        :raises MissingArtifactError: The learned models are not available.
    """
    num = _numerology(scale)
    if name == "baseline5g":
        return baseline_candidates(payload, num, detector, **fixed)
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset {name!r}, expected one of {', '.join(PRESETS)}")
    if model_path is None:
        raise ConfigError(f"Preset {name!r} needs a model path")
    missing = missing_files(model_path)
    if missing:
        raise MissingArtifactError(missing)

    n_layer = 4 if scale == "full" else 2
    if name == "cmo3":
        csi, uplink = "learned-symbols", "symbols"
    else:
        csi, uplink = "learned-bits", "cmo2c"
    link = LinkConfig(name=name, modulation="learned", n_layer=n_layer, precoding="learned", csi=csi,
                      payload=payload, numerology=num, detector="lmmse", uplink=uplink,
                      model_path=str(model_path), **fixed)
    models = load_models(str(model_path))
    link.check_models(models)
    if name in ("cmo2", "cmo3") and models.progress["phase"] < 2:
        log.warning("Preset %s expects models trained through phase 2, %s only completed phase %d",
                    name, model_path, models.progress["phase"])
    return [link]


##
### Curve comparison
##


def snr_at_bler(snr_db: Sequence[float], bler: Sequence[float], target=0.1) -> float:
    """ SNR at which a BLER curve first falls to ``target``, interpolated
        linearly in ``log10(BLER)``. ``nan`` if the curve never gets there. """
    snr = np.asarray(snr_db, dtype=float)
    bler = np.asarray(bler, dtype=float)
    if snr.shape != bler.shape or not len(snr):
        raise ConfigError("SNR and BLER curves must have the same non-zero length")
    order = np.argsort(snr)
    snr, bler = snr[order], bler[order]
    if bler[0] <= target:
        return float(snr[0])
    log_target = math.log10(target)
    for k in range(1, len(snr)):
        if bler[k] <= target:
            hi = math.log10(max(bler[k], 1e-12))
            lo = math.log10(bler[k - 1])
            if lo == hi:
                return float(snr[k])
            frac = (lo - log_target) / (lo - hi)
            return float(snr[k - 1] + frac * (snr[k] - snr[k - 1]))
    return math.nan


def snr_gain_db(snr_db: Sequence[float], bler_a: Sequence[float], bler_b: Sequence[float],
                target=0.1) -> float:
    """ SNR saved by curve ``a`` over curve ``b`` at ``target`` BLER. """
    return snr_at_bler(snr_db, bler_b, target) - snr_at_bler(snr_db, bler_a, target)


def throughput_gain(goodput_a, goodput_b) -> np.ndarray:
    """ Relative goodput gain of ``a`` over ``b``, pointwise (``inf`` where
        ``b`` delivers nothing but ``a`` does, ``0`` where both are zero). """
    a = np.asarray(goodput_a, dtype=float)
    b = np.asarray(goodput_b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(b > 0, a / np.where(b > 0, b, 1.0) - 1.0, np.where(a > 0, np.inf, 0.0))
    return gain


##
### Result files
##


def git_revision(path=None) -> Optional[str]:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=path or os.getcwd(),
                             capture_output=True, text=True, timeout=10, check=True)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def _manifest(configs: Dict[str, dict], seed, extra: Optional[dict]) -> dict:
    from . import __version__

    manifest = {"configs": configs, "seed": seed,
                "versions": {"cmolink": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__, "python": platform.python_version()},
                "git": git_revision()}
    manifest.update(extra or {})
    return manifest


def _write_json(path, data):
    with open(path, "w", encoding="utf8") as fp:
        json.dump(data, fp, indent=2, sort_keys=True, default=str)


def write_results(points: Sequence[SweepPoint], path, links: Sequence[LinkConfig] = (),
                  extra: Optional[dict] = None) -> Tuple[str, str]:
    """ Write one CSV row per sweep point and a JSON run manifest next to
        it (same stem, ``.json``) with the link configurations keyed by
        their hash, the root seed, package versions and the git revision. """
    fields = [f.name for f in dataclasses.fields(SweepPoint)]
    with open(path, "w", newline="", encoding="utf8") as fp:
        writer = csv.DictWriter(fp, fieldnames=fields)
        writer.writeheader()
        for point in points:
            writer.writerow(dataclasses.asdict(point))
    seeds = sorted({p.seed for p in points})
    manifest_path = os.path.splitext(str(path))[0] + ".json"
    configs = {config_hash(link): link.to_dict() for link in links}
    _write_json(manifest_path, _manifest(configs, seeds[0] if len(seeds) == 1 else seeds, extra))
    return str(path), manifest_path


def write_link_adaptation(rows: Sequence[LinkAdaptationPoint], path, candidates: Sequence[LinkConfig],
                          seed=0, extra: Optional[dict] = None) -> Tuple[str, str]:
    names = [c.name for c in candidates]
    with open(path, "w", newline="", encoding="utf8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["dl_snr_db", "ul_snr_db", "trials"] + names + ["ideal", "agent", "agreement"])
        for row in rows:
            writer.writerow([row.dl_snr_db, row.ul_snr_db, row.trials] + row.candidates +
                            [row.ideal, row.agent, row.agreement])
    manifest_path = os.path.splitext(str(path))[0] + ".json"
    configs = {config_hash(c): c.to_dict() for c in candidates}
    _write_json(manifest_path, _manifest(configs, seed, extra))
    return str(path), manifest_path
