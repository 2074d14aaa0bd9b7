# -*- coding: utf-8 -*-
"""
Cross-module training of the learned link.

The differentiable chain is modulator, CSI encoder, (noisy) feedback, CSI
decoder, precoding, per-trial power normalization, a sampled channel with
additive noise, LMMSE equalization and the demodulator. Channel coding is
left out of the gradient path. Phase 1 minimizes
``lambda * BCE - (1 - lambda) * SGCS`` with ``lambda = 0.5``; phase 2 drops
the SGCS term (``lambda = 1``) and continues from the phase-1 state,
optimizer moments included. Phase 3 (the control agent) lives in
:mod:`cmolink.agent`.
"""

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .autodiff import Adam, ComplexTensor, Tensor, complex_solve, concat, no_grad
from .channel import MixedProfile, Numerology, get_profile, sample_channel, snr_to_noise_variance
from .csi import extract_csi, sgcs_tensor
from .errors import ConfigError, DivergenceError, ShapeError
from .link import LinkConfig, run_trial
from .models import LinkModels
from .modulation import QAM_ORDERS, qam_modulate
from .precoding import Precoder, apply_precoding_tensor, transmit_power_tensor
from .utils import STREAM_BATCH, STREAM_CHANNEL, STREAM_NOISE, ConfigMixin, derive_rng, derive_seed

__all__ = ["TrainConfig", "PhaseReport", "Batch", "loss_combined", "draw_batch", "forward_link",
           "train_phase", "train_phase1", "train_phase2", "evaluate_end_to_end"]

log = logging.getLogger(__name__)

# Batch counter reserved for the fixed validation batches.
_VALIDATION_PHASE = 0


@dataclass(frozen=True)
class TrainConfig(ConfigMixin):
    """ Training schedule of phases 1 and 2.

        :param lambda1: Loss weight of phase 1.
        :param lambda2: Loss weight of phase 2.
        :param batch_size: Channel realizations (trials) per step.
        :param re_per_trial: Resource elements sampled from each trial.
        :param snr_db: Downlink SNR range; each trial draws uniformly from it.
        :param ul_snr_db: Optional uplink SNR range; symbol-form feedback then
            sees additive noise after uplink combining.
        :param profiles: Channel profile names; several names (or delay
            spreads) train on a uniform mixture.
        :param steps: Maximum steps per phase.
        :param patience: Stop when the smoothed loss has not improved by
            ``min_delta`` for this many steps (0 disables early stopping).
        :param fixed_modulation: Replace the learned modulator by Gray QAM
            (``bits_per_re / n_layer`` bits per layer); only the CSI codec
            and the demodulator train.
        :param checkpoint_every: Steps between checkpoints (0 disables).
    """

    numerology: Numerology = Numerology.desk()
    profiles: Tuple[str, ...] = ("CDL-C",)
    delay_spreads: Tuple[float, ...] = (300e-9,)
    lambda1: float = 0.5
    lambda2: float = 1.0
    batch_size: int = 64
    re_per_trial: int = 32
    snr_db: Tuple[float, float] = (-4.0, 16.0)
    ul_snr_db: Optional[Tuple[float, float]] = None
    steps: int = 20000
    patience: int = 2000
    min_delta: float = 1e-4
    lr: float = 1e-3
    seed: int = 0
    fixed_modulation: bool = False
    checkpoint_every: int = 0
    eval_batches: int = 4
    log_every: int = 100

    _nested = {"numerology": Numerology}

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"TrainConfig.{name} must lie in [0, 1]")
        for name in ("snr_db", "ul_snr_db"):
            value = getattr(self, name)
            if value is not None and (len(value) != 2 or value[0] > value[1]):
                raise ConfigError(f"TrainConfig.{name} must be a range [lo, hi] with lo <= hi")
        if self.batch_size < 1 or self.steps < 0 or self.eval_batches < 1:
            raise ConfigError("Batch size and validation batches must be positive, steps non-negative")
        if not 1 <= self.re_per_trial <= self.numerology.n_re:
            raise ConfigError(f"Cannot sample {self.re_per_trial} of {self.numerology.n_re} REs per trial")
        if not self.profiles or not self.delay_spreads:
            raise ConfigError("At least one channel profile and delay spread are required")
        if self.lr <= 0:
            raise ConfigError("Learning rate must be positive")

    def lambda_for(self, phase: int) -> float:
        if phase not in (1, 2):
            raise ConfigError(f"Phases 1 and 2 train the link, got phase {phase}")
        return self.lambda1 if phase == 1 else self.lambda2

    def channel_profile(self):
        profiles = tuple(get_profile(name, ds) for name in self.profiles for ds in self.delay_spreads)
        if len(profiles) == 1:
            return profiles[0]
        return MixedProfile(profiles, (1.0,) * len(profiles))


@dataclass
class PhaseReport:
    phase: int
    lam: float
    seed: int
    #: Training loss of every step.
    losses: List[float] = field(default_factory=list)
    #: Combined loss on the validation batches before and after the phase.
    initial_loss: float = math.nan
    initial_bce: float = math.nan
    final_loss: float = math.nan
    final_bce: float = math.nan
    final_sgcs: float = math.nan
    wall_clock: float = 0.0
    stopped_early: bool = False
    start_step: int = 0

    def summary(self) -> dict:
        return {"phase": self.phase, "lambda": self.lam, "seed": self.seed,
                "steps": len(self.losses), "start_step": self.start_step,
                "initial_loss": self.initial_loss, "initial_bce": self.initial_bce,
                "final_loss": self.final_loss,
                "final_bce": self.final_bce, "final_sgcs": self.final_sgcs,
                "wall_clock": self.wall_clock, "stopped_early": self.stopped_early}

    def write(self, directory) -> Tuple[str, str]:
        """ Write ``phase<N>.csv`` (loss trace) and ``phase<N>.json`` (summary). """
        os.makedirs(directory, exist_ok=True)
        trace = os.path.join(directory, f"phase{self.phase}.csv")
        with open(trace, "w", newline="", encoding="utf8") as fp:
            writer = csv.writer(fp)
            writer.writerow(["step", "loss"])
            for i, loss in enumerate(self.losses):
                writer.writerow([self.start_step + i + 1, repr(loss)])
        summary = os.path.join(directory, f"phase{self.phase}.json")
        with open(summary, "w", encoding="utf8") as fp:
            json.dump(self.summary(), fp, indent=2)
        return trace, summary


##
### Loss
##


def _precoder_vectors(p) -> ComplexTensor:
    if isinstance(p, ComplexTensor):
        return p
    if isinstance(p, Precoder):
        p = p.as_vectors()
    elif hasattr(p, "w"):
        p = p.w
    return ComplexTensor.constant(np.asarray(p, dtype=np.complex128))


def loss_combined(bits, logits, w, p, lam: float) -> Tensor:
    """ ``lam * BCE - (1 - lam) * SGCS``.

        :param bits: Transmitted bits, any shape.
        :param logits: Demodulator logits of the same shape (a positive
            logit favours ``1``; this is the negated LLR).
        :param w: True CSI vectors ``(..., n_subbands, size)`` or a
            :class:`~cmolink.csi.CsiMatrix`.
        :param p: Precoder vectors as a :class:`ComplexTensor`, a
            :class:`~cmolink.precoding.Precoder` or an array.
        :param lam: Weight in ``[0, 1]``.

        BCE is the natural-log binary cross-entropy averaged over every bit
        position; SGCS is averaged over subbands and trials.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"Loss weight must lie in [0, 1], got {lam}")
    bits = np.asarray(bits, dtype=np.float64)
    z = logits if isinstance(logits, Tensor) else Tensor(np.asarray(logits, dtype=np.float64))
    if bits.shape != z.shape:
        raise ShapeError(f"Bits {bits.shape} and logits {z.shape} differ")
    bce = (z.softplus() - z * bits).mean()
    similarity = sgcs_tensor(getattr(w, "w", w), _precoder_vectors(p))
    return bce * lam - similarity * (1.0 - lam)


##
### Batches and the differentiable link
##


@dataclass
class Batch:
    """ One training batch; everything random is drawn up front so that the
        forward pass is a deterministic function of the parameters. """

    bits: np.ndarray  # (batch, n_re, bits_per_re)
    h: np.ndarray  # (batch, n_re, n_rx, n_tx)
    subband: np.ndarray  # (n_re,)
    csi: np.ndarray  # (batch, n_subbands, n_tx * n_layer)
    noise: np.ndarray  # (batch, n_re, n_rx), unit variance
    sigma2: np.ndarray  # (batch,)
    ul_noise: Optional[np.ndarray] = None  # (batch, n_symbols, 2), unit variance per complex symbol
    ul_sigma2: Optional[np.ndarray] = None  # (batch,)


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_batch(config: TrainConfig, models: LinkModels, rng: np.random.Generator) -> Batch:
    num = config.numerology
    mc = models.config
    b, n_re = config.batch_size, config.re_per_trial
    profile = config.channel_profile()

    idx = np.sort(rng.choice(num.n_re, size=n_re, replace=False))
    f, t = np.divmod(idx, num.n_symbols)
    h, csi = [], []
    for _ in range(b):
        channel = sample_channel(profile, num, rng)
        h.append(channel.per_re()[f, t])
        csi.append(extract_csi(channel, mc.n_layer).w)

    bits = rng.integers(0, 2, size=(b, n_re, mc.bits_per_re), dtype=np.uint8)
    snr = rng.uniform(config.snr_db[0], config.snr_db[1], size=b)
    sigma2 = np.array([snr_to_noise_variance(s) for s in snr])
    noise = _cn(rng, (b, n_re, num.n_rx))
    batch = Batch(bits, np.stack(h), num.subband_of()[f], np.stack(csi), noise, sigma2)
    if config.ul_snr_db is not None and models.codec.form == "symbols":
        ul_snr = rng.uniform(config.ul_snr_db[0], config.ul_snr_db[1], size=b)
        batch.ul_sigma2 = np.array([snr_to_noise_variance(s) for s in ul_snr])
        batch.ul_noise = rng.standard_normal((b, models.codec.n_symbols, 2)) / np.sqrt(2.0)
    return batch


def _symbols(models: LinkModels, bits: np.ndarray, mode: str, fixed_modulation: bool) -> ComplexTensor:
    b, n_re, n_bits = bits.shape
    n_l = models.config.n_layer
    if fixed_modulation:
        m = n_bits // n_l
        if m * n_l != n_bits or m not in QAM_ORDERS:
            raise ConfigError(f"No QAM order maps {n_bits} bits onto {n_l} layers")
        return ComplexTensor.constant(qam_modulate(bits, m))
    out = models.modulator.modulate_tensor(bits.reshape(b * n_re, n_bits), mode)
    out = out.reshape(b, n_re, 2 * n_l)
    return ComplexTensor(out[..., :n_l], out[..., n_l:])


def forward_link(models: LinkModels, batch: Batch, mode="train",
                 fixed_modulation=False) -> Tuple[Tensor, ComplexTensor]:
    """ Run the differentiable link on a batch.

        :returns: ``(logits, precoder_vectors)`` with logits
            ``(batch, n_re, bits_per_re)`` and precoder vectors
            ``(batch, n_subbands, n_tx * n_layer)``.
    """
    codec = models.codec
    b, n_re, _ = batch.bits.shape
    n_l = models.config.n_layer

    s = _symbols(models, batch.bits, mode, fixed_modulation)  # (b, n_re, n_l)

    payload = codec.encode_tensor(batch.csi, mode)
    if batch.ul_noise is not None:
        payload = payload + batch.ul_noise * np.sqrt(batch.ul_sigma2)[:, None, None]
    vectors = codec.decode_tensor(payload, mode)  # (b, n_sb, n_tx * n_l)
    n_sb, size = vectors.shape[1:]
    p = vectors.reshape(b, n_sb, n_l, size // n_l).transpose(0, 1, 3, 2)  # (b, n_sb, n_tx, n_l)

    x = apply_precoding_tensor(p, s, batch.subband)  # (b, n_re, n_tx)
    scale = transmit_power_tensor(x).sqrt()  # (b, 1)
    x = x / scale.reshape(b, 1, 1)
    h = ComplexTensor.constant(batch.h)
    noise = batch.noise * np.sqrt(batch.sigma2)[:, None, None]
    y = (h @ x.reshape(b, n_re, -1, 1)).reshape(b, n_re, -1) + noise

    heq = (h @ p[:, batch.subband]) / scale.reshape(b, 1, 1, 1)  # (b, n_re, n_rx, n_l)
    gram = heq.H @ heq
    eye = np.eye(n_l)[None, None] * np.maximum(batch.sigma2, 1e-10)[:, None, None, None]
    x_hat = complex_solve(gram + eye, heq.H @ y.reshape(b, n_re, -1, 1)).reshape(b * n_re, n_l)

    features = concat([x_hat.re, x_hat.im], axis=-1)
    logits = models.modulator.demodulate_tensor(features, mode)
    return logits.reshape(b, n_re, -1), vectors


##
### Phases
##


def _parameters(models: LinkModels, fixed_modulation: bool):
    graphs = models.graphs
    if fixed_modulation:
        graphs = [g for g in graphs if g is not models.modulator.mod_graph]
    return [p for g in graphs for p in g.parameters()]


def _validation(models, config, lam) -> Tuple[float, float, float]:
    loss = bce = sim = 0.0
    for i in range(config.eval_batches):
        batch = draw_batch(config, models, derive_rng(config.seed, STREAM_BATCH, _VALIDATION_PHASE, i))
        with no_grad():
            logits, vectors = forward_link(models, batch, "infer", config.fixed_modulation)
            bce += loss_combined(batch.bits, logits, batch.csi, vectors, 1.0).data
            sim -= loss_combined(batch.bits, logits, batch.csi, vectors, 0.0).data
    n = config.eval_batches
    bce, sim = float(bce) / n, float(sim) / n
    return lam * bce - (1.0 - lam) * sim, bce, sim


def train_phase(models: LinkModels, config: TrainConfig, phase: int, lam: Optional[float] = None,
                checkpoint_dir=None, callback: Optional[Callable[[int, float], None]] = None) -> PhaseReport:
    """ Run (or resume) one link training phase.

        :param phase: 1 or 2. Phase 2 requires a completed phase 1.
        :param lam: Override of the phase's loss weight.
        :param checkpoint_dir: Where to save the models every
            ``checkpoint_every`` steps and at the end of the phase.
        :param callback: Called with ``(step, loss)`` after each step.
        :raises DivergenceError: The loss became non-finite.
    """
    lam = config.lambda_for(phase) if lam is None else float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"Loss weight must lie in [0, 1], got {lam}")
    done = models.progress["phase"]
    if done >= phase:
        raise ConfigError(f"Phase {phase} has already been completed for these models")
    if done < phase - 1:
        raise ConfigError(f"Phase {phase} needs phase {phase - 1} completed first")
    if models.numerology != config.numerology:
        raise ConfigError("Models and training configuration use different numerologies")
    start = models.progress["step"]

    params = _parameters(models, config.fixed_modulation)
    optimizer = Adam(params, lr=config.lr)
    if models.optimizer_state:
        optimizer.load_state_dict(models.optimizer_state)
        optimizer.lr = config.lr
    models.modulator.unfreeze_normalization()

    report = PhaseReport(phase, lam, config.seed, start_step=start)
    report.initial_loss, report.initial_bce, _ = _validation(models, config, lam)
    log.info("Phase %d (lambda=%.2f) starting at step %d, validation loss %.5f",
             phase, lam, start, report.initial_loss)
    began = time.perf_counter()

    smoothed, best, since_best = None, math.inf, 0
    for step in range(start, config.steps):
        batch = draw_batch(config, models, derive_rng(config.seed, STREAM_BATCH, phase, step))
        optimizer.zero_grad()
        logits, vectors = forward_link(models, batch, "train", config.fixed_modulation)
        loss = loss_combined(batch.bits, logits, batch.csi, vectors, lam)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(f"Loss became non-finite in phase {phase} at step {step + 1}")
        loss.backward()
        optimizer.step()
        report.losses.append(value)
        models.progress["step"] = step + 1
        if callback:
            callback(step + 1, value)
        if config.log_every and (step + 1) % config.log_every == 0:
            log.info("Phase %d step %d: loss %.5f", phase, step + 1, value)

        if config.checkpoint_every and checkpoint_dir and (step + 1) % config.checkpoint_every == 0:
            models.optimizer_state = optimizer.state_dict()
            models.save(checkpoint_dir)

        smoothed = value if smoothed is None else 0.99 * smoothed + 0.01 * value
        if smoothed < best - config.min_delta:
            best, since_best = smoothed, 0
        else:
            since_best += 1
        if config.patience and since_best >= config.patience:
            log.info("Phase %d stopped early at step %d: no improvement for %d steps",
                     phase, step + 1, config.patience)
            report.stopped_early = True
            break

    models.modulator.freeze_normalization()
    models.optimizer_state = optimizer.state_dict()
    models.progress = {"phase": phase, "step": 0}
    report.wall_clock = time.perf_counter() - began
    report.final_loss, report.final_bce, report.final_sgcs = _validation(models, config, lam)
    log.info("Phase %d done: loss %.5f -> %.5f, BCE %.5f, SGCS %.4f",
             phase, report.initial_loss, report.final_loss, report.final_bce, report.final_sgcs)
    if checkpoint_dir:
        models.save(checkpoint_dir)
    return report


def train_phase1(models: LinkModels, config: TrainConfig, **kwargs) -> PhaseReport:
    """ Joint pre-convergence of all four models with ``config.lambda1``. """
    return train_phase(models, config, 1, **kwargs)


def train_phase2(models: LinkModels, config: TrainConfig, **kwargs) -> PhaseReport:
    """ Objective relaxation with ``config.lambda2``, continuing phase 1. """
    return train_phase(models, config, 2, **kwargs)


##
### Evaluation
##


def evaluate_end_to_end(models: Optional[LinkModels], link: LinkConfig, trials: int, seed=0,
                        dl_snr_db=None, ul_snr_db=None) -> Tuple[float, float]:
    """ Monte-Carlo block error rate and goodput (information bits per RE)
        of ``link`` with LDPC coding in place.

        Trial ``i`` uses the channel seed ``(seed, channel stream, i)`` and
        the noise seed ``(seed, noise stream, i)``.
    """
    if trials < 1:
        raise ConfigError("At least one trial is required")
    if models is not None:
        link.check_models(models)
    errors, goodput = 0, 0.0
    for i in range(trials):
        result = run_trial(link, derive_seed(seed, STREAM_CHANNEL, i), derive_seed(seed, STREAM_NOISE, i),
                           dl_snr_db, ul_snr_db, models)
        errors += result.block_error
        goodput += result.goodput
    return errors / trials, goodput / trials
