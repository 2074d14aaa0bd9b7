# -*- coding: utf-8 -*-
"""
The control agent: a small classifier mapping per-layer post-equalization
SINR to one of ``J`` candidate links.

Labels come from exhaustive evaluation (the candidate with the highest
goodput on a channel realization wins, lowest index on ties). The model is
trained with categorical cross-entropy and stored together with its
candidate registry and feature statistics, so both link ends can load the
same artifact.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Activation, Adam, BatchNorm, Dense, Graph, Tensor, load_arrays, save_graph
from .errors import ConfigError, DivergenceError, ShapeError
from .link import LinkConfig, run_trial, sinr_features
from .utils import (STREAM_BATCH, STREAM_CHANNEL, STREAM_NOISE, STREAM_SNR, ConfigMixin,
                    derive_rng, derive_seed)

__all__ = ["AgentConfig", "AgentModel", "AgentDataset", "evaluate_candidates", "generate_labels",
           "train_agent", "select_scheme"]

log = logging.getLogger(__name__)

_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class AgentConfig(ConfigMixin):
    """ Training settings of the control agent. """

    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-2
    validation_fraction: float = 0.2
    hidden_factor: int = 4
    seed: int = 0
    log_every: int = 200

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.hidden_factor < 1:
            raise ConfigError("Agent steps must be non-negative, batch size and width positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("Validation fraction must lie in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("Learning rate must be positive")


##
### Dataset
##


class AgentDataset:
    """ SINR features ``(rows, n_layer)`` in dB and class labels ``(rows,)``
        out of ``n_classes`` candidates. """

    def __init__(self, features, labels, n_classes: int):
        self.features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self.n_classes = int(n_classes)
        if len(self.features) != len(self.labels):
            raise ShapeError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("Agent features must be finite")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError(f"Labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def __repr__(self):
        return f"AgentDataset(rows={len(self)}, n_layer={self.n_layer}, n_classes={self.n_classes})"

    @property
    def n_layer(self) -> int:
        return self.features.shape[1]

    @property
    def one_hot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]

    def subset(self, rows) -> "AgentDataset":
        return AgentDataset(self.features[rows], self.labels[rows], self.n_classes)

    def to_csv(self, path):
        """ One row per realization: ``sinr_<i>`` columns then a one-hot
            ``label_<j>`` block. """
        with open(path, "w", newline="", encoding="utf8") as fp:
            writer = csv.writer(fp)
            writer.writerow([f"sinr_{i}" for i in range(self.n_layer)] +
                            [f"label_{j}" for j in range(self.n_classes)])
            for q, v in zip(self.features, self.one_hot):
                writer.writerow([repr(float(x)) for x in q] + [int(x) for x in v])

    @classmethod
    def from_csv(cls, path) -> "AgentDataset":
        try:
            with open(path, "r", newline="", encoding="utf8") as fp:
                rows = list(csv.reader(fp))
        except OSError as e:
            raise ConfigError(f"Cannot read agent dataset {path}: {e}") from e
        if not rows:
            raise ConfigError(f"Agent dataset {path} is empty")
        header = rows[0]
        n_layer = sum(1 for name in header if name.startswith("sinr_"))
        n_classes = len(header) - n_layer
        data = np.array(rows[1:], dtype=np.float64).reshape(-1, len(header))
        one_hot = data[:, n_layer:]
        if np.any(one_hot.sum(axis=1) != 1) or np.any((one_hot != 0) & (one_hot != 1)):
            raise ConfigError(f"Agent dataset {path} has labels that are not one-hot")
        return cls(data[:, :n_layer], np.argmax(one_hot, axis=1), n_classes)


##
### Model
##


class AgentModel:
    """ Dense (``4 n_layer`` ReLU units), batch normalization, dense
        (``J`` units) and softmax.

        :param n_layer: Length of the SINR feature vector.
        :param candidates: The ``J >= 2`` selectable links, in label order.
    """

    def __init__(self, n_layer: int, candidates: Sequence[LinkConfig], hidden_factor=4, seed=0):
        self.candidates = list(candidates)
        if len(self.candidates) < 2:
            raise ConfigError("The control agent needs at least two candidate links")
        self.n_layer = int(n_layer)
        hidden = hidden_factor * self.n_layer
        nodes = [Dense(self.n_layer, hidden), Activation("relu"), BatchNorm(hidden),
                 Dense(hidden, len(self.candidates)), Activation("softmax")]
        self.graph = Graph(nodes, (self.n_layer,), name="agent", seed=seed)
        self.mean = np.zeros(self.n_layer)
        self.std = np.ones(self.n_layer)
        self.train_accuracy = math.nan
        self.val_accuracy = math.nan

    def __repr__(self):
        return f"AgentModel(n_layer={self.n_layer}, candidates={len(self.candidates)})"

    def __len__(self):
        return len(self.candidates)

    def standardize(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.n_layer:
            raise ShapeError(f"Node 'input' of graph 'agent' expects {self.n_layer} SINR values, "
                             f"got {features.shape}")
        return (features - self.mean) / self.std

    def logits(self, features, mode="infer") -> Tensor:
        """ Pre-softmax outputs of standardized ``features``. """
        h = Tensor(self.standardize(features))
        for node in self.graph.nodes[:-1]:
            h = node.forward(h, mode)
        return h

    def probabilities(self, features) -> np.ndarray:
        return self.graph.predict(self.standardize(features))

    def accuracy(self, data: AgentDataset) -> float:
        if not len(data):
            return math.nan
        return float(np.mean(select_scheme(self, data.features) == data.labels))

    ###### Persistence

    def save(self, path) -> str:
        meta = {"candidates": [c.to_dict() for c in self.candidates],
                "mean": self.mean.tolist(), "std": self.std.tolist(),
                "train_accuracy": self.train_accuracy, "val_accuracy": self.val_accuracy}
        return save_graph(self.graph, path, meta)

    @classmethod
    def load(cls, path) -> "AgentModel":
        arrays, meta = load_arrays(path)
        try:
            candidates = [LinkConfig.from_dict(c) for c in meta["candidates"]]
            graph = Graph.from_config(meta["graph"])
            self = cls.__new__(cls)
            self.candidates, self.graph = candidates, graph
            self.n_layer = graph.input_shape[0]
            self.mean, self.std = np.asarray(meta["mean"]), np.asarray(meta["std"])
        except KeyError as e:
            raise ConfigError(f"{path} is not an agent artifact (lacks {e})") from e
        graph.load_state_dict(arrays)
        self.train_accuracy = meta.get("train_accuracy", math.nan)
        self.val_accuracy = meta.get("val_accuracy", math.nan)
        return self


def select_scheme(model: AgentModel, q) -> Union[int, np.ndarray]:
    """ Index of the candidate with the highest softmax output (lowest index
        on ties). ``q`` is one SINR vector or a stack of them. """
    q = np.asarray(q, dtype=np.float64)
    choice = np.argmax(model.probabilities(q), axis=-1)
    return int(choice) if q.ndim == 1 else choice


def train_agent(model: AgentModel, data: AgentDataset, config: AgentConfig = AgentConfig()) -> AgentModel:
    """ Fit ``model`` to ``data`` with categorical cross-entropy
        ``-(1/J) sum_j v_j log v_hat_j`` and record train and validation
        accuracy on the model.

        :raises DivergenceError: The loss became non-finite.
    """
    if data.n_classes != len(model) or data.n_layer != model.n_layer:
        raise ShapeError(f"Dataset ({data.n_layer} features, {data.n_classes} classes) does not fit "
                         f"{model!r}")
    if not len(data):
        raise ConfigError("Cannot train the agent on an empty dataset")
    rng = derive_rng(config.seed, STREAM_BATCH, 3)
    order = rng.permutation(len(data))
    n_val = int(round(config.validation_fraction * len(data)))
    if n_val >= len(data):
        n_val = 0
    val, train = data.subset(order[:n_val]), data.subset(order[n_val:])

    model.mean = train.features.mean(axis=0)
    model.std = np.maximum(train.features.std(axis=0), _STD_FLOOR)
    optimizer = Adam(model.graph.parameters(), lr=config.lr)
    one_hot, j = train.one_hot, len(model)
    size = min(config.batch_size, len(train))
    # BatchNorm needs more than one row to normalize with batch statistics.
    mode = "train" if size > 1 else "infer"

    loss_value = math.nan
    for step in range(config.steps):
        rows = rng.choice(len(train), size=size, replace=False)
        optimizer.zero_grad()
        logp = model.logits(train.features[rows], mode).log_softmax(axis=-1)
        loss = (logp * one_hot[rows]).sum(axis=-1).mean() * (-1.0 / j)
        loss_value = float(loss.data)
        if not math.isfinite(loss_value):
            raise DivergenceError(f"Agent loss became non-finite at step {step + 1}")
        loss.backward()
        optimizer.step()
        if config.log_every and (step + 1) % config.log_every == 0:
            log.debug("Agent step %d: loss %.6f", step + 1, loss_value)

    model.train_accuracy = model.accuracy(train)
    model.val_accuracy = model.accuracy(val) if len(val) else model.train_accuracy
    log.info("Agent trained: loss %.5f, accuracy %.3f (train) %.3f (validation)",
             loss_value, model.train_accuracy, model.val_accuracy)
    return model


##
### Labels
##


def _realization_snr(seed, index, snr_db) -> float:
    if np.ndim(snr_db) == 0:
        return float(snr_db)
    lo, hi = snr_db
    return float(derive_rng(seed, STREAM_SNR, index).uniform(lo, hi))


def evaluate_candidates(candidates: Sequence[LinkConfig], index: int, seed=0, trials_per_seed=1,
                        snr_db: Union[float, Tuple[float, float]] = 10.0,
                        ul_snr_db: Optional[float] = None, n_layer: Optional[int] = None,
                        models=None) -> Tuple[np.ndarray, np.ndarray, float]:
    """ Features and per-candidate goodput of channel realization ``index``.

        :returns: ``(sinr_db, goodput, snr_db)``.
    """
    snr = _realization_snr(seed, index, snr_db)
    channel_seed = derive_seed(seed, STREAM_CHANNEL, index)
    n_layer = n_layer or max(c.n_layer for c in candidates)
    q = sinr_features(candidates[0], channel_seed, snr, n_layer)
    goodput = np.zeros(len(candidates))
    for j, link in enumerate(candidates):
        link_models = models[j] if models is not None else None
        for k in range(trials_per_seed):
            result = run_trial(link, channel_seed, derive_seed(seed, STREAM_NOISE, index, k), snr,
                               ul_snr_db, link_models)
            goodput[j] += result.goodput / trials_per_seed
    return q, goodput, snr


def generate_labels(candidates: Sequence[LinkConfig], channel_seeds: Sequence[int], seed=0,
                    trials_per_seed=1, snr_db: Union[float, Tuple[float, float]] = (-4.0, 16.0),
                    ul_snr_db: Optional[float] = None, n_layer: Optional[int] = None,
                    workers: Optional[int] = None) -> AgentDataset:
    """ Label channel realizations with their goodput-maximizing candidate.

        :param channel_seeds: Realization indices; index ``i`` draws its
            channel from ``(seed, channel stream, i)``.
        :param snr_db: A fixed downlink SNR or a range drawn per realization.
        :param n_layer: Feature length; defaults to the largest candidate
            layer count.
    """
    if not candidates:
        raise ConfigError("At least one candidate link is required")
    models = [c.load_models() for c in candidates]

    def job(index):
        return evaluate_candidates(candidates, index, seed, trials_per_seed, snr_db, ul_snr_db,
                                   n_layer, models)

    indices = list(channel_seeds)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(job, indices))
    features = np.array([q for q, _, _ in results]).reshape(len(indices), -1)
    labels = np.array([int(np.argmax(g)) for _, g, _ in results], dtype=np.int64)
    counts = np.bincount(labels, minlength=len(candidates))
    log.info("Labelled %d realizations: class counts %s", len(indices), counts.tolist())
    return AgentDataset(features, labels, len(candidates))
