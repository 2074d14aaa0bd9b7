# -*- coding: utf-8 -*-
"""
Trainable model bundles: the cross-layer modulator/demodulator pair and the
CSI encoder/decoder of one link, with their optimizer state, stored as one
directory of array manifests.
"""

import functools
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .autodiff import load_arrays, load_graph, save_arrays, save_graph
from .channel import Numerology
from .csi import CsiCodec
from .errors import ConfigError, MissingArtifactError
from .modulation import CrossLayerModulator
from .utils import ConfigMixin

__all__ = ["ModelConfig", "LinkModels", "load_models", "missing_files", "BUNDLE_FILES"]

log = logging.getLogger(__name__)

#: Files every saved bundle directory contains (array blobs next to them).
BUNDLE_FILES = ("bundle.json", "modulator.json", "demodulator.json", "csi_encoder.json",
                "csi_decoder.json")


@dataclass(frozen=True)
class ModelConfig(ConfigMixin):
    """ Sizes of the learned models. Defaults are the full-size structures;
        :meth:`desk` gives a small variant that trains on a desktop CPU. """

    bits_per_re: int = 16
    n_layer: int = 4
    mod_width: int = 256
    mod_depth: int = 4
    demod_width: int = 256
    demod_blocks: int = 4
    csi_form: str = "bits"
    csi_dim: int = 256
    csi_heads: int = 4
    csi_blocks: int = 6
    csi_bits: int = 192
    csi_symbols: int = 96
    seed: int = 0

    def __post_init__(self):
        for name in ("bits_per_re", "n_layer", "mod_width", "mod_depth", "demod_width",
                     "csi_dim", "csi_heads", "csi_bits", "csi_symbols"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be positive")
        if self.demod_blocks < 0 or self.csi_blocks < 0:
            raise ConfigError("Block counts must be non-negative")
        if self.csi_form not in CsiCodec.forms:
            raise ConfigError(f"Unknown CSI feedback form {self.csi_form!r}")
        if self.csi_dim % self.csi_heads:
            raise ConfigError(f"CSI width {self.csi_dim} is not divisible by {self.csi_heads} heads")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        base = dict(bits_per_re=4, n_layer=2, mod_width=64, mod_depth=4, demod_width=64,
                    demod_blocks=2, csi_dim=32, csi_heads=2, csi_blocks=2)
        base.update(overrides)
        return cls(**base)


class LinkModels:
    """ The learned models of one link and their training state.

        :param config: Model sizes.
        :param numerology: Downlink grid; fixes the CSI codec input shape.
        :param modulator: Optional existing modulator pair.
        :param codec: Optional existing CSI codec.
    """

    def __init__(self, config: ModelConfig, numerology: Numerology,
                 modulator: Optional[CrossLayerModulator] = None, codec: Optional[CsiCodec] = None):
        self.config = config
        self.numerology = numerology
        self.modulator = modulator or CrossLayerModulator(
            config.bits_per_re, config.n_layer, width=config.mod_width, n_dense=config.mod_depth,
            demod_width=config.demod_width, n_res=config.demod_blocks, seed=config.seed)
        self.codec = codec or CsiCodec(
            numerology.n_subbands, numerology.n_tx, config.n_layer, form=config.csi_form,
            dim=config.csi_dim, heads=config.csi_heads, blocks=config.csi_blocks,
            n_bits=config.csi_bits, n_symbols=config.csi_symbols, seed=config.seed + 2)
        #: Adam state (see :meth:`cmolink.autodiff.Adam.state_dict`).
        self.optimizer_state: Dict[str, np.ndarray] = {}
        #: Training progress: completed phases and the step inside the current one.
        self.progress: Dict[str, int] = {"phase": 0, "step": 0}

    def __repr__(self):
        return f"LinkModels({self.modulator!r}, {self.codec!r})"

    @property
    def graphs(self):
        return [self.modulator.mod_graph, self.modulator.demod_graph,
                self.codec.encoder, self.codec.decoder]

    def parameters(self):
        return [p for g in self.graphs for p in g.parameters()]

    def count(self) -> Dict[str, tuple]:
        """ ``(params, flops)`` of each graph, keyed by graph name. """
        return {g.name: (g.count_parameters(), g.count_flops()) for g in self.graphs}

    ###### Persistence

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for graph in self.graphs:
            save_graph(graph, os.path.join(directory, graph.name))
        if self.optimizer_state:
            save_arrays(os.path.join(directory, "optimizer"), self.optimizer_state)
        bundle = {"model": self.config.to_dict(), "numerology": self.numerology.to_dict(),
                  "progress": dict(self.progress)}
        with open(os.path.join(directory, "bundle.json"), "w", encoding="utf8") as fp:
            json.dump(bundle, fp, indent=2, sort_keys=True)
        log.info("Saved link models to %s", directory)

    @classmethod
    def load(cls, directory) -> "LinkModels":
        missing = missing_files(directory)
        if missing:
            raise MissingArtifactError(missing)
        with open(os.path.join(directory, "bundle.json"), "r", encoding="utf8") as fp:
            try:
                bundle = json.load(fp)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Invalid bundle file in {directory}: {e}") from e
        config = ModelConfig.from_dict(bundle["model"])
        numerology = Numerology.from_dict(bundle["numerology"])
        graphs = {name: load_graph(os.path.join(directory, name))
                  for name in ("modulator", "demodulator", "csi_encoder", "csi_decoder")}
        modulator = CrossLayerModulator.from_graphs(graphs["modulator"], graphs["demodulator"])
        codec = CsiCodec.from_graphs(graphs["csi_encoder"], graphs["csi_decoder"], config.n_layer)
        models = cls(config, numerology, modulator, codec)
        models.progress = dict(bundle.get("progress", models.progress))
        if os.path.exists(os.path.join(directory, "optimizer.json")):
            models.optimizer_state, _ = load_arrays(os.path.join(directory, "optimizer"))
        return models


def missing_files(directory) -> List[str]:
    return [os.path.join(str(directory), name) for name in BUNDLE_FILES
            if not os.path.exists(os.path.join(str(directory), name))]


@functools.lru_cache(maxsize=16)
def load_models(directory) -> LinkModels:
    """ Cached :meth:`LinkModels.load` for inference use. """
    return LinkModels.load(directory)
