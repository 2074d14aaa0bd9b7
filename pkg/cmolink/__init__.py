# -*- coding: utf-8 -*-
"""
A link-level MIMO-OFDM workbench for cross-module optimized physical
layers: a learned cross-layer modulator and demodulator, learned precoding
from transformer CSI feedback (bit or symbol form) and a control agent that
switches between candidate links, next to Gray QAM / quantized-eigenvector
baselines with LDPC coding. An analysis suite covers BICM capacity and
constellation geometry.

Copyright (c) 2026, cmolink developers
License: MIT (see LICENSE file)
"""

__author__ = "cmolink developers"
__version__ = '0.1.0-dev'
__license__ = "MIT"

from .errors import (CmoError, ConfigError, MissingArtifactError, ShapeError, CodingError,
                     BudgetError, EnumerationLimitError, NumericalError, SingularMatrixError,
                     ConvergenceError, ZeroVectorError, DivergenceError, GraphStateError)
from .channel import Numerology, TdlProfile, ChannelRealization, get_profile, sample_channel
from .ldpc import LdpcCode, get_code
from .modulation import QamConstellation, CrossLayerModulator, qam_modulate, qam_demodulate
from .csi import CsiMatrix, CsiCodec, extract_csi, sgcs, quantize_csi, dequantize_csi
from .precoding import Precoder, eigen_precoder, apply_precoding, normalize_power
from .capacity import ConstellationSet, bicm_capacity_mc, shaping_gain_ratio
from .models import ModelConfig, LinkModels
from .link import LinkConfig, TrialResult, run_trial
from .training import TrainConfig, PhaseReport, train_phase1, train_phase2, evaluate_end_to_end
from .agent import AgentConfig, AgentModel, AgentDataset, generate_labels, train_agent, select_scheme
from .harness import SweepConfig, SweepPoint, run_sweep, ideal_link_adaptation, scenario_preset

__all__ = ["CmoError", "ConfigError", "MissingArtifactError", "ShapeError", "CodingError",
           "BudgetError", "EnumerationLimitError", "NumericalError", "SingularMatrixError",
           "ConvergenceError", "ZeroVectorError", "DivergenceError", "GraphStateError",
           "Numerology", "TdlProfile", "ChannelRealization", "get_profile", "sample_channel",
           "LdpcCode", "get_code", "QamConstellation", "CrossLayerModulator", "qam_modulate",
           "qam_demodulate", "CsiMatrix", "CsiCodec", "extract_csi", "sgcs", "quantize_csi",
           "dequantize_csi", "Precoder", "eigen_precoder", "apply_precoding", "normalize_power",
           "ConstellationSet", "bicm_capacity_mc", "shaping_gain_ratio", "ModelConfig",
           "LinkModels", "LinkConfig", "TrialResult", "run_trial", "TrainConfig", "PhaseReport",
           "train_phase1", "train_phase2", "evaluate_end_to_end", "AgentConfig", "AgentModel",
           "AgentDataset", "generate_labels", "train_agent", "select_scheme", "SweepConfig",
           "SweepPoint", "run_sweep", "ideal_link_adaptation", "scenario_preset"]
