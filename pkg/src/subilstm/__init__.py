"""Suffix bidirectional LSTM (SuBiLSTM) sentence encoders on numpy.

Modules: ``numerics`` (tape autodiff, RNG), ``lstm`` (cell and batched
scan), ``encoders`` (BiLSTM / SuBiLSTM reference encoders), ``scheduler``
(batched suffix passes), ``models`` (classifier and Siamese heads),
``data``, ``training``, ``estimators`` (scikit-learn wrappers) and ``cli``.
"""

from .encoders import BILSTM, BILSTM2, SUBILSTM, SUBILSTM_TIED, VARIANTS, Encoder, EncoderConfig, param_count
from .estimators import SentenceEncoder, SuBiLSTMClassifier, SuBiLSTMPairClassifier
from .lstm import LstmParams, run_sequence
from .numerics import Rng, Tape, Tensor, backward, grad_check
from .scheduler import build_plan, encode_padded, encode_subilstm_batched, plan_stats

__version__ = "0.1.0"

__all__ = [
    "BILSTM",
    "BILSTM2",
    "SUBILSTM",
    "SUBILSTM_TIED",
    "VARIANTS",
    "Encoder",
    "EncoderConfig",
    "LstmParams",
    "Rng",
    "SentenceEncoder",
    "SuBiLSTMClassifier",
    "SuBiLSTMPairClassifier",
    "Tape",
    "Tensor",
    "backward",
    "build_plan",
    "encode_padded",
    "encode_subilstm_batched",
    "grad_check",
    "param_count",
    "plan_stats",
    "run_sequence",
]
