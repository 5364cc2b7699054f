"""Prototype-conditioned toy speech synthesis with speaker/pathology disentanglement."""

from .backbone import BackboneConfig, SynthBackbone
from .corpus import Corpus, CorpusSpec, Utterance, generate_corpus
from .disent import GradientReversal, PrototypeCodebook, SpeakerEncoder, grl
from .errors import ProtovoxError
from .model import SynthesisModel, build_model
from .training import TrainConfig, train

__all__ = [
    "BackboneConfig",
    "SynthBackbone",
    "Corpus",
    "CorpusSpec",
    "Utterance",
    "generate_corpus",
    "GradientReversal",
    "PrototypeCodebook",
    "SpeakerEncoder",
    "grl",
    "ProtovoxError",
    "SynthesisModel",
    "build_model",
    "TrainConfig",
    "train",
]

__version__ = "0.1.0"
