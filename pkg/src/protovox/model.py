"""Assembled synthesis model: backbone + speaker encoder + codebook + classifiers."""

from __future__ import annotations

import torch
import torch.nn as nn

from .backbone import BackboneConfig, SynthBackbone
from .disent import (
    ConditionClassifier,
    PrototypeCodebook,
    SpeakerEncoder,
    combine,
)
from .seeding import derive_seed


class SynthesisModel(nn.Module):
    def __init__(self, config: BackboneConfig, n_dysarthric: int):
        super().__init__()
        self.backbone = SynthBackbone(config)
        self.speaker_encoder = SpeakerEncoder(config.speech_vocab, config.dim)
        self.codebook = PrototypeCodebook(n_dysarthric, config.dim)
        self.dys_classifier = ConditionClassifier(config.dim)
        self.adv_classifier = ConditionClassifier(config.dim)

    @property
    def config(self) -> BackboneConfig:
        return self.backbone.config

    @property
    def stage(self) -> str:
        return self.backbone.stage

    @stage.setter
    def stage(self, value: str) -> None:
        self.backbone.stage = value

    def encode_speaker(self, prompt: torch.Tensor) -> torch.Tensor:
        return self.speaker_encoder(prompt)

    def lookup_prototype(self, index: int) -> torch.Tensor:
        return self.codebook.lookup(index)

    def condition_vector(self, prompt: torch.Tensor, prototype_index: int) -> torch.Tensor:
        return combine(self.encode_speaker(prompt), self.lookup_prototype(prototype_index))

    def synthesize(
        self,
        text: torch.Tensor,
        prompt: torch.Tensor,
        prototype_index: int,
        strategy: str = "greedy",
        temperature: float = 1.0,
        seed: int = 0,
    ) -> tuple[int, ...]:
        z = self.condition_vector(prompt, prototype_index)
        return self.backbone.decode(text, z, strategy, temperature, seed)


def build_model(config: BackboneConfig, n_dysarthric: int, seed: int = 0) -> SynthesisModel:
    """Construct with deterministic parameter init regardless of global RNG state."""
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(derive_seed(seed, "model-init"))
        model = SynthesisModel(config, n_dysarthric)
    finally:
        torch.random.set_rng_state(state)
    return model
