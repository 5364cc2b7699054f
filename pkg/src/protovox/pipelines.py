"""Downstream pipelines: pathology-controlled augmentation and reconstruction.

Augmentation synthesizes dysarthric-style utterances from healthy sources by
swapping in a dysarthric prototype while keeping the healthy speaker's
prompt, growing a training set by a chosen ratio. Reconstruction runs the
other direction: recognize a dysarthric utterance, then resynthesize the
text with the same speaker's prompt and the healthy prototype.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .asr import ToyASR
from .corpus import Corpus, Utterance
from .errors import (
    ConfigurationError,
    PreconditionError,
    ReconstructionError,
)
from .model import SynthesisModel
from .seeding import derive_rng, derive_seed


@dataclass(frozen=True)
class AugmentationPlan:
    ratio: float
    seed: int = 0
    prototype_weights: tuple[float, ...] | None = None  # uniform over k >= 1 if None
    temperature: float = 1.0

    SWEEP_LADDER = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

    def validate(self, n_dysarthric: int) -> None:
        if self.ratio < 0:
            raise ConfigurationError("ratio must be non-negative")
        if self.ratio > 2:
            raise ConfigurationError("ratio above 2 is not supported")
        if self.prototype_weights is not None:
            if len(self.prototype_weights) != n_dysarthric:
                raise ConfigurationError(
                    f"need {n_dysarthric} prototype weights, got "
                    f"{len(self.prototype_weights)}"
                )
            if any(w < 0 for w in self.prototype_weights) or sum(self.prototype_weights) <= 0:
                raise ConfigurationError("prototype weights must be non-negative and sum > 0")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")


def augment_healthy_to_dysarthric(
    model: SynthesisModel,
    healthy_utt: Utterance,
    k: int,
    seed: int = 0,
    temperature: float = 1.0,
    severity: str | None = None,
    utt_id: str | None = None,
) -> Utterance:
    """Synthesize a condition-k version of a healthy utterance.

    Keeps the source's content and speaker prompt; the output is labeled
    with condition k, marked synthetic, and carries the source utterance id.
    """
    if k < 1:
        raise PreconditionError(
            "augmentation requires a dysarthric prototype (k >= 1); "
            "use plain synthesis for the healthy row"
        )
    text = torch.tensor(healthy_utt.content, dtype=torch.long)
    prompt = torch.tensor(healthy_utt.speech, dtype=torch.long)
    speech = model.synthesize(
        text, prompt, k, strategy="sampled", temperature=temperature, seed=seed
    )
    return Utterance(
        utt_id=utt_id or f"{healthy_utt.utt_id}-syn-k{k}",
        speaker_id=healthy_utt.speaker_id,
        content=healthy_utt.content,
        speech=speech,
        condition=k,
        severity=severity or f"condition-{k}",
        synthetic=True,
        source_utt_id=healthy_utt.utt_id,
    )


def build_augmented_set(real: Corpus, plan: AugmentationPlan, model: SynthesisModel) -> Corpus:
    """real ∪ round(ratio × |real|) synthetic utterances from healthy sources."""
    n_dys = model.codebook.n_dysarthric
    plan.validate(n_dys)
    healthy_ids = set(real.healthy_speaker_ids())
    sources = [u for u in real.utterances if u.speaker_id in healthy_ids and not u.synthetic]
    n_synth = round(plan.ratio * len(real.utterances))
    if n_synth and not sources:
        raise PreconditionError("no healthy source utterances to augment from")
    severity_of_condition = {
        c: real.severity_of(s)
        for s in real.dysarthric_speaker_ids()
        for c in [real.dysarthric_condition_of(s)]
    }
    rng = derive_rng(plan.seed, "augment-plan")
    if plan.prototype_weights is not None:
        weights = [w / sum(plan.prototype_weights) for w in plan.prototype_weights]
    else:
        weights = None
    synthetic = []
    for i in range(n_synth):
        src = sources[int(rng.integers(len(sources)))]
        k = int(rng.choice(range(1, n_dys + 1), p=weights))
        synthetic.append(
            augment_healthy_to_dysarthric(
                model, src, k,
                seed=derive_seed(plan.seed, "augment", i, src.utt_id, k),
                temperature=plan.temperature,
                severity=severity_of_condition.get(k),
                utt_id=f"syn{i:04d}-{src.utt_id}-k{k}",
            )
        )
    return Corpus(
        real.utterances + tuple(synthetic),
        real.speaker_factors,
        real.pathology_factors,
        real.spec,
    )


@dataclass(frozen=True)
class ReconstructionResult:
    recognized_text: tuple[int, ...]
    reconstructed_speech: tuple[int, ...]
    prompt_utt_id: str
    used_prototype: int  # pinned to the healthy row


def reconstruct(
    model: SynthesisModel,
    asr: ToyASR | None,
    dys_utt: Utterance,
    oracle_text: bool = False,
) -> ReconstructionResult:
    """Dysarthric utterance -> healthy-articulation speech, same speaker.

    The recognized text (or the ground-truth content in oracle mode) is
    resynthesized with the utterance itself as the speaker prompt and the
    prototype index pinned to 0. Greedy decoding keeps the result
    deterministic.
    """
    if oracle_text:
        recognized = dys_utt.content
    else:
        if asr is None:
            raise PreconditionError("reconstruction needs a recognizer or oracle text")
        recognized = asr.transcribe(torch.tensor(dys_utt.speech, dtype=torch.long))
    if not recognized:
        raise ReconstructionError(
            f"recognizer returned no text for {dys_utt.utt_id}"
        )
    prompt = torch.tensor(dys_utt.speech, dtype=torch.long)
    text = torch.tensor(recognized, dtype=torch.long)
    speech = model.synthesize(text, prompt, 0, strategy="greedy")
    return ReconstructionResult(
        recognized_text=tuple(recognized),
        reconstructed_speech=speech,
        prompt_utt_id=dys_utt.utt_id,
        used_prototype=0,
    )
