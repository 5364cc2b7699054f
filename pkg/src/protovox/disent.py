"""Speaker/pathology factor separation on top of the synthesis backbone.

The conditioning vector fed to the backbone is z = s + p_k: a speaker
embedding s from a reference speech prompt, plus a learned pathology
prototype p_k from a small codebook (row 0 reserved for the healthy
condition, one row per dysarthric speaker otherwise). Two classifiers pull
the factors apart during training: one predicts the condition from z and is
trained normally, the other predicts it from s alone but sits behind a
gradient reversal, so the speaker encoder is pushed to make s carry as
little condition information as it can get away with.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError, RangeError, ShapeError


class GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, strength):
        ctx.strength = strength
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.strength, None


def grl(x: torch.Tensor, strength: float = 0.1) -> torch.Tensor:
    """Identity on the forward pass; scales the gradient by -strength."""
    if strength < 0:
        raise ConfigurationError("reversal strength must be >= 0")
    return GradientReversal.apply(x, strength)


class PrototypeCodebook(nn.Module):
    """Learned (n_dysarthric + 1) x dim table; row 0 is the healthy prototype.

    Setting lookup_log to a list turns on instrumentation: every looked-up
    index is appended, which lets callers assert which rows a pipeline read.
    """

    def __init__(self, n_dysarthric: int, dim: int, init_std: float = 0.02):
        super().__init__()
        if n_dysarthric < 1:
            raise ConfigurationError("codebook needs at least one dysarthric row")
        self.n_dysarthric = n_dysarthric
        self.table = nn.Parameter(torch.randn(n_dysarthric + 1, dim) * init_std)
        self.lookup_log: list[int] | None = None

    def lookup(self, index: int) -> torch.Tensor:
        if not 0 <= index <= self.n_dysarthric:
            raise RangeError(
                f"prototype index {index} outside [0, {self.n_dysarthric}]"
            )
        if self.lookup_log is not None:
            self.lookup_log.append(index)
        return self.table[index]

    def lookup_batch(self, indices: list[int]) -> torch.Tensor:
        return torch.stack([self.lookup(i) for i in indices])

    def export_rows(self) -> str:
        """Plain-text table, one row per prototype, tab-separated."""
        lines = []
        for i, row in enumerate(self.table.detach().tolist()):
            values = "\t".join(f"{v:.8f}" for v in row)
            lines.append(f"{i}\t{values}")
        return "\n".join(lines) + "\n"


class SpeakerEncoder(nn.Module):
    """Speech prompt -> speaker vector s.

    Two sub-parts with different training schedules: a token-embedding
    conditioner that is mean-pooled (trained only during base pre-training,
    frozen afterwards) and a small perceiver MLP on the pooled vector
    (trainable during adaptation, where the reversal pressure lands).
    """

    def __init__(self, speech_vocab: int, dim: int):
        super().__init__()
        self.conditioner = nn.Embedding(speech_vocab, dim)
        # Mean pooling alone averages away which tokens were present; the
        # max channel keeps set membership linearly readable.
        self.perceiver = nn.Sequential(
            nn.Linear(2 * dim, dim), nn.GELU(), nn.Linear(dim, dim)
        )

    def forward(self, prompt: torch.Tensor) -> torch.Tensor:
        if prompt.dim() != 1:
            raise ShapeError("prompt must be a 1-D token sequence")
        if len(prompt) == 0:
            raise InputError("cannot encode an empty speech prompt")
        embedded = self.conditioner(prompt)
        pooled = torch.cat([embedded.mean(dim=0), embedded.max(dim=0).values])
        return self.perceiver(pooled)

    def encode_batch(self, prompts: list[torch.Tensor]) -> torch.Tensor:
        return torch.stack([self(p) for p in prompts])


class ConditionClassifier(nn.Module):
    """Two-layer MLP over a conditioning-sized vector -> 2 condition logits.

    Dropout keeps the head from saturating on an easy cue; a saturated
    classifier emits near-zero gradients, and the reversed branch stops
    exerting pressure long before the cue is actually removed.
    """

    def __init__(self, dim: int, dropout: float = 0.3):
        super().__init__()
        self.net = nn.Sequential(
            nn.Dropout(dropout), nn.Linear(dim, dim), nn.GELU(),
            nn.Dropout(dropout), nn.Linear(dim, 2),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def combine(s: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of speaker vector and prototype."""
    if s.shape != p.shape:
        raise ShapeError(f"shape mismatch: {tuple(s.shape)} vs {tuple(p.shape)}")
    return s + p


def classify_dys(classifier: ConditionClassifier, z: torch.Tensor) -> torch.Tensor:
    """Condition logits from z; gradients flow into both s and p_k unchanged."""
    return classifier(z)


def classify_adv(
    classifier: ConditionClassifier, s: torch.Tensor, strength: float = 0.1
) -> torch.Tensor:
    """Condition logits from s behind a gradient reversal.

    The classifier's own parameters get standard gradients; whatever
    produced s receives the reversed ones.
    """
    return classifier(grl(s, strength))


def tts_loss(
    speech_logits: torch.Tensor,
    speech_targets: torch.Tensor,
    text_logits: torch.Tensor,
    text_targets: torch.Tensor,
) -> torch.Tensor:
    """Mean cross-entropy per target token for each stream, summed.

    An empty text stream contributes zero. Out-of-vocabulary targets in
    either stream are an input error, not an index crash.
    """
    if speech_logits.shape[0] != speech_targets.shape[0]:
        raise ShapeError(
            f"{speech_logits.shape[0]} speech logit rows for "
            f"{speech_targets.shape[0]} targets"
        )
    if text_logits.shape[0] != text_targets.shape[0]:
        raise ShapeError(
            f"{text_logits.shape[0]} text logit rows for {text_targets.shape[0]} targets"
        )
    if speech_targets.numel() == 0:
        raise InputError("speech stream must have at least one target")
    for name, targets, vocab in (
        ("speech", speech_targets, speech_logits.shape[-1]),
        ("text", text_targets, text_logits.shape[-1]),
    ):
        if targets.numel() and (targets.min() < 0 or targets.max() >= vocab):
            raise InputError(f"{name} target outside vocabulary of size {vocab}")
    loss = F.cross_entropy(speech_logits, speech_targets)
    if text_targets.numel():
        loss = loss + F.cross_entropy(text_logits, text_targets)
    return loss


@dataclass
class LossParts:
    """Components of the training objective; weights must be non-negative."""

    l_tts: torch.Tensor | float
    l_dys: torch.Tensor | float
    l_adv: torch.Tensor | float
    alpha: float = 1.0
    beta: float = 1.0


def total_loss(parts: LossParts):
    """l_tts + alpha * l_dys + beta * l_adv."""
    if parts.alpha < 0 or parts.beta < 0:
        raise ConfigurationError("loss weights must be non-negative")
    return parts.l_tts + parts.alpha * parts.l_dys + parts.beta * parts.l_adv
