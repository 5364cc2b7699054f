"""Toy speech-to-text recognizer used by the augmentation experiments.

A small causal transformer reads the speech token sequence, then a start
marker, then emits text tokens autoregressively until end-of-text. It plays
the role of the large pre-trained recognizer in the downstream pipelines:
train it on one corpus, measure error rates on another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Corpus
from .errors import ConfigurationError, InputError, NumericError, PreconditionError, StateError
from .seeding import derive_rng


@dataclass(frozen=True)
class AsrConfig:
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    text_vocab: int = 28
    speech_vocab: int = 225
    max_seq_len: int = 96
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-3

    def validate(self) -> None:
        if self.dim % self.n_heads != 0:
            raise ConfigurationError("dim must be divisible by n_heads")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigurationError("steps and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")


class _Block(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        bsz, length, dim = x.shape
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        shape = (bsz, length, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(mask[:length, :length], float("-inf"))
        out = (torch.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(bsz, length, dim)
        x = x + self.proj(out)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class ToyASR(nn.Module):
    """Speech tokens -> text tokens, layout [speech..., start, text...]."""

    def __init__(self, config: AsrConfig):
        config.validate()
        super().__init__()
        self.config = config
        d = config.dim
        self.speech_emb = nn.Embedding(config.speech_vocab + 1, d)  # +1 start marker
        self.text_emb = nn.Embedding(config.text_vocab, d)
        self.pos_emb = nn.Embedding(config.max_seq_len, d)
        self.blocks = nn.ModuleList(_Block(d, config.n_heads) for _ in range(config.n_layers))
        self.final_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.text_vocab + 1)  # +1 end-of-text
        mask = torch.triu(torch.ones(config.max_seq_len, config.max_seq_len, dtype=torch.bool), 1)
        self.register_buffer("causal_mask", mask, persistent=False)
        self.stage = "init"

    @property
    def start_id(self) -> int:
        return self.config.speech_vocab

    @property
    def eot_id(self) -> int:
        return self.config.text_vocab

    def forward_streams(
        self, speeches: list[torch.Tensor], texts: list[torch.Tensor]
    ) -> torch.Tensor:
        """Text logits, one row per next-text-token slot, flattened over batch."""
        start = torch.full((1,), self.start_id, dtype=torch.long)
        rows = []
        for speech, text in zip(speeches, texts):
            total = len(speech) + 1 + len(text)
            if total > self.config.max_seq_len:
                raise InputError(
                    f"sequence of {total} positions exceeds max_seq_len"
                )
            rows.append(torch.cat([
                self.speech_emb(speech), self.speech_emb(start), self.text_emb(text),
            ]))
        x = nn.utils.rnn.pad_sequence(rows, batch_first=True)
        x = x + self.pos_emb.weight[: x.shape[1]].unsqueeze(0)
        for block in self.blocks:
            x = block(x, self.causal_mask)
        x = self.final_norm(x)
        out = []
        for i, (speech, text) in enumerate(zip(speeches, texts)):
            s_len, t_len = len(speech), len(text)
            out.append(x[i, s_len : s_len + 1 + t_len])
        return self.head(torch.cat(out, dim=0))

    def transcribe(self, speech: torch.Tensor, max_tokens: int | None = None) -> tuple[int, ...]:
        [out] = self.transcribe_batch([speech], max_tokens)
        return out

    @torch.no_grad()
    def transcribe_batch(
        self, speeches: list[torch.Tensor], max_tokens: int | None = None
    ) -> list[tuple[int, ...]]:
        """Greedy decoding in lockstep; deterministic."""
        if self.stage == "init":
            raise StateError("transcription requires a trained recognizer")
        budget = [
            min(
                max_tokens if max_tokens is not None else self.config.max_seq_len,
                self.config.max_seq_len - 1 - len(sp),
            )
            for sp in speeches
        ]
        texts = [torch.empty(0, dtype=torch.long) for _ in speeches]
        done = [b <= 0 for b in budget]
        while not all(done):
            logits = self.forward_streams(speeches, texts)
            offsets = []
            pos = 0
            for t in texts:
                pos += len(t) + 1
                offsets.append(pos - 1)
            picks = logits[offsets].argmax(dim=-1)
            for i, pick in enumerate(picks.tolist()):
                if done[i]:
                    continue
                if pick == self.eot_id:
                    done[i] = True
                    continue
                texts[i] = torch.cat([texts[i], torch.tensor([pick])])
                if len(texts[i]) >= budget[i]:
                    done[i] = True
        return [tuple(t.tolist()) for t in texts]


def train_asr(
    train_set: Corpus,
    seed: int,
    config: AsrConfig | None = None,
    init: ToyASR | None = None,
) -> tuple[ToyASR, float]:
    """Fit a recognizer on a corpus; returns (model, final training loss).

    `init` warm-starts from an existing recognizer (the adaptation setting);
    otherwise parameters are drawn deterministically from the seed.
    """
    config = config or AsrConfig()
    config.validate()
    torch.set_num_threads(1)
    if not train_set.utterances:
        raise PreconditionError("cannot train a recognizer on an empty corpus")
    if init is not None:
        # Architecture must match to reuse weights; steps/batch/lr may differ
        # because adaptation runs shorter than base training.
        arch = ("dim", "n_layers", "n_heads", "text_vocab", "speech_vocab", "max_seq_len")
        for field in arch:
            if getattr(init.config, field) != getattr(config, field):
                raise ConfigurationError(
                    f"init recognizer differs in {field}; cannot reuse weights"
                )
        asr = ToyASR(config)
        asr.load_state_dict(init.state_dict())
    else:
        state = torch.random.get_rng_state()
        try:
            torch.manual_seed(seed)
            asr = ToyASR(config)
        finally:
            torch.random.set_rng_state(state)
    pool = [
        (torch.tensor(u.speech, dtype=torch.long), torch.tensor(u.content, dtype=torch.long))
        for u in train_set.utterances
    ]
    optimizer = torch.optim.Adam(asr.parameters(), lr=config.lr)
    eot = torch.tensor([asr.eot_id])
    loss_value = 0.0
    for step in range(config.steps):
        rng = derive_rng(seed, "asr-batch", step)
        batch = [pool[i] for i in rng.integers(len(pool), size=config.batch_size)]
        speeches = [b[0] for b in batch]
        texts = [b[1] for b in batch]
        logits = asr.forward_streams(speeches, texts)
        targets = torch.cat([torch.cat([t, eot]) for t in texts])
        loss = F.cross_entropy(logits, targets)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericError(f"non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    asr.stage = "trained"
    return asr, loss_value
