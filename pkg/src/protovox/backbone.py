"""Autoregressive discrete-token synthesis backbone with low-rank adapters.

A small causal transformer consumes one conditioning vector (prepended as
the first position), the text token sequence, a speech-start marker, and
the speech tokens generated so far. Text positions predict the next text
token; the marker and speech positions predict the next speech token. Every
attention and MLP projection is wrapped with a low-rank adapter that is
exactly inactive at initialization, so a freshly adapted model reproduces
the frozen base model bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError, ShapeError, StateError


@dataclass(frozen=True)
class BackboneConfig:
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    text_vocab: int = 28
    speech_vocab: int = 225
    max_seq_len: int = 96
    lora_rank: int = 16
    lora_scale: float | None = None  # defaults to 1/rank

    def validate(self) -> None:
        if self.dim % self.n_heads != 0:
            raise ConfigurationError("dim must be divisible by n_heads")
        if self.lora_rank < 1:
            raise ConfigurationError("lora_rank must be >= 1")
        if self.max_seq_len < 4:
            raise ConfigurationError("max_seq_len must be >= 4")

    @property
    def scale(self) -> float:
        return self.lora_scale if self.lora_scale is not None else 1.0 / self.lora_rank

    @property
    def speech_bos(self) -> int:
        # Input-side marker id; shares the extra embedding row.
        return self.speech_vocab

    @property
    def speech_eos(self) -> int:
        # Output-side end id; shares the extra head column.
        return self.speech_vocab


class LowRankAdapter(nn.Module):
    """Additive low-rank delta for a frozen weight: scale * B @ (A @ x).

    B starts at zero so the adapter is an exact identity at init; A starts
    small-variance random so gradients reach B from step one.
    """

    def __init__(self, d_in: int, d_out: int, rank: int, scale: float):
        super().__init__()
        self.A = nn.Parameter(torch.randn(rank, d_in) * 0.02)
        self.B = nn.Parameter(torch.zeros(d_out, rank))
        self.scale = scale

    def delta(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale * F.linear(F.linear(x, self.A), self.B)


def lora_apply(base_weight: torch.Tensor, adapter: LowRankAdapter, x: torch.Tensor) -> torch.Tensor:
    """base_weight @ x plus the adapter delta; never mutates base_weight."""
    if base_weight.shape[1] != x.shape[-1]:
        raise ShapeError(
            f"weight expects input dim {base_weight.shape[1]}, got {x.shape[-1]}"
        )
    if adapter.A.shape[1] != base_weight.shape[1] or adapter.B.shape[0] != base_weight.shape[0]:
        raise ShapeError("adapter dimensions do not match the base weight")
    return F.linear(x, base_weight) + adapter.delta(x)


class AdaptedLinear(nn.Module):
    """Frozen-able linear layer plus its low-rank adapter."""

    def __init__(self, d_in: int, d_out: int, rank: int, scale: float):
        super().__init__()
        self.base = nn.Linear(d_in, d_out)
        self.adapter = LowRankAdapter(d_in, d_out, rank, scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.adapter.delta(x)


class DecoderBlock(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        d, r, s = config.dim, config.lora_rank, config.scale
        self.n_heads = config.n_heads
        self.head_dim = d // config.n_heads
        self.q = AdaptedLinear(d, d, r, s)
        self.k = AdaptedLinear(d, d, r, s)
        self.v = AdaptedLinear(d, d, r, s)
        self.proj = AdaptedLinear(d, d, r, s)
        self.fc1 = AdaptedLinear(d, 4 * d, r, s)
        self.fc2 = AdaptedLinear(4 * d, d, r, s)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        bsz, length, dim = x.shape
        h = self.norm1(x)
        shape = (bsz, length, self.n_heads, self.head_dim)
        q = self.q(h).view(shape).transpose(1, 2)
        k = self.k(h).view(shape).transpose(1, 2)
        v = self.v(h).view(shape).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(causal_mask[:length, :length], float("-inf"))
        attended = (torch.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(bsz, length, dim)
        x = x + self.proj(attended)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class SynthBackbone(nn.Module):
    """Conditioning vector + text tokens -> speech token distribution."""

    def __init__(self, config: BackboneConfig):
        config.validate()
        super().__init__()
        self.config = config
        d = config.dim
        self.text_emb = nn.Embedding(config.text_vocab, d)
        self.speech_emb = nn.Embedding(config.speech_vocab + 1, d)  # +1 for the start marker
        self.pos_emb = nn.Embedding(config.max_seq_len, d)
        self.blocks = nn.ModuleList(DecoderBlock(config) for _ in range(config.n_layers))
        self.final_norm = nn.LayerNorm(d)
        self.speech_head = nn.Linear(d, config.speech_vocab + 1)  # +1 for end-of-speech
        self.text_head = nn.Linear(d, config.text_vocab)
        mask = torch.triu(torch.ones(config.max_seq_len, config.max_seq_len, dtype=torch.bool), 1)
        self.register_buffer("causal_mask", mask, persistent=False)
        self.stage = "init"

    # -- assembly -------------------------------------------------------------

    def _check_lengths(self, text_len: int, speech_len: int) -> None:
        total = 1 + text_len + 1 + speech_len
        if total > self.config.max_seq_len:
            raise InputError(
                f"sequence of {total} positions exceeds max_seq_len={self.config.max_seq_len}"
            )

    def hidden_states(
        self,
        z: torch.Tensor,
        texts: list[torch.Tensor],
        speeches: list[torch.Tensor],
    ) -> tuple[torch.Tensor, list[int]]:
        """Per-sample layout [z, text, start-marker, speech], right-padded.

        Returns hidden states (B, L, D) and each sample's true length.
        """
        if z.dim() != 2 or z.shape[1] != self.config.dim:
            raise ShapeError(f"conditioning vector must be (B, {self.config.dim})")
        bos = torch.full((1,), self.config.speech_bos, dtype=torch.long, device=z.device)
        rows = []
        lengths = []
        for i, (text, speech) in enumerate(zip(texts, speeches)):
            self._check_lengths(len(text), len(speech))
            parts = [
                z[i : i + 1],
                self.text_emb(text),
                self.speech_emb(bos),
                self.speech_emb(speech),
            ]
            row = torch.cat(parts, dim=0)
            rows.append(row)
            lengths.append(row.shape[0])
        x = nn.utils.rnn.pad_sequence(rows, batch_first=True)
        x = x + self.pos_emb.weight[: x.shape[1]].unsqueeze(0)
        for block in self.blocks:
            x = block(x, self.causal_mask)
        return self.final_norm(x), lengths

    def forward_streams(
        self,
        z: torch.Tensor,
        texts: list[torch.Tensor],
        speeches: list[torch.Tensor],
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits for both streams, flattened over the batch.

        Returns (text_logits, speech_logits): text logits cover each sample's
        text positions in order (sum of text lengths rows); speech logits
        cover the start marker and every speech position (sum of
        speech lengths + 1 rows), i.e. one row per next-speech-token slot.
        """
        hidden, _ = self.hidden_states(z, texts, speeches)
        text_rows = []
        speech_rows = []
        for i, (text, speech) in enumerate(zip(texts, speeches)):
            t_len, s_len = len(text), len(speech)
            text_rows.append(hidden[i, 0:t_len])
            speech_rows.append(hidden[i, t_len + 1 : t_len + 2 + s_len])
        text_logits = self.text_head(torch.cat(text_rows, dim=0))
        speech_logits = self.speech_head(torch.cat(speech_rows, dim=0))
        return text_logits, speech_logits

    def forward(
        self, text: torch.Tensor, z: torch.Tensor, speech_prefix: torch.Tensor
    ) -> torch.Tensor:
        """Speech logits for one sample: (len(speech_prefix)+1, speech_vocab+1).

        Row t scores the token at speech position t and depends only on the
        conditioning vector, the text, and speech positions before t.
        """
        if z.dim() != 1:
            raise ShapeError("z must be a single conditioning vector")
        _, speech_logits = self.forward_streams(
            z.unsqueeze(0), [text], [speech_prefix]
        )
        return speech_logits

    # -- decoding -------------------------------------------------------------

    def decode(
        self,
        text: torch.Tensor,
        z: torch.Tensor,
        strategy: str = "greedy",
        temperature: float = 1.0,
        seed: int = 0,
        max_tokens: int | None = None,
    ) -> tuple[int, ...]:
        """Emit speech tokens until end-of-speech or the length limit."""
        [result] = self.decode_batch(
            [text], z.unsqueeze(0), strategy, temperature, seed, max_tokens
        )
        return result

    @torch.no_grad()
    def decode_batch(
        self,
        texts: list[torch.Tensor],
        z: torch.Tensor,
        strategy: str = "greedy",
        temperature: float = 1.0,
        seed: int = 0,
        max_tokens: int | None = None,
    ) -> list[tuple[int, ...]]:
        """Decode many samples in lockstep; sampled mode is seed-deterministic."""
        if self.stage == "init":
            raise StateError("decode requires a trained backbone (stage is 'init')")
        if strategy not in ("greedy", "sampled"):
            raise ConfigurationError(f"unknown decode strategy {strategy!r}")
        generator = torch.Generator().manual_seed(seed)
        eos = self.config.speech_eos
        budget = [
            min(
                max_tokens if max_tokens is not None else self.config.max_seq_len,
                self.config.max_seq_len - 2 - len(t),
            )
            for t in texts
        ]
        speeches = [torch.empty(0, dtype=torch.long) for _ in texts]
        done = [b <= 0 for b in budget]
        while not all(done):
            _, speech_logits = self.forward_streams(z, texts, speeches)
            # Last logits row of each sample scores its next speech token.
            offsets = []
            pos = 0
            for sp in speeches:
                pos += len(sp) + 1
                offsets.append(pos - 1)
            rows = speech_logits[offsets]
            if strategy == "greedy":
                picks = rows.argmax(dim=-1)
            else:
                probs = torch.softmax(rows / temperature, dim=-1)
                picks = torch.multinomial(probs, 1, generator=generator).squeeze(1)
            for i, pick in enumerate(picks.tolist()):
                if done[i]:
                    continue
                if pick == eos:
                    done[i] = True
                    continue
                speeches[i] = torch.cat(
                    [speeches[i], torch.tensor([pick], dtype=torch.long)]
                )
                if len(speeches[i]) >= budget[i]:
                    done[i] = True
        return [tuple(sp.tolist()) for sp in speeches]

    # -- parameter partitions ---------------------------------------------------

    def adapter_parameters(self) -> list[nn.Parameter]:
        return [p for m in self.modules() if isinstance(m, LowRankAdapter) for p in m.parameters()]

    def base_parameters(self) -> list[nn.Parameter]:
        adapters = {id(p) for p in self.adapter_parameters()}
        return [p for p in self.parameters() if id(p) not in adapters]
