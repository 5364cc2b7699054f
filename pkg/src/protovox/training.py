"""Two-stage training: healthy-only pre-training, then adapted fine-tuning.

Pre-training fits the base transformer plus the speaker encoder on healthy
utterances only, conditioning on z = s. Fine-tuning freezes the base and the
encoder's conditioner, then trains the low-rank adapters, the prototype
codebook, the encoder's perceiver, and the two condition classifiers on the
full corpus mixed 50/50 with voice-converted pairs. Batch composition is a
pure function of (seed, step), so reruns are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import Corpus, Utterance, make_vc_pairs, render_speech
from .disent import LossParts, classify_adv, classify_dys, total_loss, tts_loss
from .errors import ConfigurationError, IntegrityError, NumericError, PreconditionError
from .model import SynthesisModel
from .seeding import derive_rng, derive_seed


@dataclass(frozen=True)
class TrainConfig:
    lr_lora: float = 5e-5
    lr_codebook: float = 2.5e-3
    lr_classifiers: float = 2.5e-4
    lr_perceiver: float = 2.5e-4
    lr_pretrain: float = 1e-3
    grl_strength: float = 0.1
    alpha: float = 1.0
    beta: float = 1.0
    batch_size: int = 16
    pretrain_steps: int = 600
    finetune_steps: int = 400
    seed: int = 0
    ablation_no_disent: bool = False
    optimizer: str = "adam"
    vc_fraction: float = 0.5

    def validate(self) -> None:
        for name in ("lr_lora", "lr_codebook", "lr_classifiers", "lr_perceiver",
                     "lr_pretrain"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.grl_strength < 0:
            raise ConfigurationError("grl_strength must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.vc_fraction <= 1.0:
            raise ConfigurationError("vc_fraction must be in [0, 1]")


@dataclass(frozen=True)
class GroupEntry:
    name: str
    tensors: int
    parameters: int
    learning_rate: float | None  # None marks the frozen group


@dataclass(frozen=True)
class ParameterGroupManifest:
    entries: tuple[GroupEntry, ...]

    def to_dict(self) -> dict:
        return {
            e.name: {
                "tensors": e.tensors,
                "parameters": e.parameters,
                "learning_rate": e.learning_rate,
            }
            for e in self.entries
        }

    def __getitem__(self, name: str) -> GroupEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def build_param_groups(
    model: SynthesisModel, config: TrainConfig
) -> tuple[list[dict], ParameterGroupManifest]:
    """Partition every model parameter into the five fine-tuning groups.

    Returns optimizer-ready group dicts (frozen group excluded) plus a
    manifest covering all five. Any parameter assigned twice, or not at
    all, is an integrity error.
    """
    named = {
        "lora": model.backbone.adapter_parameters(),
        "codebook": [model.codebook.table],
        "classifiers": list(model.dys_classifier.parameters())
        + list(model.adv_classifier.parameters()),
        "perceiver": list(model.speaker_encoder.perceiver.parameters()),
        "frozen": model.backbone.base_parameters()
        + list(model.speaker_encoder.conditioner.parameters()),
    }
    rates = {
        "lora": config.lr_lora,
        "codebook": config.lr_codebook,
        "classifiers": config.lr_classifiers,
        "perceiver": config.lr_perceiver,
        "frozen": None,
    }
    seen: dict[int, str] = {}
    for name, params in named.items():
        for p in params:
            if id(p) in seen:
                raise IntegrityError(
                    f"parameter assigned to both {seen[id(p)]!r} and {name!r}"
                )
            seen[id(p)] = name
    unassigned = [n for n, p in model.named_parameters() if id(p) not in seen]
    if unassigned:
        raise IntegrityError(f"parameters missing from all groups: {unassigned}")
    groups = [
        {"name": name, "params": named[name], "lr": rates[name]}
        for name in ("lora", "codebook", "classifiers", "perceiver")
    ]
    manifest = ParameterGroupManifest(
        tuple(
            GroupEntry(
                name,
                len(named[name]),
                sum(p.numel() for p in named[name]),
                rates[name],
            )
            for name in ("lora", "codebook", "classifiers", "perceiver", "frozen")
        )
    )
    return groups, manifest


def _make_optimizer(groups: list[dict], mode: str) -> torch.optim.Optimizer:
    if mode == "adam":
        return torch.optim.Adam(groups)
    return torch.optim.SGD(groups)


# -- training samples -----------------------------------------------------------


@dataclass(frozen=True)
class TrainSample:
    text: tuple[int, ...]
    speech: tuple[int, ...]
    prompt: tuple[int, ...]
    prototype_index: int
    condition: int  # articulation: 0 healthy, 1 dysarthric
    # Condition of the speech the prompt came from. Same as `condition` for
    # real samples; for converted pairs it follows the timbre donor. The
    # adversarial classifier is labeled with this (the question it asks is
    # whether s betrays the pathology of the audio it was extracted from),
    # while the z-classifier is labeled with the articulation.
    prompt_condition: int


def prototype_index_map(corpus: Corpus) -> dict[str, int]:
    """Healthy speakers share row 0; each dysarthric speaker gets its own row."""
    mapping = {s: 0 for s in corpus.healthy_speaker_ids()}
    for k, s in enumerate(corpus.dysarthric_speaker_ids(), start=1):
        mapping[s] = k
    return mapping


def _sample_from_utterance(utt: Utterance, proto_index: int) -> TrainSample:
    label = int(utt.condition != 0)
    return TrainSample(
        text=utt.content,
        speech=utt.speech,
        prompt=utt.speech,  # the utterance itself is the speaker reference
        prototype_index=proto_index,
        condition=label,
        prompt_condition=label,
    )


def real_training_samples(corpus: Corpus) -> list[TrainSample]:
    proto = prototype_index_map(corpus)
    return [
        _sample_from_utterance(u, proto[u.speaker_id])
        for u in corpus.utterances
        if not u.synthetic
    ]


def synthetic_voice_samples(corpus: Corpus, seed: int, step: int, count: int) -> list[TrainSample]:
    """Clean renderings of freshly drawn healthy voices, one batch worth.

    Stands in for the large healthy population behind the base model: every
    step sees voices that exist nowhere in the corpus, so the prompt pathway has to
    generalize over timbres instead of memorizing the handful of corpus
    speakers. The prompt renders partially resampled content in the same
    voice, which forces per-content offset lookup rather than whole-sequence
    echo. Pure function of (seed, step).
    """
    spec = corpus.spec
    rng = derive_rng(seed, "pretrain-voices", step)
    lo, hi = spec.content_length_range
    out = []
    for _ in range(count):
        raw = rng.normal(size=spec.timbre_dim)
        timbre = tuple((raw / max(float(np.linalg.norm(raw)), 1e-12)).tolist())
        length = int(rng.integers(lo, hi + 1))
        content = tuple(int(t) for t in rng.integers(spec.text_vocab, size=length))
        speech = render_speech(content, timbre, None, rng, spec)
        shadow = tuple(
            int(rng.integers(spec.text_vocab)) if rng.random() < 0.2 else t
            for t in content
        )
        prompt = render_speech(shadow, timbre, None, rng, spec)
        out.append(
            TrainSample(
                text=content,
                speech=speech,
                prompt=prompt,
                prototype_index=0,
                condition=0,
                prompt_condition=0,
            )
        )
    return out


def vc_training_samples(corpus: Corpus, pairs: list[Utterance]) -> list[TrainSample]:
    """Voice-converted pair -> sample whose prompt comes from the donor.

    The target carries the source speaker's pathology in the donor's timbre,
    so the prompt is a real utterance of the donor and the prototype row is
    the source's. Labels follow articulation: the pair counts as dysarthric.
    """
    proto = prototype_index_map(corpus)
    by_speaker: dict[str, list[Utterance]] = {}
    by_id: dict[str, Utterance] = {}
    for u in corpus.utterances:
        if not u.synthetic:
            by_speaker.setdefault(u.speaker_id, []).append(u)
            by_id[u.utt_id] = u
    samples = []
    for pair in pairs:
        donor = pair.speaker_id
        source = by_id[pair.source_utt_id].speaker_id
        rng = derive_rng(corpus.spec.seed, "vc-prompt", pair.utt_id)
        prompt_utt = by_speaker[donor][rng.integers(len(by_speaker[donor]))]
        samples.append(
            TrainSample(
                text=pair.content,
                speech=pair.speech,
                prompt=prompt_utt.speech,
                prototype_index=proto[source],
                condition=int(pair.condition != 0),
                prompt_condition=int(prompt_utt.condition != 0),
            )
        )
    return samples


def select_batch(
    real: list[TrainSample],
    vc: list[TrainSample],
    config: TrainConfig,
    step: int,
    label: str,
) -> list[TrainSample]:
    """Batch composition as a pure function of (seed, step)."""
    rng = derive_rng(config.seed, label, step)
    n_vc = round(config.batch_size * config.vc_fraction) if vc else 0
    n_real = config.batch_size - n_vc
    picks = [real[i] for i in rng.integers(len(real), size=n_real)]
    if n_vc:
        picks += [vc[i] for i in rng.integers(len(vc), size=n_vc)]
    return picks


# -- steps ---------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    l_tts: float
    l_dys: float
    l_adv: float
    total: float


@dataclass
class TrainingRecord:
    pretrain_curve: list[StepRecord] = field(default_factory=list)
    finetune_curve: list[StepRecord] = field(default_factory=list)
    manifest: ParameterGroupManifest | None = None


def _batch_tensors(batch: list[TrainSample], eos: int):
    texts = [torch.tensor(s.text, dtype=torch.long) for s in batch]
    speeches = [torch.tensor(s.speech, dtype=torch.long) for s in batch]
    prompts = [torch.tensor(s.prompt, dtype=torch.long) for s in batch]
    text_targets = torch.cat(texts) if texts else torch.empty(0, dtype=torch.long)
    speech_targets = torch.cat(
        [torch.cat([sp, torch.tensor([eos])]) for sp in speeches]
    )
    labels = torch.tensor([s.condition for s in batch], dtype=torch.long)
    prompt_labels = torch.tensor([s.prompt_condition for s in batch], dtype=torch.long)
    return texts, speeches, prompts, text_targets, speech_targets, labels, prompt_labels


def train_step(
    model: SynthesisModel,
    batch: list[TrainSample],
    optimizer: torch.optim.Optimizer,
    config: TrainConfig,
    step: int,
) -> StepRecord:
    """One fine-tuning update on a prepared batch."""
    eos = model.config.speech_eos
    texts, speeches, prompts, text_t, speech_t, labels, prompt_labels = _batch_tensors(
        batch, eos
    )
    s = model.speaker_encoder.encode_batch(prompts)
    p = model.codebook.lookup_batch([b.prototype_index for b in batch])
    z = s + p
    text_logits, speech_logits = model.backbone.forward_streams(z, texts, speeches)
    l_tts = tts_loss(speech_logits, speech_t, text_logits, text_t)
    if config.ablation_no_disent:
        parts = LossParts(l_tts=l_tts, l_dys=0.0, l_adv=0.0, alpha=0.0, beta=0.0)
        l_dys_val = l_adv_val = 0.0
    else:
        ce = torch.nn.functional.cross_entropy
        l_dys = ce(classify_dys(model.dys_classifier, z), labels)
        l_adv = ce(
            classify_adv(model.adv_classifier, s, config.grl_strength), prompt_labels
        )
        parts = LossParts(l_tts=l_tts, l_dys=l_dys, l_adv=l_adv,
                          alpha=config.alpha, beta=config.beta)
        l_dys_val, l_adv_val = l_dys.item(), l_adv.item()
    total = total_loss(parts)
    if not math.isfinite(total.item()):
        raise NumericError(f"non-finite loss at step {step}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return StepRecord(step, l_tts.item(), l_dys_val, l_adv_val, total.item())


def pretrain(
    model: SynthesisModel, corpus: Corpus, config: TrainConfig
) -> list[StepRecord]:
    """Fit the base model on healthy utterances with z = s (no prototypes)."""
    config.validate()
    torch.set_num_threads(1)
    healthy = {s for s in corpus.healthy_speaker_ids()}
    if not healthy:
        raise PreconditionError("pre-training needs healthy speakers")
    pool = [
        _sample_from_utterance(u, 0)
        for u in corpus.utterances
        if u.speaker_id in healthy and not u.synthetic
    ]
    params = model.backbone.base_parameters() + list(
        model.speaker_encoder.parameters()
    )
    optimizer = _make_optimizer(
        [{"params": params, "lr": config.lr_pretrain}], config.optimizer
    )
    eos = model.config.speech_eos
    n_fresh = config.batch_size // 2
    curve = []
    for step in range(config.pretrain_steps):
        rng = derive_rng(config.seed, "pretrain-batch", step)
        batch = [pool[i] for i in rng.integers(len(pool), size=config.batch_size - n_fresh)]
        batch += synthetic_voice_samples(corpus, config.seed, step, n_fresh)
        texts, speeches, prompts, text_t, speech_t, _, _ = _batch_tensors(batch, eos)
        z = model.speaker_encoder.encode_batch(prompts)
        text_logits, speech_logits = model.backbone.forward_streams(z, texts, speeches)
        loss = tts_loss(speech_logits, speech_t, text_logits, text_t)
        if not math.isfinite(loss.item()):
            raise NumericError(f"non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        curve.append(StepRecord(step, loss.item(), 0.0, 0.0, loss.item()))
    model.stage = "pretrained"
    return curve


def finetune(
    model: SynthesisModel, corpus: Corpus, config: TrainConfig
) -> tuple[list[StepRecord], ParameterGroupManifest]:
    """Adapt a pre-trained model on the full corpus plus voice-converted pairs."""
    config.validate()
    torch.set_num_threads(1)
    if model.stage == "init":
        raise PreconditionError("fine-tuning requires a pre-trained model")
    # classifier dropout draws from the torch stream; pin it so reruns match
    torch.manual_seed(derive_seed(config.seed, "finetune-dropout"))
    model.train()
    groups, manifest = build_param_groups(model, config)
    for p in model.backbone.base_parameters():
        p.requires_grad_(False)
    for p in model.speaker_encoder.conditioner.parameters():
        p.requires_grad_(False)
    optimizer = _make_optimizer(groups, config.optimizer)
    real = real_training_samples(corpus)
    vc = vc_training_samples(corpus, make_vc_pairs(corpus))
    curve = []
    for step in range(config.finetune_steps):
        batch = select_batch(real, vc, config, step, "finetune-batch")
        curve.append(train_step(model, batch, optimizer, config, step))
    model.stage = "finetuned"
    return curve, manifest


def train(model: SynthesisModel, corpus: Corpus, config: TrainConfig) -> TrainingRecord:
    """Full two-stage schedule; resumes from 'pretrained' if already done."""
    record = TrainingRecord()
    if model.stage == "init":
        record.pretrain_curve = pretrain(model, corpus, config)
    record.finetune_curve, record.manifest = finetune(model, corpus, config)
    return record
