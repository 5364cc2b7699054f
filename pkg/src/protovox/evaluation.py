"""Evaluation harness: speaker embedder, similarity tables, probes, sweeps.

Everything here is deterministic given its seed arguments. The speaker
embedder is trained on healthy speakers only and then frozen, standing in
for an external pre-trained identity model that never saw the pairs it is
asked to compare.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import stats

from .asr import AsrConfig, ToyASR, train_asr
from .corpus import Corpus, Utterance, loso_split
from .errors import PairingError, PreconditionError, ProtovoxError
from .metrics import cosine_similarity, error_rate, fine_units
from .model import SynthesisModel
from .pipelines import AugmentationPlan, augment_healthy_to_dysarthric, build_augmented_set, reconstruct
from .seeding import derive_rng, derive_seed


class SpeakerEmbedder(nn.Module):
    """Speaker identity vector from a voice-offset profile.

    Speech ids decompose into a content block and a within-block offset, so
    the offset pattern per content cell is the token analogue of voice
    quality: it survives across utterances while raw ids follow the words.
    The frontend builds that per-content offset profile (rows sum to one);
    a linear body over it is trained with a speaker-classification objective
    and frozen. Pause tokens are dropped before counting, the token-level
    equivalent of running voice activity detection before embedding, so
    silence carries no identity. Identical sequences embed identically by
    construction. Input cells never activated during healthy-only training
    keep their random initial columns, which still preserve profile angles
    for unseen speakers.
    """

    def __init__(self, speech_vocab: int, text_vocab: int, dim: int = 32,
                 n_speakers: int = 2, pause_id: int | None = None):
        super().__init__()
        self.speech_vocab = speech_vocab
        self.text_vocab = text_vocab
        self.block = (speech_vocab - 1) // text_vocab
        self.pause_id = pause_id
        self.body = nn.Linear(text_vocab * self.block, dim)
        self.head = nn.Linear(dim, n_speakers)

    def profile(self, speech: tuple[int, ...]) -> torch.Tensor:
        grid = torch.zeros(self.text_vocab, self.block)
        for t in speech:
            if t == self.pause_id or t >= self.text_vocab * self.block:
                continue
            grid[t // self.block, t % self.block] += 1.0
        sums = grid.sum(dim=1, keepdim=True).clamp(min=1.0)
        return (grid / sums).reshape(-1)

    def embed(self, speech: tuple[int, ...]) -> torch.Tensor:
        with torch.no_grad():
            return self.body(self.profile(speech))

    def forward(self, profiles: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(profiles))


def train_embedder(
    corpus: Corpus, seed: int = 0, steps: int = 300, lr: float = 1e-2
) -> SpeakerEmbedder:
    """Fit the embedder on healthy speakers only, then freeze it."""
    torch.set_num_threads(1)
    healthy = corpus.healthy_speaker_ids()
    if len(healthy) < 2:
        raise PreconditionError("embedder training needs at least two healthy speakers")
    index = {s: i for i, s in enumerate(sorted(healthy))}
    utts = [u for u in corpus.utterances if u.speaker_id in index and not u.synthetic]
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(derive_seed(seed, "embedder-init"))
        embedder = SpeakerEmbedder(
            corpus.spec.speech_vocab, corpus.spec.text_vocab,
            n_speakers=len(index), pause_id=corpus.pause_id,
        )
    finally:
        torch.random.set_rng_state(state)
    histograms = torch.stack([embedder.profile(u.speech) for u in utts])
    labels = torch.tensor([index[u.speaker_id] for u in utts])
    optimizer = torch.optim.Adam(embedder.parameters(), lr=lr)
    for _ in range(steps):
        loss = F.cross_entropy(embedder(histograms), labels)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    for p in embedder.parameters():
        p.requires_grad_(False)
    return embedder


def enrollment_embedding(
    corpus: Corpus,
    embedder: SpeakerEmbedder,
    speaker_id: str,
    exclude_utt_id: str | None = None,
) -> np.ndarray:
    """Mean embedding of a speaker's real utterances, optionally leave-one-out."""
    vectors = [
        embedder.embed(u.speech).numpy()
        for u in corpus.utterances_of(speaker_id)
        if not u.synthetic and u.utt_id != exclude_utt_id
    ]
    if not vectors:
        raise PreconditionError(f"no enrollment utterances for {speaker_id!r}")
    return np.mean(vectors, axis=0)


def speaker_similarity_eval(
    originals: list[Utterance],
    reconstructions: list[tuple[int, ...]],
    embedder: SpeakerEmbedder,
    corpus: Corpus,
) -> dict[str, float]:
    """Mean cosine similarity per speaker against enrollment references.

    Each reconstruction is scored against the source speaker's other real
    utterances (leave-one-out mean embedding), the verification convention.
    Scoring against the source utterance itself would reward echoing its
    one-off distortions instead of rendering the voice.
    """
    if len(originals) != len(reconstructions):
        raise PairingError(
            f"{len(originals)} originals for {len(reconstructions)} reconstructions"
        )
    sums: dict[str, list[float]] = {}
    for utt, recon in zip(originals, reconstructions):
        reference = enrollment_embedding(corpus, embedder, utt.speaker_id, utt.utt_id)
        sim = cosine_similarity(embedder.embed(recon).numpy(), reference)
        sums.setdefault(utt.speaker_id, []).append(sim)
    return {s: float(np.mean(v)) for s, v in sums.items()}


@dataclass
class CmhrResult:
    similarities: dict[str, float | None]
    skipped: int


def cmhr_baseline(
    corpus: Corpus, embedder: SpeakerEmbedder, seed: int = 0, draws: int = 3
) -> CmhrResult:
    """Content-matched healthy reference similarity per dysarthric speaker.

    For each dysarthric utterance, a healthy utterance with exactly the same
    content stands in as the "reconstruction" and is scored against the
    dysarthric speaker's enrollment references, averaged over a few draws.
    Utterances with no match are skipped and counted, and a speaker with no
    scored utterances gets None (absent, not zero).
    """
    healthy_ids = set(corpus.healthy_speaker_ids())
    by_content: dict[tuple[int, ...], list[Utterance]] = {}
    for u in corpus.utterances:
        if u.speaker_id in healthy_ids and not u.synthetic:
            by_content.setdefault(u.content, []).append(u)
    per_speaker: dict[str, list[float]] = {s: [] for s in corpus.dysarthric_speaker_ids()}
    skipped = 0
    for u in corpus.utterances:
        if u.speaker_id in healthy_ids or u.synthetic:
            continue
        matches = [m for m in by_content.get(u.content, ()) if m.speaker_id != u.speaker_id]
        if not matches:
            skipped += 1
            continue
        reference = enrollment_embedding(corpus, embedder, u.speaker_id, u.utt_id)
        rng = derive_rng(seed, "cmhr", u.utt_id)
        sims = []
        for _ in range(draws):
            m = matches[int(rng.integers(len(matches)))]
            sims.append(cosine_similarity(embedder.embed(m.speech).numpy(), reference))
        per_speaker[u.speaker_id].append(float(np.mean(sims)))
    return CmhrResult(
        {s: (float(np.mean(v)) if v else None) for s, v in per_speaker.items()},
        skipped,
    )


def probe_disentanglement(
    embeddings: list[np.ndarray] | np.ndarray,
    labels: list[int],
    seed: int = 0,
    steps: int = 300,
    groups: list[str] | None = None,
) -> float:
    """Held-out accuracy of a fresh probe trained to predict labels from vectors.

    With `groups` (speaker ids), the train/test split is group-disjoint, so
    the probe has to find label features that transfer to unseen speakers
    rather than memorizing per-speaker clusters. That is the right reading
    of articulation invariance when every speaker has a fixed condition.
    """
    x = torch.tensor(np.asarray(embeddings), dtype=torch.float32)
    y = torch.tensor(labels, dtype=torch.long)
    if len(set(labels)) < 2:
        raise PreconditionError("probe needs at least two classes")
    if len(x) != len(y):
        raise PairingError(f"{len(x)} embeddings for {len(y)} labels")
    if groups is not None:
        if len(groups) != len(x):
            raise PairingError(f"{len(x)} embeddings for {len(groups)} group tags")
        unique = sorted(set(groups))
        label_of_group = {}
        for g, lbl in zip(groups, labels):
            label_of_group[g] = lbl
        rng = derive_rng(seed, "probe-group-split")
        held: set[str] = set()
        # Hold out ~30% of groups, at least one per class.
        for lbl in sorted(set(labels)):
            members = [g for g in unique if label_of_group[g] == lbl]
            count = max(1, round(0.3 * len(members)))
            picks = rng.permutation(len(members))[:count]
            held.update(members[i] for i in picks)
        test_mask = np.array([g in held for g in groups])
        train_idx = np.flatnonzero(~test_mask)
        test_idx = np.flatnonzero(test_mask)
    else:
        order = derive_rng(seed, "probe-split").permutation(len(x))
        split = max(1, int(0.7 * len(x)))
        train_idx, test_idx = order[:split], order[split:]
    if len(set(y[train_idx].tolist())) < 2 or len(test_idx) == 0:
        raise PreconditionError("split left a single-class train set or empty test set")
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(derive_seed(seed, "probe-init"))
        probe = nn.Sequential(
            nn.Linear(x.shape[1], 32), nn.GELU(), nn.Linear(32, 2)
        )
    finally:
        torch.random.set_rng_state(state)
    optimizer = torch.optim.Adam(probe.parameters(), lr=1e-2)
    xt, yt = x[train_idx], y[train_idx]
    for _ in range(steps):
        loss = F.cross_entropy(probe(xt), yt)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        predictions = probe(x[test_idx]).argmax(dim=-1)
    return float((predictions == y[test_idx]).float().mean())


def model_speaker_vectors(
    model: SynthesisModel, corpus: Corpus
) -> tuple[np.ndarray, list[int], list[str]]:
    """Speaker vector s for every real utterance, with binary condition labels.

    Also returns the speaker id per row so probes can split by speaker.
    """
    vectors = []
    labels = []
    speakers = []
    with torch.no_grad():
        for u in corpus.utterances:
            if u.synthetic:
                continue
            s = model.encode_speaker(torch.tensor(u.speech, dtype=torch.long))
            vectors.append(s.numpy())
            labels.append(int(u.condition != 0))
            speakers.append(u.speaker_id)
    return np.asarray(vectors), labels, speakers


# -- experiment drivers ----------------------------------------------------------


@dataclass
class SweepResult:
    ratios: tuple[float, ...]
    wer: dict[float, dict[str, float]] = field(default_factory=dict)

    def mean_wer(self, ratio: float) -> float:
        cells = self.wer[ratio]
        return float(np.mean(list(cells.values())))

    def spearman_vs_ratio(self) -> float:
        means = [self.mean_wer(r) for r in self.ratios]
        rho = stats.spearmanr(self.ratios, means).statistic
        return float(rho)


def evaluate_wer(asr: ToyASR, utterances: list[Utterance]) -> float:
    """Corpus-level WER: pooled edit operations over pooled reference length."""
    speeches = [torch.tensor(u.speech, dtype=torch.long) for u in utterances]
    hyps = asr.transcribe_batch(speeches)
    ops = 0
    ref_len = 0
    for u, hyp in zip(utterances, hyps):
        r = error_rate(u.content, hyp)
        ops += r.substitutions + r.deletions + r.insertions
        ref_len += r.reference_length
    return ops / ref_len


def evaluate_per(asr: ToyASR, utterances: list[Utterance]) -> float:
    """PER analogue: error rate over fine sub-units of the text tokens."""
    speeches = [torch.tensor(u.speech, dtype=torch.long) for u in utterances]
    hyps = asr.transcribe_batch(speeches)
    ops = 0
    ref_len = 0
    for u, hyp in zip(utterances, hyps):
        r = error_rate(fine_units(u.content), fine_units(hyp))
        ops += r.substitutions + r.deletions + r.insertions
        ref_len += r.reference_length
    return ops / ref_len


def run_sweep(
    corpus: Corpus,
    ratios: tuple[float, ...],
    model: SynthesisModel,
    seed: int = 0,
    asr_config: AsrConfig | None = None,
    eval_speakers: tuple[str, ...] | None = None,
) -> SweepResult:
    """Augmentation-ratio ladder: per ratio and held-out speaker, train + score.

    Held-out speakers default to the severe tier. For each cell the recognizer
    trains on everyone else's real data plus ratio-scaled synthetic data, and
    is scored on the held-out speaker's real utterances.
    """
    if eval_speakers is None:
        eval_speakers = tuple(
            s for s in corpus.dysarthric_speaker_ids() if corpus.severity_of(s) == "severe"
        )
    if not eval_speakers:
        raise PreconditionError("no held-out speakers to evaluate")
    result = SweepResult(ratios=tuple(ratios))
    for ratio in ratios:
        cells: dict[str, float] = {}
        for speaker in eval_speakers:
            try:
                train_corpus, test_corpus = loso_split(corpus, speaker)
                plan = AugmentationPlan(
                    ratio=ratio, seed=derive_seed(seed, "sweep", ratio, speaker)
                )
                augmented = build_augmented_set(train_corpus, plan, model)
                asr, _ = train_asr(
                    augmented, derive_seed(seed, "sweep-asr", ratio, speaker), asr_config
                )
                cells[speaker] = evaluate_wer(asr, list(test_corpus.utterances))
            except ProtovoxError as exc:
                raise type(exc)(
                    f"sweep cell (ratio={ratio}, speaker={speaker}): {exc}"
                ) from exc
        result.wer[ratio] = cells
    return result


@dataclass
class SubstitutionResult:
    wer: dict[str, dict[str, float]] = field(default_factory=dict)  # condition -> speaker
    per: dict[str, dict[str, float]] = field(default_factory=dict)

    CONDITIONS = ("no-adapt", "real", "synthetic")

    def mean_wer(self, condition: str) -> float:
        return float(np.mean(list(self.wer[condition].values())))

    def mean_per(self, condition: str) -> float:
        return float(np.mean(list(self.per[condition].values())))


def synthesize_substitution_set(
    corpus: Corpus, model: SynthesisModel, speakers: tuple[str, ...], seed: int
) -> list[Utterance]:
    """Speaker-specific synthetic stand-in for the real dysarthric train set.

    For every real utterance of the given dysarthric speakers, synthesize a
    replacement using that speaker's own prototype and own prompt.
    """
    proto = {s: corpus.dysarthric_condition_of(s) for s in speakers}
    out = []
    for u in (u for u in corpus.utterances if u.speaker_id in proto and not u.synthetic):
        out.append(
            augment_healthy_to_dysarthric(
                model, u, proto[u.speaker_id],
                seed=derive_seed(seed, "subst", u.utt_id),
                severity=u.severity,
                utt_id=f"subst-{u.utt_id}",
            )
        )
    return out


def run_substitution_experiment(
    corpus: Corpus,
    model: SynthesisModel,
    seed: int = 0,
    asr_config: AsrConfig | None = None,
    adapt_config: AsrConfig | None = None,
    eval_speakers: tuple[str, ...] | None = None,
    return_base_asr: bool = False,
):
    """Three-way comparison: unadapted vs real-adapted vs synthetic-adapted.

    The unadapted recognizer trains on healthy speech only. Under LOSO, each
    held-out dysarthric speaker's scores come from (a) that base model as-is,
    (b) the base model adapted on the other dysarthric speakers' real
    utterances, (c) the base model adapted on a same-sized synthetic set
    generated with those speakers' own prototypes and prompts.
    """
    if eval_speakers is None:
        eval_speakers = corpus.dysarthric_speaker_ids()
    healthy_ids = set(corpus.healthy_speaker_ids())
    healthy_only = Corpus(
        tuple(u for u in corpus.utterances if u.speaker_id in healthy_ids and not u.synthetic),
        corpus.speaker_factors, corpus.pathology_factors, corpus.spec,
    )
    base_asr, _ = train_asr(healthy_only, derive_seed(seed, "subst-base"), asr_config)
    result = SubstitutionResult()
    for c in result.CONDITIONS:
        result.wer[c] = {}
        result.per[c] = {}
    for speaker in eval_speakers:
        test_utts = list(corpus.utterances_of(speaker))
        train_speakers = tuple(
            s for s in corpus.dysarthric_speaker_ids() if s != speaker
        )
        real_utts = [
            u for u in corpus.utterances
            if u.speaker_id in train_speakers and not u.synthetic
        ]
        synth_utts = synthesize_substitution_set(
            corpus, model, train_speakers, derive_seed(seed, "subst-syn", speaker)
        )
        for condition, utts in (
            ("no-adapt", None), ("real", real_utts), ("synthetic", synth_utts),
        ):
            if utts is None:
                asr = base_asr
            else:
                adapt_set = Corpus(
                    tuple(utts), corpus.speaker_factors, corpus.pathology_factors,
                    corpus.spec,
                )
                asr, _ = train_asr(
                    adapt_set,
                    derive_seed(seed, "subst-adapt", condition, speaker),
                    adapt_config or asr_config,
                    init=base_asr,
                )
            result.wer[condition][speaker] = evaluate_wer(asr, test_utts)
            result.per[condition][speaker] = evaluate_per(asr, test_utts)
    if return_base_asr:
        return result, base_asr
    return result


def reconstruct_all(
    model: SynthesisModel,
    corpus: Corpus,
    asr: ToyASR | None = None,
    oracle_text: bool = True,
    speakers: tuple[str, ...] | None = None,
) -> tuple[list[Utterance], list[tuple[int, ...]]]:
    """Reconstruction pairs (original, reconstructed speech) for evaluation."""
    if speakers is None:
        speakers = corpus.dysarthric_speaker_ids()
    originals = []
    recons = []
    for speaker in speakers:
        for u in corpus.utterances_of(speaker):
            if u.synthetic:
                continue
            r = reconstruct(model, asr, u, oracle_text=oracle_text)
            originals.append(u)
            recons.append(r.reconstructed_speech)
    return originals, recons
