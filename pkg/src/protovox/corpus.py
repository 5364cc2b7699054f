"""Synthetic factorized corpus: data model, generator, pair construction, splits.

Utterances carry discrete text tokens and discrete speech tokens. Speech is a
pure function of (content, speaker timbre, articulation condition, noise
stream): a deterministic per-speaker token mapping plus stochastic distortions
(substitution, repetition, pause insertion) whose rates grow with severity.
Ground-truth factors are kept alongside the utterances so that downstream
disentanglement claims can be checked against an oracle.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, LookupError_, ParseError, PreconditionError
from .seeding import derive_rng

SEVERITIES = ("healthy", "mild", "moderate", "moderate_severe", "severe")
SEVERITY_RANK = {name: rank for rank, name in enumerate(SEVERITIES)}

# (substitution, repetition, pause-insertion) probabilities per dysarthric tier.
TIER_DISTORTION = {
    "mild": (0.05, 0.05, 0.05),
    "moderate": (0.10, 0.10, 0.10),
    "moderate_severe": (0.20, 0.18, 0.18),
    "severe": (0.35, 0.25, 0.25),
}

# Dysarthric severity tiers cycle through this pattern (4 severe, 1
# moderate-severe, 1 moderate, 2 mild per 8 speakers).
TIER_PATTERN = (
    "severe", "severe", "severe", "severe",
    "moderate_severe", "moderate", "mild", "mild",
)

CORPUS_COLUMNS = ("utt_id", "speaker_id", "condition", "severity", "content", "speech")
CORPUS_COLUMNS_SYNTH = CORPUS_COLUMNS + ("synthetic", "source_utt_id")


@dataclass(frozen=True)
class Utterance:
    """One corpus record; `speech` always at least as long as `content`."""

    utt_id: str
    speaker_id: str
    content: tuple[int, ...]
    speech: tuple[int, ...]
    condition: int
    severity: str
    synthetic: bool = False
    source_utt_id: str | None = None


@dataclass(frozen=True)
class SpeakerFactor:
    """Ground-truth generator latent for one speaker (unit-norm timbre)."""

    speaker_id: str
    timbre: tuple[float, ...]


@dataclass(frozen=True)
class PathologyFactor:
    """Per-position distortion probabilities for one dysarthric condition."""

    condition: int
    substitution_prob: float
    repeat_prob: float
    pause_prob: float


@dataclass(frozen=True)
class CorpusSpec:
    n_dysarthric_speakers: int = 8
    n_healthy_speakers: int = 7
    utterances_per_speaker: int = 30
    content_length_range: tuple[int, int] = (6, 12)
    text_vocab: int = 28
    speech_vocab: int = 225
    timbre_dim: int = 12
    seed: int = 0

    def validate(self) -> None:
        if self.n_dysarthric_speakers < 1:
            raise ConfigurationError("n_dysarthric_speakers must be >= 1")
        if self.n_healthy_speakers < 1:
            raise ConfigurationError("n_healthy_speakers must be >= 1")
        if self.utterances_per_speaker < 1:
            raise ConfigurationError("utterances_per_speaker must be >= 1")
        lo, hi = self.content_length_range
        if not (1 <= lo <= hi):
            raise ConfigurationError("content_length_range must satisfy 1 <= lo <= hi")
        if self.text_vocab < 2:
            raise ConfigurationError("text_vocab must be >= 2")
        # One id is reserved for the pause token; every content token needs a
        # block of >= 2 speech ids so timbre can vary the mapping.
        if (self.speech_vocab - 1) // self.text_vocab < 2:
            raise ConfigurationError(
                "speech_vocab must be >= 2 * text_vocab + 1 (one pause id reserved)"
            )
        if self.timbre_dim < 1:
            raise ConfigurationError("timbre_dim must be >= 1")


@dataclass(frozen=True)
class Corpus:
    utterances: tuple[Utterance, ...]
    speaker_factors: dict[str, SpeakerFactor]
    pathology_factors: dict[int, PathologyFactor]
    spec: CorpusSpec

    def __post_init__(self):
        for utt in self.utterances:
            if utt.speaker_id not in self.speaker_factors:
                raise ConfigurationError(f"speaker_id {utt.speaker_id!r} has no factor entry")
            if utt.condition != 0 and utt.condition not in self.pathology_factors:
                raise ConfigurationError(f"condition {utt.condition} has no factor entry")

    @property
    def speaker_ids(self) -> tuple[str, ...]:
        seen = dict.fromkeys(u.speaker_id for u in self.utterances)
        return tuple(seen)

    def healthy_speaker_ids(self) -> tuple[str, ...]:
        conditions = {u.speaker_id: u.condition for u in self.utterances}
        return tuple(s for s, k in conditions.items() if k == 0)

    def dysarthric_speaker_ids(self) -> tuple[str, ...]:
        conditions = {u.speaker_id: u.condition for u in self.utterances}
        return tuple(s for s, k in conditions.items() if k != 0)

    def dysarthric_condition_of(self, speaker_id: str) -> int:
        for utt in self.utterances:
            if utt.speaker_id == speaker_id:
                return utt.condition
        raise LookupError_(f"speaker {speaker_id!r} has no utterances")

    def utterances_of(self, speaker_id: str) -> tuple[Utterance, ...]:
        return tuple(u for u in self.utterances if u.speaker_id == speaker_id)

    def severity_of(self, speaker_id: str) -> str:
        for utt in self.utterances:
            if utt.speaker_id == speaker_id:
                return utt.severity
        raise LookupError_(f"speaker {speaker_id!r} has no utterances")

    @property
    def pause_id(self) -> int:
        return self.spec.speech_vocab - 1


def pause_token_id(spec: CorpusSpec) -> int:
    """The reserved pause id is always the last speech token."""
    return spec.speech_vocab - 1


def _voice_key(timbre: tuple[float, ...]) -> bytes:
    return hashlib.sha256(np.asarray(timbre, dtype="<f8").tobytes()).digest()


def clean_token(content_token: int, timbre: tuple[float, ...], spec: CorpusSpec) -> int:
    """Distortion-free speech token for one content token under one timbre.

    Speech ids below the pause token are laid out in per-content blocks of
    size (speech_vocab - 1) // text_vocab; the timbre selects the offset
    inside the block, so content survives across speakers while the exact id
    carries speaker identity.
    """
    block = (spec.speech_vocab - 1) // spec.text_vocab
    digest = hashlib.sha256(_voice_key(timbre) + content_token.to_bytes(4, "little")).digest()
    offset = int.from_bytes(digest[:8], "little") % block
    return content_token * block + offset


def render_speech(
    content: tuple[int, ...],
    timbre: tuple[float, ...],
    factor: PathologyFactor | None,
    rng: np.random.Generator,
    spec: CorpusSpec,
) -> tuple[int, ...]:
    """Render speech tokens for content under a timbre and articulation condition.

    `factor=None` means healthy articulation (all distortion probabilities 0).
    Distortions only insert or substitute, never drop, so the output is at
    least as long as the content. The rng is the utterance's noise stream;
    the result is a pure function of all four arguments.
    """
    if factor is None:
        p_sub, p_rep, p_pause = 0.0, 0.0, 0.0
    else:
        p_sub, p_rep, p_pause = factor.substitution_prob, factor.repeat_prob, factor.pause_prob
    pause = pause_token_id(spec)
    usable = spec.speech_vocab - 1
    out: list[int] = []
    for tok in content:
        if p_pause > 0 and rng.random() < p_pause:
            out.append(pause)
        emitted = clean_token(tok, timbre, spec)
        if p_sub > 0 and rng.random() < p_sub:
            emitted = int(rng.integers(0, usable))
        out.append(emitted)
        if p_rep > 0 and rng.random() < p_rep:
            out.append(emitted)
    return tuple(out)


def utterance_noise_stream(spec: CorpusSpec, utt_id: str) -> np.random.Generator:
    """Noise stream for one utterance, derived from (corpus seed, utt id)."""
    return derive_rng(spec.seed, "render", utt_id)


def distortion_stats(speech: tuple[int, ...], pause_id: int) -> tuple[float, float]:
    """(pause-token rate, adjacent-repetition rate) of a speech sequence."""
    if not speech:
        return 0.0, 0.0
    n_pause = sum(1 for t in speech if t == pause_id)
    n_rep = sum(
        1 for i in range(1, len(speech))
        if speech[i] == speech[i - 1] and speech[i] != pause_id
    )
    return n_pause / len(speech), n_rep / len(speech)


def _speaker_rosters(spec: CorpusSpec) -> tuple[list[tuple[str, str, int]], list[str]]:
    """([(dysarthric id, tier, condition)], [healthy ids])."""
    dys = []
    for i in range(spec.n_dysarthric_speakers):
        tier = TIER_PATTERN[i % len(TIER_PATTERN)]
        dys.append((f"D{i + 1:02d}", tier, i + 1))
    healthy = [f"H{i + 1:02d}" for i in range(spec.n_healthy_speakers)]
    return dys, healthy


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Generate the synthetic corpus described by `spec`.

    Deterministic given spec.seed. All speakers share one content pool of
    `utterances_per_speaker` token sequences (so content-matched cross-speaker
    pairs always exist); each speaker renders every pooled sequence once.
    """
    spec.validate()
    dys_roster, healthy_ids = _speaker_rosters(spec)

    speaker_factors: dict[str, SpeakerFactor] = {}
    pathology_factors: dict[int, PathologyFactor] = {}
    speaker_condition: dict[str, int] = {}
    speaker_severity: dict[str, str] = {}

    for speaker_id, tier, condition in dys_roster:
        sub, rep, pause = TIER_DISTORTION[tier]
        pathology_factors[condition] = PathologyFactor(condition, sub, rep, pause)
        speaker_condition[speaker_id] = condition
        speaker_severity[speaker_id] = tier
    for speaker_id in healthy_ids:
        speaker_condition[speaker_id] = 0
        speaker_severity[speaker_id] = "healthy"

    for speaker_id in list(speaker_condition):
        rng = derive_rng(spec.seed, "timbre", speaker_id)
        vec = rng.standard_normal(spec.timbre_dim)
        vec = vec / np.linalg.norm(vec)
        speaker_factors[speaker_id] = SpeakerFactor(speaker_id, tuple(float(x) for x in vec))

    lo, hi = spec.content_length_range
    pool: list[tuple[int, ...]] = []
    for j in range(spec.utterances_per_speaker):
        rng = derive_rng(spec.seed, "content", j)
        length = int(rng.integers(lo, hi + 1))
        pool.append(tuple(int(t) for t in rng.integers(0, spec.text_vocab, size=length)))

    utterances: list[Utterance] = []
    for speaker_id, condition in speaker_condition.items():
        factor = pathology_factors.get(condition)
        timbre = speaker_factors[speaker_id].timbre
        for j, content in enumerate(pool):
            utt_id = f"{speaker_id}-u{j:03d}"
            speech = render_speech(
                content, timbre, factor, utterance_noise_stream(spec, utt_id), spec
            )
            utterances.append(
                Utterance(
                    utt_id=utt_id,
                    speaker_id=speaker_id,
                    content=content,
                    speech=speech,
                    condition=condition,
                    severity=speaker_severity[speaker_id],
                )
            )

    return Corpus(tuple(utterances), speaker_factors, pathology_factors, spec)


def make_vc_pairs(corpus: Corpus) -> list[Utterance]:
    """Cross-condition, timbre-shifted re-renderings of every utterance.

    Dysarthric utterances keep their articulation condition but take a random
    healthy speaker's timbre; healthy utterances keep condition 0 and take a
    random dysarthric speaker's timbre. Labels always follow the articulation,
    never the timbre donor. Deterministic given the corpus.
    """
    healthy = corpus.healthy_speaker_ids()
    dysarthric = corpus.dysarthric_speaker_ids()
    if not healthy or not dysarthric:
        raise PreconditionError(
            "pair construction needs at least one healthy and one dysarthric speaker"
        )
    pairs: list[Utterance] = []
    for utt in corpus.utterances:
        rng = derive_rng(corpus.spec.seed, "vc", utt.utt_id)
        donors = healthy if utt.condition != 0 else dysarthric
        donor = donors[int(rng.integers(0, len(donors)))]
        factor = corpus.pathology_factors.get(utt.condition)
        pair_id = f"{utt.utt_id}-vc-{donor}"
        speech = render_speech(
            utt.content,
            corpus.speaker_factors[donor].timbre,
            factor,
            utterance_noise_stream(corpus.spec, pair_id),
            corpus.spec,
        )
        pairs.append(
            Utterance(
                utt_id=pair_id,
                speaker_id=donor,
                content=utt.content,
                speech=speech,
                condition=utt.condition,
                severity=utt.severity,
                synthetic=True,
                source_utt_id=utt.utt_id,
            )
        )
    return pairs


def loso_split(corpus: Corpus, held_out: str) -> tuple[Corpus, Corpus]:
    """Partition into (train, test) with the held-out speaker as the test set."""
    if held_out not in corpus.speaker_factors:
        raise LookupError_(f"unknown speaker id {held_out!r}")
    train_utts = tuple(u for u in corpus.utterances if u.speaker_id != held_out)
    test_utts = tuple(u for u in corpus.utterances if u.speaker_id == held_out)
    train = replace(corpus, utterances=train_utts)
    test = replace(corpus, utterances=test_utts)
    return train, test


# ---------------------------------------------------------------------------
# Serialization: tab-separated utterance records plus a JSON factor sidecar.
# ---------------------------------------------------------------------------

def metadata_path(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base + ".meta.json" if ext else path + ".meta.json"


def serialize_corpus(corpus: Corpus, path: str) -> None:
    """Write one utterance per line (UTF-8 TSV) plus a factor-map sidecar."""
    has_synth = any(u.synthetic for u in corpus.utterances)
    columns = CORPUS_COLUMNS_SYNTH if has_synth else CORPUS_COLUMNS
    lines = ["\t".join(columns)]
    for u in corpus.utterances:
        row = [
            u.utt_id,
            u.speaker_id,
            str(u.condition),
            u.severity,
            " ".join(str(t) for t in u.content),
            " ".join(str(t) for t in u.speech),
        ]
        if has_synth:
            row.append("1" if u.synthetic else "0")
            row.append(u.source_utt_id or "")
        lines.append("\t".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    meta = {
        "version": 1,
        "spec": {
            "n_dysarthric_speakers": corpus.spec.n_dysarthric_speakers,
            "n_healthy_speakers": corpus.spec.n_healthy_speakers,
            "utterances_per_speaker": corpus.spec.utterances_per_speaker,
            "content_length_range": list(corpus.spec.content_length_range),
            "text_vocab": corpus.spec.text_vocab,
            "speech_vocab": corpus.spec.speech_vocab,
            "timbre_dim": corpus.spec.timbre_dim,
            "seed": corpus.spec.seed,
        },
        "speaker_factors": {
            sid: list(f.timbre) for sid, f in sorted(corpus.speaker_factors.items())
        },
        "pathology_factors": {
            str(k): {
                "substitution_prob": f.substitution_prob,
                "repeat_prob": f.repeat_prob,
                "pause_prob": f.pause_prob,
            }
            for k, f in sorted(corpus.pathology_factors.items())
        },
    }
    with open(metadata_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_tokens(text: str, line_no: int, col: str) -> tuple[int, ...]:
    if text == "":
        return ()
    try:
        return tuple(int(t) for t in text.split(" "))
    except ValueError as exc:
        raise ParseError(f"line {line_no}: bad {col} field: {exc}") from None


def deserialize_corpus(path: str) -> Corpus:
    """Inverse of serialize_corpus; raises ParseError with line context."""
    meta_file = metadata_path(path)
    try:
        with open(meta_file, encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"missing metadata sidecar {meta_file}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{meta_file}: {exc}") from None

    try:
        raw_spec = meta["spec"]
        spec = CorpusSpec(
            n_dysarthric_speakers=raw_spec["n_dysarthric_speakers"],
            n_healthy_speakers=raw_spec["n_healthy_speakers"],
            utterances_per_speaker=raw_spec["utterances_per_speaker"],
            content_length_range=tuple(raw_spec["content_length_range"]),
            text_vocab=raw_spec["text_vocab"],
            speech_vocab=raw_spec["speech_vocab"],
            timbre_dim=raw_spec["timbre_dim"],
            seed=raw_spec["seed"],
        )
        speaker_factors = {
            sid: SpeakerFactor(sid, tuple(timbre))
            for sid, timbre in meta["speaker_factors"].items()
        }
        pathology_factors = {
            int(k): PathologyFactor(
                int(k), f["substitution_prob"], f["repeat_prob"], f["pause_prob"]
            )
            for k, f in meta["pathology_factors"].items()
        }
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{meta_file}: missing or malformed field: {exc}") from None

    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file (expected a header line)")
    header = tuple(lines[0].split("\t"))
    if header not in (CORPUS_COLUMNS, CORPUS_COLUMNS_SYNTH):
        raise ParseError(f"{path}: line 1: unrecognized header {lines[0]!r}")
    has_synth = header == CORPUS_COLUMNS_SYNTH

    utterances: list[Utterance] = []
    for line_no, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise ParseError(
                f"{path}: line {line_no}: expected {len(header)} fields, got {len(fields)}"
            )
        try:
            condition = int(fields[2])
        except ValueError:
            raise ParseError(f"{path}: line {line_no}: bad condition {fields[2]!r}") from None
        if fields[3] not in SEVERITIES:
            raise ParseError(f"{path}: line {line_no}: unknown severity {fields[3]!r}")
        utterances.append(
            Utterance(
                utt_id=fields[0],
                speaker_id=fields[1],
                condition=condition,
                severity=fields[3],
                content=_parse_tokens(fields[4], line_no, "content"),
                speech=_parse_tokens(fields[5], line_no, "speech"),
                synthetic=fields[6] == "1" if has_synth else False,
                source_utt_id=(fields[7] or None) if has_synth else None,
            )
        )
    return Corpus(tuple(utterances), speaker_factors, pathology_factors, spec)
