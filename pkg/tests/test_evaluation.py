"""Tests for the evaluation instruments: embedder, probes, error rates."""

from dataclasses import replace

import numpy as np
import pytest
import torch

from protovox.backbone import BackboneConfig
from protovox.corpus import CorpusSpec, Utterance, generate_corpus
from protovox.errors import PairingError, PreconditionError
from protovox.evaluation import (
    CmhrResult,
    SpeakerEmbedder,
    SubstitutionResult,
    SweepResult,
    cmhr_baseline,
    enrollment_embedding,
    evaluate_per,
    evaluate_wer,
    model_speaker_vectors,
    probe_disentanglement,
    speaker_similarity_eval,
    train_embedder,
)
from protovox.metrics import cosine_similarity
from protovox.model import build_model
from protovox.seeding import derive_rng

SPEC = CorpusSpec(
    n_dysarthric_speakers=3,
    n_healthy_speakers=3,
    utterances_per_speaker=8,
    content_length_range=(6, 10),
    text_vocab=8,
    speech_vocab=65,
    timbre_dim=4,
    seed=21,
)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SPEC)


@pytest.fixture(scope="module")
def embedder(corpus):
    return train_embedder(corpus, seed=0, steps=200)


class TestEmbedder:
    def test_profile_rows_normalized(self, corpus):
        e = SpeakerEmbedder(65, 8, pause_id=corpus.pause_id)
        u = corpus.utterances[0]
        grid = e.profile(u.speech).reshape(8, 8)
        sums = grid.sum(dim=1)
        for s in sums.tolist():
            assert s == pytest.approx(0.0) or s == pytest.approx(1.0)

    def test_pause_tokens_ignored(self, corpus):
        e = SpeakerEmbedder(65, 8, pause_id=corpus.pause_id)
        speech = (0, 5, 7)
        with_pause = speech + (corpus.pause_id,) * 4
        assert torch.equal(e.profile(speech), e.profile(with_pause))

    def test_identical_sequences_identical_embedding(self, embedder, corpus):
        u = corpus.utterances[3]
        a = embedder.embed(u.speech).numpy()
        b = embedder.embed(u.speech).numpy()
        assert cosine_similarity(a, b) == pytest.approx(1.0)

    def test_separates_healthy_speakers(self, embedder, corpus):
        index = {s: i for i, s in enumerate(sorted(corpus.healthy_speaker_ids()))}
        utts = [u for u in corpus.utterances if u.speaker_id in index]
        profiles = torch.stack([embedder.profile(u.speech) for u in utts])
        preds = embedder(profiles).argmax(dim=-1).tolist()
        hits = sum(p == index[u.speaker_id] for p, u in zip(preds, utts))
        assert hits / len(utts) >= 0.99

    def test_needs_two_healthy_speakers(self, corpus):
        one = replace(
            corpus,
            utterances=tuple(
                u for u in corpus.utterances
                if u.condition != 0 or u.speaker_id == corpus.healthy_speaker_ids()[0]
            ),
        )
        with pytest.raises(PreconditionError):
            train_embedder(one)

    def test_same_speaker_beats_other_speaker(self, embedder, corpus):
        same, cross = [], []
        speakers = corpus.healthy_speaker_ids()
        for spk in speakers:
            utts = corpus.utterances_of(spk)
            for a, b in zip(utts, utts[1:]):
                same.append(cosine_similarity(
                    embedder.embed(a.speech).numpy(), embedder.embed(b.speech).numpy()
                ))
        for spk_a, spk_b in zip(speakers, speakers[1:]):
            for a, b in zip(corpus.utterances_of(spk_a), corpus.utterances_of(spk_b)[1:]):
                cross.append(cosine_similarity(
                    embedder.embed(a.speech).numpy(), embedder.embed(b.speech).numpy()
                ))
        assert np.mean(same) > np.mean(cross) + 0.1


class TestEnrollment:
    def test_leave_one_out_excludes_source(self, embedder, corpus):
        spk = corpus.dysarthric_speaker_ids()[0]
        utts = corpus.utterances_of(spk)
        full = enrollment_embedding(corpus, embedder, spk)
        loo = enrollment_embedding(corpus, embedder, spk, utts[0].utt_id)
        manual = np.mean([embedder.embed(u.speech).numpy() for u in utts[1:]], axis=0)
        assert np.allclose(loo, manual)
        assert not np.allclose(full, loo)

    def test_unknown_speaker(self, embedder, corpus):
        with pytest.raises(PreconditionError):
            enrollment_embedding(corpus, embedder, "nobody")


class TestSimilarityEval:
    def test_pairing_mismatch(self, embedder, corpus):
        utts = list(corpus.utterances[:3])
        with pytest.raises(PairingError):
            speaker_similarity_eval(utts, [utts[0].speech], embedder, corpus)

    def test_own_other_utterance_scores_high(self, embedder, corpus):
        # passing another utterance of the same speaker as the "reconstruction"
        # should land near the enrollment reference
        spk = corpus.dysarthric_speaker_ids()[0]
        utts = corpus.utterances_of(spk)
        sims = speaker_similarity_eval([utts[0]], [utts[1].speech], embedder, corpus)
        other = corpus.dysarthric_speaker_ids()[1]
        foreign = corpus.utterances_of(other)[0].speech
        cross = speaker_similarity_eval([utts[0]], [foreign], embedder, corpus)
        assert sims[spk] > cross[spk]

    def test_grouped_by_speaker(self, embedder, corpus):
        utts = [corpus.utterances_of(s)[0] for s in corpus.dysarthric_speaker_ids()]
        recs = [u.speech for u in utts]
        out = speaker_similarity_eval(utts, recs, embedder, corpus)
        assert set(out) == set(corpus.dysarthric_speaker_ids())


class TestCmhr:
    def test_all_speakers_present(self, embedder, corpus):
        out = cmhr_baseline(corpus, embedder)
        assert isinstance(out, CmhrResult)
        assert set(out.similarities) == set(corpus.dysarthric_speaker_ids())
        # the shared content pool guarantees matches for every utterance
        assert out.skipped == 0
        assert all(v is not None for v in out.similarities.values())

    def test_unmatched_content_skipped(self, embedder, corpus):
        spk = corpus.dysarthric_speaker_ids()[0]
        target = corpus.utterances_of(spk)[0]
        oddball = replace(target, content=(0, 0, 0, 0, 7, 7, 7))
        swapped = tuple(
            oddball if u.utt_id == target.utt_id else u for u in corpus.utterances
        )
        out = cmhr_baseline(replace(corpus, utterances=swapped), embedder)
        assert out.skipped == 1

    def test_speaker_without_matches_is_absent(self, embedder, corpus):
        spk = corpus.dysarthric_speaker_ids()[0]
        swapped = tuple(
            replace(u, content=u.content + (7, 7, 7)) if u.speaker_id == spk else u
            for u in corpus.utterances
        )
        out = cmhr_baseline(replace(corpus, utterances=swapped), embedder)
        assert out.similarities[spk] is None
        assert out.skipped == len(corpus.utterances_of(spk))

    def test_deterministic(self, embedder, corpus):
        a = cmhr_baseline(corpus, embedder, seed=3)
        b = cmhr_baseline(corpus, embedder, seed=3)
        assert a.similarities == b.similarities


class TestProbe:
    def _separable(self, n=120, dim=8, seed=0):
        rng = derive_rng(seed, "sep")
        y = [i % 2 for i in range(n)]
        x = rng.normal(size=(n, dim)) * 0.05
        x[:, 0] += np.array(y) * 3.0
        return x, y

    def test_separable_data_scores_high(self):
        x, y = self._separable()
        assert probe_disentanglement(x, y) >= 0.99

    def test_shuffled_labels_near_chance(self):
        x, _ = self._separable(n=200)
        rng = derive_rng(1, "shuffle")
        y = [int(v) for v in rng.integers(0, 2, size=200)]
        acc = probe_disentanglement(x, y, seed=2)
        assert abs(acc - 0.5) <= 0.1

    def test_fresh_probe_is_reproducible(self):
        x, y = self._separable(seed=4)
        a = probe_disentanglement(x, y, seed=7)
        b = probe_disentanglement(x, y, seed=7)
        assert a == b

    def test_seed_insensitive_on_separable_data(self):
        x, y = self._separable(seed=5)
        a = probe_disentanglement(x, y, seed=0)
        b = probe_disentanglement(x, y, seed=9)
        assert abs(a - b) <= 0.05

    def test_single_class_rejected(self):
        x, _ = self._separable()
        with pytest.raises(PreconditionError):
            probe_disentanglement(x, [1] * len(x))

    def test_length_mismatch(self):
        x, y = self._separable()
        with pytest.raises(PairingError):
            probe_disentanglement(x, y[:-1])

    def test_group_split_defeats_cluster_memorization(self):
        # embeddings encode only group identity; labels are constant within a
        # group: an utterance split can read them, a group split cannot
        rng = derive_rng(3, "groups")
        groups, labels, rows = [], [], []
        centers = rng.normal(size=(40, 6)) * 3.0
        for g in range(40):
            for _ in range(4):
                rows.append(centers[g] + rng.normal(size=6) * 0.05)
                labels.append(g % 2)
                groups.append(f"g{g:02d}")
        utt_acc = probe_disentanglement(np.array(rows), labels, seed=1)
        grp_acc = probe_disentanglement(np.array(rows), labels, seed=1, groups=groups)
        assert utt_acc >= 0.95
        assert grp_acc <= 0.8

    def test_group_length_mismatch(self):
        x, y = self._separable()
        with pytest.raises(PairingError):
            probe_disentanglement(x, y, groups=["g"] * (len(y) - 1))


class TestModelVectors:
    def test_rows_align_with_real_utterances(self, corpus):
        model = build_model(
            BackboneConfig(dim=32, n_layers=1, text_vocab=8, speech_vocab=65, max_seq_len=48),
            n_dysarthric=3,
            seed=0,
        )
        vecs, labels, speakers = model_speaker_vectors(model, corpus)
        real = [u for u in corpus.utterances if not u.synthetic]
        assert len(vecs) == len(labels) == len(speakers) == len(real)
        assert labels == [int(u.condition != 0) for u in real]
        assert speakers == [u.speaker_id for u in real]


class _EchoAsr:
    """Stub recognizer that maps speech back to a stored transcript."""

    def __init__(self, table):
        self.table = table

    def transcribe_batch(self, speeches, max_tokens=None):
        return [self.table[tuple(s.tolist())] for s in speeches]


class TestErrorRates:
    def test_perfect_recognizer_zero_rates(self, corpus):
        utts = list(corpus.utterances[:6])
        asr = _EchoAsr({tuple(u.speech): u.content for u in utts})
        assert evaluate_wer(asr, utts) == 0.0
        assert evaluate_per(asr, utts) == 0.0

    def test_wer_counts_pooled_edits(self, corpus):
        utts = list(corpus.utterances[:2])
        table = {tuple(u.speech): u.content for u in utts}
        # corrupt one token of the first transcript
        first = list(utts[0].content)
        first[0] = (first[0] + 1) % SPEC.text_vocab
        table[tuple(utts[0].speech)] = tuple(first)
        expected = 1 / (len(utts[0].content) + len(utts[1].content))
        assert evaluate_wer(_EchoAsr(table), utts) == pytest.approx(expected)

    def test_per_finer_than_wer(self, corpus):
        utts = list(corpus.utterances[:1])
        table = {tuple(utts[0].speech): utts[0].content[:-1]}
        wer = evaluate_wer(_EchoAsr(table), utts)
        per = evaluate_per(_EchoAsr(table), utts)
        assert wer > 0 and per > 0


class TestResultContainers:
    def test_sweep_mean_and_spearman(self):
        r = SweepResult(ratios=(0.0, 0.5, 1.0))
        r.wer[0.0] = {"a": 0.6, "b": 0.4}
        r.wer[0.5] = {"a": 0.4, "b": 0.3}
        r.wer[1.0] = {"a": 0.2, "b": 0.1}
        assert r.mean_wer(0.0) == pytest.approx(0.5)
        assert r.spearman_vs_ratio() == pytest.approx(-1.0)

    def test_substitution_means(self):
        r = SubstitutionResult()
        r.wer["real"] = {"a": 0.5, "b": 0.7}
        r.per["real"] = {"a": 0.25, "b": 0.35}
        assert r.mean_wer("real") == pytest.approx(0.6)
        assert r.mean_per("real") == pytest.approx(0.3)
        assert SubstitutionResult.CONDITIONS == ("no-adapt", "real", "synthetic")
