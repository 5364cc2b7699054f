"""End-to-end tests for the command line interface."""

import json
import os
from pathlib import Path

import pytest
import torch

from protovox.backbone import BackboneConfig
from protovox.checkpoint import save_model
from protovox.cli import (
    EXIT_CONFIG,
    EXIT_MISSING_FILE,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_RANGE,
    EXIT_STATE,
    SEED_ENV_VAR,
    main,
)
from protovox.model import build_model

TINY = [
    "--n_dysarthric_speakers", "2",
    "--n_healthy_speakers", "2",
    "--utterances_per_speaker", "3",
    "--content_length_range", "4,6",
    "--text_vocab", "6",
    "--speech_vocab", "19",
    "--timbre_dim", "4",
]

TRAIN = ["--pretrain_steps", "8", "--finetune_steps", "6", "--batch_size", "4"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus + trained checkpoint shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    os.chdir(root)
    assert main(["gen-data", "--out", "data", "--seed", "3", *TINY]) == EXIT_OK
    assert main([
        "train", "--out", "run", "--corpus", "data/corpus.tsv", "--seed", "3", *TRAIN,
    ]) == EXIT_OK
    return root


def manifest_of(out_dir: Path) -> dict:
    return json.loads((out_dir / "manifest.json").read_text())


class TestGenData:
    def test_outputs_and_manifest(self, workspace):
        files = {p.name for p in (workspace / "data").iterdir()}
        assert files == {"corpus.tsv", "corpus.meta.json", "manifest.json"}
        m = manifest_of(workspace / "data")
        assert m["command"] == "gen-data"
        assert m["seed"] == 3
        assert "corpus.tsv" in m["outputs"]
        assert m["started"] <= m["finished"]

    def test_rerun_is_byte_identical(self, workspace):
        assert main(["gen-data", "--out", "data2", "--seed", "3", *TINY]) == EXIT_OK
        a = (workspace / "data" / "corpus.tsv").read_bytes()
        b = (workspace / "data2" / "corpus.tsv").read_bytes()
        assert a == b

    def test_missing_config_file(self, workspace):
        rc = main(["gen-data", "--out", "x1", "--config", "no-such.cfg"])
        assert rc == EXIT_MISSING_FILE

    def test_config_parse_failure(self, workspace):
        bad = workspace / "bad.cfg"
        bad.write_text("utterances_per_speaker\n")
        rc = main(["gen-data", "--out", "x2", "--config", str(bad)])
        assert rc == EXIT_PARSE

    def test_unknown_config_key(self, workspace):
        bad = workspace / "unknown.cfg"
        bad.write_text("not_a_key = 5\n")
        rc = main(["gen-data", "--out", "x3", "--config", str(bad)])
        assert rc == EXIT_CONFIG

    def test_seed_flag_beats_env_var(self, workspace, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "11")
        assert main(["gen-data", "--out", "x4", "--seed", "3", *TINY]) == EXIT_OK
        assert manifest_of(workspace / "x4")["seed"] == 3
        assert main(["gen-data", "--out", "x5", *TINY]) == EXIT_OK
        assert manifest_of(workspace / "x5")["seed"] == 11

    def test_bad_env_seed(self, workspace, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "eleven")
        assert main(["gen-data", "--out", "x6", *TINY]) == EXIT_CONFIG


class TestTrain:
    def test_artifacts(self, workspace):
        files = {p.name for p in (workspace / "run").iterdir()}
        assert files == {
            "checkpoint.pt", "loss_curve.tsv", "loss_curve.png",
            "param_groups.json", "manifest.json",
        }

    def test_loss_curve_format(self, workspace):
        lines = (workspace / "run" / "loss_curve.tsv").read_text().splitlines()
        assert lines[0] == "step\tl_tts\tl_dys\tl_adv\ttotal"
        assert len(lines) == 1 + 8 + 6
        first = lines[1].split("\t")
        assert first[0] == "0" and len(first) == 5

    def test_manifest_hashes_inputs(self, workspace):
        m = manifest_of(workspace / "run")
        assert m["inputs"]["corpus"]["path"].endswith("corpus.tsv")
        assert len(m["inputs"]["corpus"]["hash"]) == 40

    def test_missing_corpus(self, workspace):
        rc = main(["train", "--out", "x7", "--corpus", "nope.tsv", *TRAIN])
        assert rc == EXIT_MISSING_FILE

    def test_param_groups_recorded(self, workspace):
        groups = json.loads((workspace / "run" / "param_groups.json").read_text())
        assert set(groups) >= {"lora", "codebook", "classifiers", "perceiver", "frozen"}


class TestSynth:
    def test_untrained_checkpoint(self, workspace):
        model = build_model(
            BackboneConfig(dim=32, n_layers=1, text_vocab=6, speech_vocab=19),
            n_dysarthric=2,
        )
        save_model(workspace / "fresh.pt", model)
        rc = main([
            "synth", "--out", "x8", "--checkpoint", str(workspace / "fresh.pt"),
            "--corpus", "data/corpus.tsv", "--prompt-utt", "D01-u000",
            "--text", "1 2", "--k", "1",
        ])
        assert rc == EXIT_STATE

    def test_bad_prototype_index(self, workspace):
        rc = main([
            "synth", "--out", "x9", "--checkpoint", "run/checkpoint.pt",
            "--corpus", "data/corpus.tsv", "--prompt-utt", "D01-u000",
            "--text", "1 2", "--k", "9",
        ])
        assert rc == EXIT_RANGE

    def test_unknown_prompt_utterance(self, workspace):
        rc = main([
            "synth", "--out", "x10", "--checkpoint", "run/checkpoint.pt",
            "--corpus", "data/corpus.tsv", "--prompt-utt", "Z99-u000",
            "--text", "1 2", "--k", "1",
        ])
        assert rc == EXIT_RANGE

    def test_payload(self, workspace):
        rc = main([
            "synth", "--out", "x11", "--checkpoint", "run/checkpoint.pt",
            "--corpus", "data/corpus.tsv", "--prompt-utt", "D01-u000",
            "--text", "1 2 3", "--k", "2", "--seed", "5",
        ])
        assert rc == EXIT_OK
        payload = json.loads((workspace / "x11" / "utterance.json").read_text())
        assert payload["text"] == [1, 2, 3]
        assert payload["prototype"] == 2
        assert all(isinstance(t, int) for t in payload["speech"])


class TestPipelinesCli:
    def test_augment(self, workspace):
        rc = main([
            "augment", "--out", "x12", "--checkpoint", "run/checkpoint.pt",
            "--corpus", "data/corpus.tsv", "--ratio", "0.5", "--seed", "2",
        ])
        assert rc == EXIT_OK
        text = (workspace / "x12" / "augmented.tsv").read_text()
        assert text.count("\n") > 12  # header + originals + synthetic rows

    def test_reconstruct_oracle(self, workspace):
        rc = main([
            "reconstruct", "--out", "x13", "--checkpoint", "run/checkpoint.pt",
            "--corpus", "data/corpus.tsv", "--oracle-text", "--seed", "2",
        ])
        assert rc == EXIT_OK
        lines = (workspace / "x13" / "reconstructions.tsv").read_text().splitlines()
        assert lines[0] == "utt_id\trecognized_text\treconstructed_speech"
        assert len(lines) == 1 + 6  # one row per dysarthric utterance

    def test_reconstruct_needs_asr_or_oracle(self, workspace):
        rc = main([
            "reconstruct", "--out", "x14", "--checkpoint", "run/checkpoint.pt",
            "--corpus", "data/corpus.tsv",
        ])
        assert rc == EXIT_CONFIG


class TestRunHygiene:
    def test_no_writes_outside_out_dir(self, workspace):
        before = {p for p in workspace.rglob("*")}
        assert main(["gen-data", "--out", "x15", "--seed", "4", *TINY]) == EXIT_OK
        created = {p for p in workspace.rglob("*")} - before
        outside = {p for p in created if "x15" not in p.parts}
        assert outside == set()

    def test_exactly_one_manifest_per_dir(self, workspace):
        for d in ("data", "run", "x11"):
            found = list((workspace / d).rglob("manifest.json"))
            assert len(found) == 1

    def test_manifest_resolved_config_snapshot(self, workspace):
        m = manifest_of(workspace / "data")
        assert m["config"]["utterances_per_speaker"] == 3
        assert m["config"]["seed"] == 3
