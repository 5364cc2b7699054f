import pytest
import torch

from protovox.backbone import BackboneConfig
from protovox.checkpoint import (
    export_codebook,
    load_model,
    load_payload,
    save_model,
    save_payload,
)
from protovox.errors import IntegrityError, ParseError
from protovox.model import build_model


def make_model(seed=0):
    cfg = BackboneConfig(dim=32, n_layers=1, n_heads=4, text_vocab=8,
                         speech_vocab=21, max_seq_len=48, lora_rank=4)
    model = build_model(cfg, n_dysarthric=3, seed=seed)
    model.stage = "finetuned"
    return model


class TestRoundTrip:
    def test_model_round_trip(self, tmp_path):
        model = make_model()
        path = tmp_path / "model.pt"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.stage == "finetuned"
        assert loaded.config == model.config
        assert loaded.codebook.n_dysarthric == 3
        for key, value in model.state_dict().items():
            assert torch.equal(value, loaded.state_dict()[key]), key

    def test_save_is_byte_deterministic(self, tmp_path):
        # Same basename in two directories: the container format embeds the
        # archive name, and reruns write to identical relative paths anyway.
        model = make_model()
        (tmp_path / "run1").mkdir()
        (tmp_path / "run2").mkdir()
        a, b = tmp_path / "run1" / "model.pt", tmp_path / "run2" / "model.pt"
        save_model(a, model)
        save_model(b, model)
        assert a.read_bytes() == b.read_bytes()

    def test_extra_payload_preserved(self, tmp_path):
        path = tmp_path / "x.pt"
        save_payload(path, "asr", {"dim": 4}, "trained", {}, extra={"steps": 9})
        payload = load_payload(path, "asr")
        assert payload["extra"] == {"steps": 9}
        assert payload["config"] == {"dim": 4}


class TestValidation:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_payload(tmp_path / "nope.pt", "synthesis")

    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "model.pt"
        save_model(path, make_model())
        with pytest.raises(IntegrityError):
            load_payload(path, "asr")

    def test_unknown_kind_on_save(self, tmp_path):
        with pytest.raises(IntegrityError):
            save_payload(tmp_path / "x.pt", "diffusion", {}, "s", {})

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"this is not a checkpoint")
        with pytest.raises(ParseError):
            load_payload(path, "synthesis")

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "model.pt"
        save_model(path, make_model())
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(ParseError):
            load_model(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "old.pt"
        torch.save({"version": 99, "kind": "synthesis"}, str(path))
        with pytest.raises(IntegrityError):
            load_payload(path, "synthesis")

    def test_non_payload_dict(self, tmp_path):
        path = tmp_path / "raw.pt"
        torch.save({"weights": torch.zeros(3)}, str(path))
        with pytest.raises(ParseError):
            load_payload(path, "synthesis")


class TestCodebookExport:
    def test_export_parses_back(self, tmp_path):
        model = make_model()
        path = tmp_path / "codebook.tsv"
        export_codebook(path, model)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 4
        row2 = torch.tensor([float(v) for v in lines[2].split("\t")[1:]])
        assert torch.allclose(row2, model.codebook.table[2], atol=1e-7)
