"""Checkpoint serialization for the synthesis model and downstream nets.

A checkpoint is a torch.save payload with a version tag, a kind tag
("synthesis", "asr", "embedder"), the builder config, the training stage,
and the state dict. Loading validates version and kind before touching any
weights; a corrupt or truncated file is a parse error, a wrong kind is an
integrity error.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .asr import AsrConfig, ToyASR
from .backbone import BackboneConfig
from .errors import IntegrityError, ParseError
from .model import SynthesisModel

CHECKPOINT_VERSION = 1
KINDS = ("synthesis", "asr", "embedder")


def save_payload(path: str | Path, kind: str, config: dict, stage: str,
                 state_dict: dict, extra: dict | None = None) -> None:
    if kind not in KINDS:
        raise IntegrityError(f"unknown checkpoint kind {kind!r}")
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "stage": stage,
        "state_dict": state_dict,
        "extra": extra or {},
    }
    torch.save(payload, str(path))


def load_payload(path: str | Path, expect_kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ParseError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise ParseError(f"{path} is not a checkpoint payload")
    if payload["version"] != CHECKPOINT_VERSION:
        raise IntegrityError(
            f"checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if payload.get("kind") != expect_kind:
        raise IntegrityError(
            f"checkpoint kind {payload.get('kind')!r} where {expect_kind!r} expected"
        )
    return payload


def save_model(path: str | Path, model: SynthesisModel,
               extra: dict | None = None) -> None:
    config = {
        "backbone": asdict(model.config),
        "n_dysarthric": model.codebook.n_dysarthric,
    }
    save_payload(path, "synthesis", config, model.stage, model.state_dict(), extra)


def load_model(path: str | Path) -> SynthesisModel:
    payload = load_payload(path, "synthesis")
    config = BackboneConfig(**payload["config"]["backbone"])
    model = SynthesisModel(config, payload["config"]["n_dysarthric"])
    model.load_state_dict(payload["state_dict"])
    model.stage = payload["stage"]
    return model


def save_asr(path: str | Path, asr: ToyASR, extra: dict | None = None) -> None:
    save_payload(path, "asr", asdict(asr.config), asr.stage, asr.state_dict(), extra)


def load_asr(path: str | Path) -> ToyASR:
    payload = load_payload(path, "asr")
    asr = ToyASR(AsrConfig(**payload["config"]))
    asr.load_state_dict(payload["state_dict"])
    asr.stage = payload["stage"]
    return asr


def export_codebook(path: str | Path, model: SynthesisModel) -> None:
    """Plain-text copy of the prototype table for inspection and diffing."""
    Path(path).write_text(model.codebook.export_rows())
