"""Command-line entry point wrapping the full workflow.

One executable with subcommands: gen-data, train, synth, augment,
reconstruct, eval, sweep, substitution. Every run writes its artifacts
into a declared output directory plus exactly one manifest recording the
resolved configuration, seed, input hashes, and timestamps. Randomness
comes only from the seed (--seed beats the PROTOVOX_SEED env var, which
beats 0), so reruns are reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .asr import AsrConfig, train_asr
from .backbone import BackboneConfig
from .config import apply_config, load_config_file
from .corpus import (
    Corpus,
    CorpusSpec,
    deserialize_corpus,
    generate_corpus,
    metadata_path,
    serialize_corpus,
)
from .errors import (
    ConfigurationError,
    ParseError,
    ProtovoxError,
    RangeError,
    StateError,
)
from .evaluation import (
    cmhr_baseline,
    model_speaker_vectors,
    probe_disentanglement,
    reconstruct_all,
    run_substitution_experiment,
    run_sweep,
    speaker_similarity_eval,
    train_embedder,
)
from .figures import plot_loss_curve, plot_similarity, plot_substitution, plot_sweep
from .model import build_model
from .pipelines import AugmentationPlan, build_augmented_set, reconstruct
from .reporting import (
    render_delimited,
    render_fixed_width,
    similarity_table,
    substitution_records,
    substitution_table,
    sweep_records,
    sweep_table,
)
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_FILE = 2
EXIT_PARSE = 3
EXIT_RANGE = 4
EXIT_STATE = 5
EXIT_CONFIG = 6

SEED_ENV_VAR = "PROTOVOX_SEED"


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING_FILE
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, RangeError):
        return EXIT_RANGE
    if isinstance(exc, StateError):
        return EXIT_STATE
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    return EXIT_FAILURE


def _content_hash(path: Path) -> str:
    """Git-style blob hash of a file's bytes."""
    data = path.read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class RunContext:
    """Collects manifest fields while a command runs, then writes it once."""

    def __init__(self, command: str, out_dir: str | Path, seed: int,
                 config_path: str | None = None):
        self.command = command
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.config_path = config_path
        self.config_snapshot: dict = {}
        self.inputs: dict[str, dict] = {}
        self.outputs: list[str] = []
        self.started = time.time()
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def record_config(self, obj) -> None:
        if dataclasses.is_dataclass(obj):
            self.config_snapshot = dataclasses.asdict(obj)
        else:
            self.config_snapshot = dict(obj)

    def record_input(self, label: str, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"{label} not found: {path}")
        self.inputs[label] = {"path": str(path), "hash": _content_hash(path)}
        return path

    def out_path(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(name)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_path(name)
        _atomic_write(path, text)
        return path

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config_path": self.config_path,
            "config": self.config_snapshot,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(set(self.outputs)),
            "started": self.started,
            "finished": time.time(),
        }
        _atomic_write(
            self.out_dir / "manifest.json",
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        )


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(
            f"{SEED_ENV_VAR} must be an integer, got {raw!r}"
        ) from None


def _load_dataclass(path: str | None, cls, overrides: dict[str, str]):
    raw = load_config_file(path) if path else {}
    raw.update(overrides)
    return apply_config(raw, cls)


def _config_overrides(args: argparse.Namespace, cls) -> dict[str, str]:
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for name in names:
        value = getattr(args, f"opt_{name}", None)
        if value is not None:
            out[name] = value
    return out


def _add_config_flags(parser: argparse.ArgumentParser, cls) -> None:
    for f in dataclasses.fields(cls):
        if f.name == "seed":
            continue  # the shared --seed flag fills this key
        parser.add_argument(
            f"--{f.name}", dest=f"opt_{f.name}", metavar="VALUE",
            help=f"override config key {f.name}",
        )


def _parse_tokens(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ParseError(f"{what}: expected space-separated integers, got {text!r}") from None


def _find_utterance(corpus: Corpus, utt_id: str):
    for u in corpus.utterances:
        if u.utt_id == utt_id:
            return u
    raise RangeError(f"utterance id {utt_id!r} not in corpus")


def _curve_tsv(curve) -> str:
    lines = ["step\tl_tts\tl_dys\tl_adv\ttotal"]
    for r in curve:
        lines.append(
            f"{r.step}\t{r.l_tts:.6f}\t{r.l_dys:.6f}\t{r.l_adv:.6f}\t{r.total:.6f}"
        )
    return "\n".join(lines) + "\n"


# -- subcommand bodies -------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("gen-data", args.out, seed, args.config)
    overrides = _config_overrides(args, CorpusSpec)
    if args.config:
        ctx.record_input("config", args.config)
    spec = _load_dataclass(args.config, CorpusSpec, overrides)
    spec = dataclasses.replace(spec, seed=seed)
    spec.validate()
    ctx.record_config(spec)
    corpus = generate_corpus(spec)
    out = ctx.out_path("corpus.tsv")
    serialize_corpus(corpus, str(out))
    ctx.outputs.append(Path(metadata_path(str(out))).name)
    ctx.finish()
    print(f"wrote {len(corpus.utterances)} utterances to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("train", args.out, seed, args.config)
    corpus_path = ctx.record_input("corpus", args.corpus)
    if args.config:
        ctx.record_input("config", args.config)
    overrides = _config_overrides(args, TrainConfig)
    config = _load_dataclass(args.config, TrainConfig, overrides)
    config = dataclasses.replace(config, seed=seed)
    if args.ablation:
        config = dataclasses.replace(config, ablation_no_disent=True)
    config.validate()
    ctx.record_config(config)
    corpus = deserialize_corpus(str(corpus_path))
    backbone = BackboneConfig(
        text_vocab=corpus.spec.text_vocab, speech_vocab=corpus.spec.speech_vocab
    )
    model = build_model(backbone, corpus.spec.n_dysarthric_speakers, seed=seed)
    record = train(model, corpus, config)
    ckpt.save_model(ctx.out_path("checkpoint.pt"), model)
    ctx.write_text("loss_curve.tsv", _curve_tsv(record.pretrain_curve + record.finetune_curve))
    ctx.write_text(
        "param_groups.json",
        json.dumps(record.manifest.to_dict(), indent=2, sort_keys=True) + "\n",
    )
    plot_loss_curve(
        record.pretrain_curve + record.finetune_curve, ctx.out_path("loss_curve.png")
    )
    ctx.finish()
    print(f"trained {config.pretrain_steps}+{config.finetune_steps} steps, "
          f"stage {model.stage}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("synth", args.out, seed)
    model = ckpt.load_model(ctx.record_input("checkpoint", args.checkpoint))
    corpus = deserialize_corpus(str(ctx.record_input("corpus", args.corpus)))
    prompt_utt = _find_utterance(corpus, args.prompt_utt)
    text = _parse_tokens(args.text, "--text")
    ctx.record_config({
        "text": list(text), "prompt_utt": args.prompt_utt, "k": args.k,
        "strategy": args.strategy, "temperature": args.temperature,
    })
    speech = model.synthesize(
        torch.tensor(text, dtype=torch.long),
        torch.tensor(prompt_utt.speech, dtype=torch.long),
        args.k,
        strategy=args.strategy,
        temperature=args.temperature,
        seed=seed,
    )
    payload = {
        "text": list(text),
        "prompt_utt": args.prompt_utt,
        "prototype": args.k,
        "speech": list(speech),
    }
    ctx.write_text("utterance.json", json.dumps(payload, indent=2) + "\n")
    ctx.finish()
    print(f"synthesized {len(speech)} speech tokens with prototype {args.k}")
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("augment", args.out, seed)
    model = ckpt.load_model(ctx.record_input("checkpoint", args.checkpoint))
    corpus = deserialize_corpus(str(ctx.record_input("corpus", args.corpus)))
    plan = AugmentationPlan(ratio=args.ratio, seed=seed, temperature=args.temperature)
    plan.validate(model.codebook.n_dysarthric)
    ctx.record_config(plan)
    augmented = build_augmented_set(corpus, plan, model)
    out = ctx.out_path("augmented.tsv")
    serialize_corpus(augmented, str(out))
    ctx.outputs.append(Path(metadata_path(str(out))).name)
    ctx.finish()
    n_new = len(augmented.utterances) - len(corpus.utterances)
    print(f"added {n_new} synthetic utterances (ratio {args.ratio})")
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("reconstruct", args.out, seed)
    model = ckpt.load_model(ctx.record_input("checkpoint", args.checkpoint))
    corpus = deserialize_corpus(str(ctx.record_input("corpus", args.corpus)))
    asr = None
    if not args.oracle_text:
        if not args.asr_checkpoint:
            raise ConfigurationError(
                "reconstruct needs --asr-checkpoint unless --oracle-text is set"
            )
        asr = ckpt.load_asr(ctx.record_input("asr_checkpoint", args.asr_checkpoint))
    ctx.record_config({"oracle_text": args.oracle_text})
    lines = ["utt_id\trecognized_text\treconstructed_speech"]
    count = 0
    for u in corpus.utterances:
        if u.condition == 0 or u.synthetic:
            continue
        result = reconstruct(model, asr, u, oracle_text=args.oracle_text)
        lines.append(
            "\t".join(
                (
                    u.utt_id,
                    " ".join(str(t) for t in result.recognized_text),
                    " ".join(str(t) for t in result.reconstructed_speech),
                )
            )
        )
        count += 1
    ctx.write_text("reconstructions.tsv", "\n".join(lines) + "\n")
    ctx.finish()
    print(f"reconstructed {count} dysarthric utterances")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("eval", args.out, seed)
    model = ckpt.load_model(ctx.record_input("checkpoint", args.checkpoint))
    corpus = deserialize_corpus(str(ctx.record_input("corpus", args.corpus)))
    ablation = None
    if args.ablation_checkpoint:
        ablation = ckpt.load_model(
            ctx.record_input("ablation_checkpoint", args.ablation_checkpoint)
        )
    ctx.record_config({"speakers": args.speakers})
    speakers = tuple(args.speakers.split(",")) if args.speakers else tuple(
        s
        for s in corpus.dysarthric_speaker_ids()
        if corpus.severity_of(s) in ("severe", "moderate_severe")
    )

    embedder = train_embedder(corpus, seed=seed)
    orig, recon = reconstruct_all(model, corpus, oracle_text=True, speakers=speakers)
    rows: list[tuple[str, dict[str, float | None]]] = []
    cmhr = cmhr_baseline(corpus, embedder, seed=seed)
    rows.append(("CMHR", {s: cmhr.similarities.get(s) for s in speakers}))
    metrics: dict = {}
    if ablation is not None:
        orig_a, recon_a = reconstruct_all(
            ablation, corpus, oracle_text=True, speakers=speakers
        )
        rows.append(("w/o Disent", speaker_similarity_eval(orig_a, recon_a, embedder, corpus)))
        vec_a, lab_a, _ = model_speaker_vectors(ablation, corpus)
        metrics["probe_ablation"] = probe_disentanglement(vec_a, lab_a, seed=seed)
    rows.append(("Full", speaker_similarity_eval(orig, recon, embedder, corpus)))
    vec, lab, _ = model_speaker_vectors(model, corpus)
    metrics["probe_full"] = probe_disentanglement(vec, lab, seed=seed)
    metrics["cmhr_skipped"] = cmhr.skipped

    table = similarity_table(rows, speakers)
    ctx.write_text("report.txt", render_fixed_width(table))
    ctx.write_text("report.tsv", render_delimited(table))
    ctx.write_text("metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    plot_similarity(rows, speakers, ctx.out_path("speaker_similarity.png"))
    ctx.finish()
    print(f"probe accuracy {metrics['probe_full']:.3f}; "
          f"wrote report for {len(speakers)} speakers")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("sweep", args.out, seed)
    model = ckpt.load_model(ctx.record_input("checkpoint", args.checkpoint))
    corpus = deserialize_corpus(str(ctx.record_input("corpus", args.corpus)))
    ratios = (
        tuple(float(r) for r in args.ratios.split(","))
        if args.ratios
        else AugmentationPlan.SWEEP_LADDER
    )
    asr_config = AsrConfig(
        text_vocab=corpus.spec.text_vocab,
        speech_vocab=corpus.spec.speech_vocab,
        steps=args.asr_steps,
    )
    ctx.record_config({"ratios": list(ratios), "asr_steps": args.asr_steps})
    result = run_sweep(corpus, ratios, model, seed=seed, asr_config=asr_config)
    table = sweep_table(result)
    ctx.write_text("report.txt", render_fixed_width(table))
    ctx.write_text("report.tsv", render_delimited(table))
    ctx.write_text("sweep_records.tsv", sweep_records(result))
    plot_sweep(result, ctx.out_path("sweep_wer.png"))
    ctx.finish()
    print(f"swept {len(ratios)} ratios; mean WER "
          f"{result.mean_wer(ratios[0]):.4f} -> {result.mean_wer(ratios[-1]):.4f}")
    return EXIT_OK


def cmd_substitution(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    ctx = RunContext("substitution", args.out, seed)
    model = ckpt.load_model(ctx.record_input("checkpoint", args.checkpoint))
    corpus = deserialize_corpus(str(ctx.record_input("corpus", args.corpus)))
    asr_config = AsrConfig(
        text_vocab=corpus.spec.text_vocab,
        speech_vocab=corpus.spec.speech_vocab,
        steps=args.asr_steps,
    )
    adapt_config = dataclasses.replace(asr_config, steps=args.adapt_steps)
    ctx.record_config({"asr_steps": args.asr_steps, "adapt_steps": args.adapt_steps})
    result, base_asr = run_substitution_experiment(
        corpus, model, seed=seed, asr_config=asr_config, adapt_config=adapt_config,
        return_base_asr=True,
    )
    table = substitution_table(result)
    ctx.write_text("report.txt", render_fixed_width(table))
    ctx.write_text("report.tsv", render_delimited(table))
    ctx.write_text("substitution_records.tsv", substitution_records(result))
    plot_substitution(result, ctx.out_path("substitution_wer.png"))
    ckpt.save_asr(ctx.out_path("asr_base.pt"), base_asr)
    ctx.finish()
    means = ", ".join(
        f"{c}={result.mean_wer(c):.4f}" for c in result.CONDITIONS
    )
    print(f"substitution WER: {means}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protovox",
        description="Prototype-conditioned toy speech synthesis workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help=f"run seed (overrides {SEED_ENV_VAR})")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--config", default=None, help="corpus spec key = value file")
    _add_config_flags(p, CorpusSpec)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the synthesis model")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None, help="training key = value file")
    p.add_argument("--ablation", action="store_true",
                   help="disable both condition classifiers")
    _add_config_flags(p, TrainConfig)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize speech for a text")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--text", required=True, help="space-separated text token ids")
    p.add_argument("--prompt-utt", required=True, help="utterance id for the prompt")
    p.add_argument("--k", type=int, required=True, help="prototype index")
    p.add_argument("--strategy", default="greedy", choices=("greedy", "sampled"))
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="extend a corpus with synthetic dysarthric data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("reconstruct", help="re-synthesize dysarthric speech cleanly")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--asr-checkpoint", default=None)
    p.add_argument("--oracle-text", action="store_true",
                   help="use ground-truth text instead of a recognizer")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="probe and similarity report")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ablation-checkpoint", default=None)
    p.add_argument("--speakers", default=None,
                   help="comma-separated speaker ids (default: severe tiers)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="augmentation-ratio WER sweep")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratios", default=None, help="comma-separated ratios")
    p.add_argument("--asr-steps", type=int, default=500)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("substitution", help="real vs synthetic adaptation comparison")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--asr-steps", type=int, default=500)
    p.add_argument("--adapt-steps", type=int, default=200)
    p.set_defaults(func=cmd_substitution)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ProtovoxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE


if __name__ == "__main__":
    sys.exit(main())
