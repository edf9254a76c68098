"""Command-line entry point.

Subcommands cover the full pipeline: view construction, lexicon coverage,
training, generation, evaluation, and zero-vs-supervised comparison. Every
run writes a manifest (resolved config, seed, input hashes) next to its
outputs so any result can be reproduced byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

from .corpus import LanguageTag, load_config, load_corpus
from .errors import (
    CompatibilityError,
    ConfigError,
    DegenerateInputError,
    DoubleTagError,
    NonFiniteLossError,
    ParseError,
    ShapeMismatchError,
)
from .generation import (
    GenerationConfig,
    IdentityFiller,
    UnigramFrequencyFiller,
    generate_responses,
    write_generation_file,
    read_generation_file,
)
from .lexicon import coverage, load_lexicon
from .metrics import (
    MetricsReport,
    WordVectorTable,
    compute_report,
    zero_sup_percentage,
)
from .model import ModelConfig, load_checkpoint
from .switching import SwitchConfig, build_views, write_view_file
from .training import TrainConfig, fit

CONFIG_ENV = "CROSSDIAL_CONFIG"

_HANDLED_ERRORS = (
    ParseError,
    ConfigError,
    DegenerateInputError,
    DoubleTagError,
    ShapeMismatchError,
    CompatibilityError,
    NonFiniteLossError,
    FileNotFoundError,
)

_INT_KEYS = {
    "k", "seed", "epochs", "batch_size", "beam_size", "max_len", "min_len",
    "layers", "heads", "hidden_dim", "max_positions", "max_history_len",
    "max_response_len",
}
_FLOAT_KEYS = {
    "tau", "learning_rate", "gumbel_temperature", "contrastive_scale",
    "dropout", "grad_clip", "length_norm_exponent",
}
_BOOL_KEYS = {
    "strict_algorithm1", "normalize_negatives", "resample_per_epoch",
    "smooth_bleu", "gumbel_hard",
}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        lowered = value.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key} expects a boolean, got {value!r}")
    return value


def _resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if config_path:
        if not Path(config_path).exists():
            raise FileNotFoundError(f"config file not found: {config_path}")
        for key, value in load_config(config_path).items():
            if key in resolved:
                resolved[key] = _coerce(key, value)
    for key in resolved:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    return resolved


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required input: {what}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(
    out_dir: Path, command: str, config: dict, inputs: dict, outputs: list[str]
) -> Path:
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(Path(path))}
            for name, path in sorted(inputs.items())
        },
        "outputs": sorted(outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
    return path


def _load_lexicon_for(cfg: dict, path) -> "BilingualLexicon":
    return load_lexicon(
        path,
        LanguageTag.parse(cfg["source_lang"]),
        LanguageTag.parse(cfg["target_lang"]),
    )


# ----------------------------------------------------------------------
# subcommand handlers
# ----------------------------------------------------------------------


def _cmd_build_corpus(args) -> list[Path]:
    defaults = {
        "k": 2, "tau": 0.4, "seed": 0, "strict_algorithm1": False,
        "resample_per_epoch": False, "source_lang": "<En>",
        "target_lang": "<De>", "split": "train",
    }
    cfg = _resolve_config(args, defaults)
    corpus_path = _require_file(args.corpus, "corpus file")
    lexicon_path = _require_file(args.lexicon, "lexicon file")
    corpus = load_corpus(corpus_path, cfg["split"])
    lex = _load_lexicon_for(cfg, lexicon_path)
    switch = SwitchConfig(
        k=cfg["k"],
        tau=cfg["tau"],
        seed=cfg["seed"],
        strict_algorithm1=cfg["strict_algorithm1"],
        resample_per_epoch=cfg["resample_per_epoch"],
    )
    out_dir = _out_dir(args)
    views_path = out_dir / "views.jsonl"
    view_sets = [(ex.id, build_views(ex, lex, switch)) for ex in corpus.examples]
    write_view_file(view_sets, views_path)
    manifest = _write_manifest(
        out_dir, "build-corpus", cfg,
        {"corpus": corpus_path, "lexicon": lexicon_path},
        [views_path.name],
    )
    return [views_path, manifest]


def _cmd_coverage(args) -> list[Path]:
    defaults = {"source_lang": "<En>", "target_lang": "<De>", "split": "train"}
    cfg = _resolve_config(args, defaults)
    corpus_path = _require_file(args.corpus, "corpus file")
    lexicon_path = _require_file(args.lexicon, "lexicon file")
    corpus = load_corpus(corpus_path, cfg["split"])
    lex = _load_lexicon_for(cfg, lexicon_path)
    report = coverage(lex, corpus)
    out_dir = _out_dir(args)
    report_path = out_dir / "coverage.txt"
    report_path.write_text(report.render(), encoding="utf-8")
    sys.stdout.write(report.render())
    manifest = _write_manifest(
        out_dir, "coverage", cfg,
        {"corpus": corpus_path, "lexicon": lexicon_path},
        [report_path.name],
    )
    return [report_path, manifest]


def _cmd_train(args) -> list[Path]:
    defaults = {
        "k": 2, "tau": 0.4, "seed": 0, "epochs": 1, "batch_size": 64,
        "learning_rate": 5e-5, "layers": 4, "heads": 4, "hidden_dim": 128,
        "dropout": 0.1, "gumbel_temperature": 1.0, "gumbel_hard": False,
        "max_positions": 600, "contrastive_scale": 1.0,
        "normalize_negatives": False, "strict_algorithm1": False,
        "resample_per_epoch": False, "grad_clip": 0.0,
        "source_lang": "<En>", "target_lang": "<De>",
        "valid_corpus": "", "init_checkpoint": "", "extra_vocab": "",
    }
    cfg = _resolve_config(args, defaults)
    corpus_path = _require_file(args.corpus, "training corpus")
    lexicon_path = _require_file(args.lexicon, "lexicon file")
    valid_path = _require_file(cfg["valid_corpus"] or None, "validation corpus")
    train_corpus = load_corpus(corpus_path, "train")
    valid_corpus = load_corpus(valid_path, "valid")
    lex = _load_lexicon_for(cfg, lexicon_path)
    switch = SwitchConfig(
        k=cfg["k"],
        tau=cfg["tau"],
        seed=cfg["seed"],
        strict_algorithm1=cfg["strict_algorithm1"],
        resample_per_epoch=cfg["resample_per_epoch"],
    )
    model_cfg = ModelConfig(
        layers=cfg["layers"],
        heads=cfg["heads"],
        hidden_dim=cfg["hidden_dim"],
        max_positions=cfg["max_positions"],
        gumbel_temperature=cfg["gumbel_temperature"],
        gumbel_hard=cfg["gumbel_hard"],
        dropout=cfg["dropout"],
    )
    train_cfg = TrainConfig(
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        switch=switch,
        model=model_cfg,
        contrastive_scale=cfg["contrastive_scale"],
        normalize_negatives=cfg["normalize_negatives"],
        grad_clip=cfg["grad_clip"] or None,
        init_checkpoint=cfg["init_checkpoint"] or None,
    )
    extra_tokens: list[str] = []
    inputs = {"corpus": corpus_path, "lexicon": lexicon_path, "valid": valid_path}
    if cfg["extra_vocab"]:
        extra_path = _require_file(cfg["extra_vocab"], "extra vocabulary file")
        extra_tokens = [
            line.strip()
            for line in extra_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        inputs["extra_vocab"] = extra_path
    out_dir = _out_dir(args)
    result = fit(
        train_cfg, train_corpus, valid_corpus, lex, out_dir,
        extra_tokens=extra_tokens,
    )
    manifest = _write_manifest(
        out_dir, "train", cfg, inputs,
        [result.log_path.name, "checkpoints"],
    )
    sys.stdout.write(
        f"best checkpoint: {result.best_checkpoint}\n"
        f"best validation ppl: {result.best_val_ppl:.4f}\n"
    )
    return [result.log_path, result.best_checkpoint, manifest]


def _cmd_generate(args) -> list[Path]:
    defaults = {
        "beam_size": 6, "max_len": 50, "min_len": 1,
        "length_norm_exponent": 0.0, "seed": 0, "filler": "unigram",
        "response_tag": "", "split": "test",
    }
    cfg = _resolve_config(args, defaults)
    checkpoint = _require_file(args.checkpoint, "checkpoint directory")
    corpus_path = _require_file(args.corpus, "input corpus")
    model = load_checkpoint(checkpoint)
    corpus = load_corpus(corpus_path, cfg["split"])
    gen_cfg = GenerationConfig(
        beam_size=cfg["beam_size"],
        max_len=cfg["max_len"],
        min_len=cfg["min_len"],
        length_norm_exponent=cfg["length_norm_exponent"],
    )
    if cfg["filler"] == "unigram":
        counts_path = Path(checkpoint) / "filler_counts.json"
        if counts_path.exists():
            filler = UnigramFrequencyFiller.from_json(
                counts_path.read_text(encoding="utf-8")
            )
        else:
            warnings.warn(
                "checkpoint has no filler_counts.json; placeholders left as-is",
                RuntimeWarning,
            )
            filler = IdentityFiller()
    elif cfg["filler"] == "identity":
        filler = IdentityFiller()
    else:
        raise ConfigError(f"unknown filler {cfg['filler']!r}")
    records = generate_responses(
        model, corpus, gen_cfg,
        filler=filler,
        response_tag=cfg["response_tag"] or None,
    )
    out_dir = _out_dir(args)
    gen_path = out_dir / "generated.jsonl"
    write_generation_file(records, gen_path)
    manifest = _write_manifest(
        out_dir, "generate", cfg,
        {"corpus": corpus_path, "checkpoint_manifest": Path(checkpoint) / "manifest.json"},
        [gen_path.name],
    )
    return [gen_path, manifest]


def _cmd_evaluate(args) -> list[Path]:
    defaults = {"smooth_bleu": False, "split": "test", "generated": ""}
    cfg = _resolve_config(args, defaults)
    corpus_path = _require_file(args.corpus, "reference corpus")
    generated_path = _require_file(
        getattr(args, "generated", None) or (cfg["generated"] or None),
        "generation output file",
    )
    corpus = load_corpus(corpus_path, cfg["split"])
    by_id = {ex.id: ex for ex in corpus.examples}
    candidates, references = [], []
    for rec in read_generation_file(generated_path):
        ex = by_id.get(rec["id"])
        if ex is None:
            raise ConfigError(f"generated id {rec['id']!r} missing from references")
        candidates.append(rec["response"].split())
        references.append(list(ex.response))
    vectors = None
    inputs = {"corpus": corpus_path, "generated": generated_path}
    if args.vectors:
        vectors_path = _require_file(args.vectors, "word vector file")
        vectors = WordVectorTable.load(vectors_path)
        inputs["vectors"] = vectors_path
    model = None
    eval_corpus = None
    if args.checkpoint:
        checkpoint = _require_file(args.checkpoint, "checkpoint directory")
        model = load_checkpoint(checkpoint)
        eval_corpus = corpus
        inputs["checkpoint_manifest"] = Path(checkpoint) / "manifest.json"
    report = compute_report(
        candidates, references,
        vectors=vectors, model=model, corpus=eval_corpus,
        smooth_bleu=cfg["smooth_bleu"],
    )
    out_dir = _out_dir(args)
    json_path = out_dir / "metrics.json"
    text_path = out_dir / "metrics.txt"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    text_path.write_text(report.render(), encoding="utf-8")
    sys.stdout.write(report.render())
    manifest = _write_manifest(
        out_dir, "evaluate", cfg, inputs, [json_path.name, text_path.name]
    )
    return [json_path, text_path, manifest]


def _cmd_compare(args) -> list[Path]:
    cfg = _resolve_config(args, {})
    zero_path = _require_file(args.zero, "zero-shot metrics file")
    sup_path = _require_file(args.sup, "supervised metrics file")
    zero = MetricsReport.from_json(zero_path.read_text(encoding="utf-8"))
    sup = MetricsReport.from_json(sup_path.read_text(encoding="utf-8"))
    comparison = zero_sup_percentage(zero, sup)
    out_dir = _out_dir(args)
    text_path = out_dir / "comparison.txt"
    json_path = out_dir / "comparison.json"
    text_path.write_text(comparison.render(), encoding="utf-8")
    json_path.write_text(comparison.to_json() + "\n", encoding="utf-8")
    sys.stdout.write(comparison.render())
    manifest = _write_manifest(
        out_dir, "compare", cfg,
        {"zero": zero_path, "sup": sup_path},
        [text_path.name, json_path.name],
    )
    return [text_path, json_path, manifest]


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"flat key = value file (or ${CONFIG_ENV})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory (default: current)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossdial",
        description="zero-shot cross-lingual dialogue generation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="write augmented view records")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument(
        "--strict-algorithm1", dest="strict_algorithm1",
        action=argparse.BooleanOptionalAction, default=None,
    )
    p.set_defaults(handler=_cmd_build_corpus)

    p = sub.add_parser("coverage", help="lexicon coverage of a corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--split", default=None)
    p.set_defaults(handler=_cmd_coverage)

    p = sub.add_parser("train", help="train a model on view-augmented batches")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--valid", dest="valid_corpus", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("generate", help="beam-decode responses for a corpus")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--beam", dest="beam_size", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--min-len", dest="min_len", type=int, default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--filler", default=None, choices=("unigram", "identity"))
    p.add_argument("--tag", dest="response_tag", default=None)
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("evaluate", help="score generated responses")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--vectors", default=None)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("compare", help="zero-shot vs supervised percentages")
    _add_common(p)
    p.add_argument("--zero", required=True)
    p.add_argument("--sup", required=True)
    p.set_defaults(handler=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outputs = args.handler(args)
    except _HANDLED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    missing = [str(p) for p in outputs if not Path(p).exists()]
    if missing:
        print(f"error: outputs not written: {missing}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
