"""Command-line driver: synth -> pretrain -> finetune -> eval -> analyze, plus sweeps.

Every command writes its artifacts under ``--out DIR`` with ``manifest.json``
at the root. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (DEFAULT_TOPK, DISPLAY_THRESHOLD, SOURCES, build_index, correlation_report,
                       frequency_f1_report, neighbors, write_reports)
from .checkpoint import MANIFEST, Checkpoint, _atomic_write
from .corpus import (LabelVocab, SynthTruth, Vocab, build_vocabs, corpus_stats, load_corpus, split_corpus,
                     synth_corpus, write_corpus)
from .encoders import KINDS, EncoderConfig
from .errors import ConfigError, CorpusParseError, LWPTError, ParameterError, UsageError
from .experiments import ExperimentSpec, default_dims, run_experiment
from .finetune import (FinetuneConfig, finetune_checkpoint,
                       predict_documents, run_finetune, write_predictions)
from .metrics import HAMMING_DENOMINATORS, MetricsReport, evaluate_arrays, evaluate_file
from .pretrain import PretrainConfig, result_checkpoint, run_pretraining

log = logging.getLogger("lwpt")

RUN_FORMAT_VERSION = 1
DEFAULT_PAIRS = "L0:L1:0.9,L2:L3:0.6"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns the exit code."""

    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    return [int(x) for x in _floats(text)]


def _pairs(text: str) -> list[tuple]:
    out = []
    for item in filter(None, (s.strip() for s in str(text).split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"correlation pair {item!r} is not a:b:strength")
        out.append((parts[0], parts[1], float(parts[2])))
    return out


def _load(path, what: str, require_labels: bool = True):
    if path is None:
        raise ConfigError(f"no {what} corpus given")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} corpus {p} does not exist")
    return load_corpus(p, require_labels)


def _split_paths(args) -> dict:
    """Resolve --train/--valid/--test, falling back to files inside --data."""
    out = {}
    for name in ("train", "valid", "test"):
        explicit = getattr(args, name, None)
        if explicit:
            out[name] = explicit
        elif getattr(args, "data", None):
            out[name] = str(Path(args.data) / f"{name}.jsonl")
        else:
            out[name] = None
    return out


def content_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(out: Path, command: str, config: dict, *, stats=None, checkpoints=None,
                   metrics=None, timings=None, artifacts=None, extra=None) -> dict:
    """Write ``manifest.json`` atomically.

    ``content_hash`` covers everything except ``timings`` (wall-clock values
    differ between otherwise identical runs).
    """
    body = {
        "format_version": RUN_FORMAT_VERSION,
        "package_version": __version__,
        "command": command,
        "config": config,
        "corpus_stats": stats or {},
        "checkpoints": checkpoints or {},
        "metrics": metrics or {},
        "artifacts": sorted(artifacts or []),
    }
    body.update(extra or {})
    body["content_hash"] = content_hash(body)
    body["timings"] = timings or {}
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / MANIFEST, (json.dumps(body, indent=1, sort_keys=True) + "\n").encode("utf-8"))
    return body


def _config_snapshot(args) -> dict:
    skip = {"func", "config", "verbose", "encoder_explicit", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _resolve_dims(args, kind: str):
    dims = default_dims(kind)
    d = args.dim if args.dim is not None else dims["dim"]
    t = args.t if args.t is not None else dims["t"]
    m = args.m if args.m is not None else dims["m"]
    return d, (args.embed_dim if args.embed_dim is not None else d), t, m


def _encoder_config(args, vocab_size, num_labels, kind=None):
    kind = kind or args.encoder
    d, e, t, m = _resolve_dims(args, kind)
    cfg = EncoderConfig(kind, vocab_size, num_labels, e, d, args.layers, args.dropout)
    return cfg, t, m


def _pretrain_config(args, n=None) -> PretrainConfig:
    return PretrainConfig(n or args.candidates, args.batch_size, args.iterations, args.lr, args.seed,
                          args.log_every)


def _finetune_config(args) -> FinetuneConfig:
    return FinetuneConfig(args.epochs, args.ft_batch_size, args.ft_lr, args.freeze_encoders,
                          args.threshold, not args.no_head_bias, args.seed)


def _open_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if (p / "checkpoint" / MANIFEST).exists():   # a run directory
        p = p / "checkpoint"
    if not (p / MANIFEST).exists():
        raise ConfigError(f"no checkpoint found at {path}")
    return Checkpoint.load(p)


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    rates = _floats(args.label_rates)
    if len(rates) not in (1, args.num_labels):
        raise ConfigError(f"--label-rates needs 1 or {args.num_labels} values, got {len(rates)}")
    docs, truth = synth_corpus(
        args.num_labels, args.num_docs, _pairs(args.pairs), args.signature_tokens, args.noise_rate,
        args.seed, rates if len(rates) > 1 else rates[0], args.tokens_per_label,
        args.sentence_length, args.noise_vocab, args.max_labels,
    )
    parts = split_corpus(docs, _floats(args.split), rng=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    names = ("train", "valid", "test")
    for name, part in zip(names, parts):
        write_corpus(part, out / f"{name}.jsonl")
    truth.save(out / "truth.json")
    stats = {name: corpus_stats(part).to_json() for name, part in zip(names, parts) if part}
    write_manifest(out, "synth", _config_snapshot(args), stats=stats,
                   artifacts=[f"{n}.jsonl" for n in names] + ["truth.json"],
                   timings={"total_s": time.perf_counter() - t0})
    print(f"wrote {' + '.join(str(len(p)) for p in parts)} = {len(docs)} documents to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    train = _load(_split_paths(args)["train"], "train")
    vocab, label_vocab = build_vocabs(train, args.min_count)
    enc_cfg, t, m = _encoder_config(args, len(vocab), len(label_vocab))
    pcfg = _pretrain_config(args)
    result = run_pretraining(train, vocab, label_vocab, enc_cfg, pcfg, t, m)
    ckpt = result_checkpoint(result, vocab, label_vocab, t, m, pcfg)
    digest = ckpt.save(out / "checkpoint")
    tail = result.loss_history[-min(100, len(result.loss_history)):]
    metrics = {"final_mean_loss": float(np.mean(tail)) if tail else None,
               "skipped_pairs": result.skipped, "epochs": result.epochs}
    (out / "loss.csv").write_text(
        "step,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(result.loss_history))
    )
    write_manifest(out, "pretrain", _config_snapshot(args), stats={"train": corpus_stats(train).to_json()},
                   checkpoints={"pretrain": digest}, metrics=metrics,
                   artifacts=["checkpoint", "loss.csv"], timings={"total_s": time.perf_counter() - t0},
                   extra={"encoder": asdict(enc_cfg), "dims": {"t": t, "m": m}})
    print(f"pre-training done: mean loss over last {len(tail)} steps {metrics['final_mean_loss']:.4f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    paths = _split_paths(args)
    train, valid = _load(paths["train"], "train"), _load(paths["valid"], "valid")
    test = _load(paths["test"], "test") if paths["test"] and Path(paths["test"]).exists() else None
    ckpt = None
    if args.init == "pretrained":
        if not args.checkpoint:
            raise ConfigError("--init pretrained needs --checkpoint")
        ckpt = _open_checkpoint(args.checkpoint)
        vocab, label_vocab = Vocab(ckpt.vocab), LabelVocab(ckpt.labels)
        enc_cfg = EncoderConfig(**ckpt.encoder)
        if args.encoder and args.encoder != enc_cfg.kind and args.encoder_explicit:
            raise ConfigError(f"checkpoint holds {enc_cfg.kind} encoders, not {args.encoder}")
        t, m = ckpt.dims["t"], ckpt.dims.get("m", 1)
    else:
        vocab, label_vocab = build_vocabs(train, args.min_count)
        enc_cfg, t, m = _encoder_config(args, len(vocab), len(label_vocab))
    fcfg = _finetune_config(args)
    result = run_finetune(train, valid, vocab, label_vocab, enc_cfg, fcfg, t, m, ckpt)
    extra = {"init": args.init, "pretrain_checkpoint": ckpt.digest() if ckpt else None}
    ft_ckpt = finetune_checkpoint(result, vocab, label_vocab, t, m, fcfg, extra)
    digests = {"finetune": ft_ckpt.save(out / "checkpoint")}
    if ckpt is not None:
        digests["pretrain"] = ckpt.digest()
    metrics, artifacts = {}, ["checkpoint", "labels.json"]
    for name, docs in (("valid", valid), ("test", test)):
        if docs is None:
            continue
        batch, probs, decided = predict_documents(result.model, docs, vocab, label_vocab, t, m, fcfg.threshold)
        write_predictions(out / f"predictions_{name}.jsonl", batch.doc_ids, probs, decided,
                          batch.labels > 0, label_vocab.to_list())
        report = evaluate_arrays(probs, batch.labels > 0, decided, label_vocab.to_list())
        report.save(out / f"metrics_{name}.json")
        metrics[name] = {k: getattr(report, k) for k in ("one_error", "hamming_loss", "macro_f1", "micro_f1")}
        artifacts += [f"predictions_{name}.jsonl", f"metrics_{name}.json"]
        print(f"{name:<6}{report.headline()}")
    write_manifest(out, "finetune", _config_snapshot(args), stats={"train": corpus_stats(train).to_json()},
                   checkpoints=digests, metrics=metrics, artifacts=artifacts,
                   timings={"total_s": time.perf_counter() - t0},
                   extra={"best_epoch": result.best_epoch, "epoch_log": result.log,
                          "encoder": asdict(enc_cfg), "dims": {"t": t, "m": m}})
    print(f"best epoch {result.best_epoch} (valid micro-F1 {result.best_valid_micro_f1:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    labels = None
    if args.labels:
        labels = json.loads(Path(args.labels).read_text())
    if not Path(args.predictions).is_file():
        raise ConfigError(f"predictions file {args.predictions} does not exist")
    report = evaluate_file(args.predictions, labels, args.hamming_denominator)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "metrics.json")
        write_manifest(out, "eval", _config_snapshot(args), metrics=report.to_json(),
                       artifacts=["metrics.json"], timings={"total_s": time.perf_counter() - t0})
    return EXIT_OK


def cmd_analyze(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    ckpt = _open_checkpoint(args.checkpoint)
    docs = _load(args.corpus, "analysis")
    index = build_index(docs, ckpt, args.source)
    table = corr = freq = None
    if args.query is not None or args.label is not None:
        if args.query is None or args.label is None:
            raise ConfigError("--query and --label go together")
        table = neighbors(index, args.query, args.label, args.topk, args.threshold)
        print(table.table())
    truth = SynthTruth.load(args.truth) if args.truth else None
    if truth is not None or args.correlation:
        corr = correlation_report(index, truth, min(args.topk, index.num_docs - 1))
        if corr.spearman is not None:
            print(f"rank correlation with planted truth: {corr.spearman:.4f}")
    if args.metrics:
        if not args.train:
            raise ConfigError("--metrics needs --train for label frequencies")
        report = MetricsReport.from_json(json.loads(Path(args.metrics).read_text()))
        freq = frequency_f1_report(_load(args.train, "train"), report, args.bins, args.bin_scheme)
    written = write_reports(out, table, corr, freq)
    metrics = {"spearman": corr.spearman} if corr is not None else {}
    write_manifest(out, "analyze", _config_snapshot(args), checkpoints={"analyzed": ckpt.digest()},
                   metrics=metrics, artifacts=written, timings={"total_s": time.perf_counter() - t0})
    return EXIT_OK


SWEEP_COLUMNS = ("one_error", "hamming_loss", "macro_f1", "micro_f1")


def cmd_sweep(args) -> int:
    """Run a grid of pre-train/fine-tune experiments and tabulate test metrics."""
    t0 = time.perf_counter()
    out = Path(args.out)
    paths = _split_paths(args)
    train, valid, test = (_load(paths[n], n) for n in ("train", "valid", "test"))
    seeds = _ints(args.seeds) if args.seeds else [args.seed]
    points = []
    if args.grid == "candidates":
        for n in _ints(args.values or "3,4,5"):
            points.append((f"n={n}", args.encoder, n, True))
    else:  # encoders x {pretrained, random}
        kinds = [k.strip() for k in (args.values or f"{args.encoder},lstm_attn").split(",")]
        for kind in kinds:
            if kind not in KINDS:
                raise ConfigError(f"unknown encoder kind {kind!r}")
            points.append((f"{kind}+PT", kind, args.candidates, True))
            points.append((kind, kind, args.candidates, False))
    rows = []
    for name, kind, n, use_pt in points:
        for seed in seeds:
            d, e, t, m = _resolve_dims(args, kind)
            pcfg = PretrainConfig(n, args.batch_size, args.iterations, args.lr, seed, args.log_every)
            fcfg = FinetuneConfig(args.epochs, args.ft_batch_size, args.ft_lr, args.freeze_encoders,
                                  args.threshold, not args.no_head_bias, seed)
            spec = ExperimentSpec(kind, d, e, args.layers, args.dropout, t, m, pcfg if use_pt else None, fcfg)
            res = run_experiment(train, valid, test, spec)
            row = {"config": name, "seed": seed, **res.summary()}
            rows.append(row)
            print(f"{name:<16} seed {seed}: " + "  ".join(f"{c} {row[c]:.4f}" for c in SWEEP_COLUMNS))
    summary = []
    for name, *_ in points:
        sel = [r for r in rows if r["config"] == name]
        summary.append({"config": name, "runs": len(sel),
                        **{c: float(np.median([r[c] for r in sel])) for c in SWEEP_COLUMNS}})
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps({"runs": rows, "median": summary}, indent=1) + "\n")
    lines = ["config," + ",".join(SWEEP_COLUMNS)]
    lines += [f"{s['config']}," + ",".join(repr(s[c]) for c in SWEEP_COLUMNS) for s in summary]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"\n{'config':<16}" + "".join(f"{c:>14}" for c in SWEEP_COLUMNS))
    for s in summary:
        print(f"{s['config']:<16}" + "".join(f"{s[c]:>14.4f}" for c in SWEEP_COLUMNS))
    write_manifest(out, "sweep", _config_snapshot(args), stats={"train": corpus_stats(train).to_json()},
                   checkpoints={f"{r['config']}/seed{r['seed']}": r["finetune_checkpoint"] for r in rows},
                   metrics={"median": summary}, artifacts=["sweep.json", "sweep.csv"],
                   timings={"total_s": time.perf_counter() - t0})
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _add_data_args(p, splits=("train", "valid", "test")):
    p.add_argument("--data", help="directory holding train.jsonl / valid.jsonl / test.jsonl")
    for name in splits:
        p.add_argument(f"--{name}", help=f"{name} split (JSONL); overrides --data")


def _add_encoder_args(p):
    p.add_argument("--encoder", default="lw_lstm", choices=KINDS)
    p.add_argument("--dim", type=int, help="hidden size d (default 256 flat, 100 hierarchical)")
    p.add_argument("--embed-dim", type=int, help="embedding size (default: same as --dim)")
    p.add_argument("--layers", type=int, default=2, help="stacked BiLSTM layers (flat encoders)")
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--t", type=int, help="words per document/sentence (default 256 flat, 64 hierarchical)")
    p.add_argument("--m", type=int, help="sentences per document (default 32 hierarchical)")
    p.add_argument("--min-count", type=int, default=1, help="drop rarer tokens from the vocabulary")


def _add_pretrain_args(p):
    p.add_argument("--candidates", type=int, default=3, help="candidates per instance, n")
    p.add_argument("--iterations", type=int, default=3000, help="pre-training optimizer steps")
    p.add_argument("--batch-size", type=int, default=128, help="pre-training instances per step")
    p.add_argument("--lr", type=float, default=1e-3, help="pre-training learning rate")
    p.add_argument("--log-every", type=int, default=100)


def _add_finetune_args(p):
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--ft-batch-size", type=int, default=32)
    p.add_argument("--ft-lr", type=float, default=1e-3)
    p.add_argument("--freeze-encoders", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold on probabilities")
    p.add_argument("--no-head-bias", action="store_true", help="drop the classifier bias term")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lwpt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lwpt {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_text, out_required=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat JSON file of option defaults (flags override)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic corpus with planted label correlations")
    p.add_argument("--num-labels", type=int, default=6)
    p.add_argument("--num-docs", type=int, default=2000)
    p.add_argument("--pairs", default=DEFAULT_PAIRS, help="planted pairs a:b:strength, comma separated")
    p.add_argument("--label-rates", default="0.3", help="one base rate, or one per label")
    p.add_argument("--signature-tokens", type=int, default=5)
    p.add_argument("--tokens-per-label", type=int, default=4)
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--noise-vocab", type=int, default=40)
    p.add_argument("--sentence-length", type=int, default=6)
    p.add_argument("--max-labels", type=int, default=3)
    p.add_argument("--split", default="0.7,0.15,0.15")

    p = command("pretrain", cmd_pretrain, "label-wise contrastive pre-training on the train split")
    _add_data_args(p, ("train",))
    _add_encoder_args(p)
    _add_pretrain_args(p)

    p = command("finetune", cmd_finetune, "train the classifier (from scratch or a pre-trained checkpoint)")
    _add_data_args(p)
    _add_encoder_args(p)
    _add_finetune_args(p)
    p.add_argument("--init", choices=("random", "pretrained"), default="random")
    p.add_argument("--checkpoint", help="pre-training run or checkpoint directory")

    p = command("eval", cmd_eval, "compute the metric suite for a predictions file", out_required=False)
    p.add_argument("predictions")
    p.add_argument("--labels", help="JSON list giving the score order (default: labels.json beside the file)")
    p.add_argument("--hamming-denominator", choices=HAMMING_DENOMINATORS, default="slots")

    p = command("analyze", cmd_analyze, "nearest-neighbour and label-correlation analyses")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="documents to index (JSONL)")
    p.add_argument("--query", help="document id for a neighbour table")
    p.add_argument("--label", help="label name whose representation is used")
    p.add_argument("--topk", type=int, default=DEFAULT_TOPK)
    p.add_argument("--threshold", type=float, default=DISPLAY_THRESHOLD, help="display threshold")
    p.add_argument("--source", choices=SOURCES, default="t")
    p.add_argument("--truth", help="synthetic truth file; adds the rank-correlation report")
    p.add_argument("--correlation", action="store_true", help="emit correlation.json without truth")
    p.add_argument("--metrics", help="metrics JSON for the frequency/F1 report")
    p.add_argument("--train", help="training corpus for label frequencies")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--bin-scheme", choices=("log", "linear"), default="log")

    p = command("sweep", cmd_sweep, "candidate-count or encoder ablation grid")
    _add_data_args(p)
    _add_encoder_args(p)
    _add_pretrain_args(p)
    _add_finetune_args(p)
    p.add_argument("--grid", choices=("candidates", "encoders"), default="candidates")
    p.add_argument("--values", help="grid values: candidate counts or encoder kinds, comma separated")
    p.add_argument("--seeds", help="comma-separated seeds; medians are reported")
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("no command given; choose one of synth, pretrain, finetune, eval, analyze, sweep")
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known - {"config"})
        if unknown:
            raise ConfigError(f"{path}: unknown option(s) {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    args.encoder_explicit = any(a == "--encoder" or a.startswith("--encoder=") for a in argv)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError, ParameterError, CorpusParseError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lwpt: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (LWPTError, OSError, ValueError) as exc:
        print(f"lwpt: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
