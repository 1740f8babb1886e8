"""Command-line entry point wiring corpus generation, training, hidden
export, tuning, diagnostics, evaluation, the benchmark, and the risk
oracle check.

Every run that writes files records a manifest (JSON) alongside its
outputs: the command, its fully resolved configuration, seeds, input
checksums, and output checksums. The manifest is written before the run
(inputs only) and rewritten after it (outputs filled in), and `rerun`
re-executes a manifest to reproduce the outputs bit for bit. All file
writes go through a temp-file-plus-rename so a crash never leaves a
half-written artifact. Errors from any module surface as one
machine-parsable line naming the originating module.

Commands whose result goes to stdout (`diagnose`, `eval`, `risk-check`)
record a manifest only when `--out` is given.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .corpus import (
    build_vocab,
    default_benchmark_config,
    generate_synthetic,
    load_corpus,
    load_embeddings,
    load_synth_config,
    load_vocab,
    save_corpus,
    save_embedding_file,
    save_synth_config,
    save_vocab,
    synth_embedding_vectors,
    table_from_vectors,
    with_seed,
)
from .errors import CliError, RmtuneError
from .evaluation import (
    BenchmarkConfig,
    confusion_counts,
    default_benchmark_settings,
    macro_f,
    predict,
    run_benchmark,
)
from .heads import (
    ModelConfig,
    TrainConfig,
    export_hidden,
    load_checkpoint,
    load_hidden,
    save_checkpoint,
    save_hidden,
    train,
)
from .scoremodel import format_report, gaussianity_diagnostic, load_scores
from .risk import grid_cross_check
from .tuner import TuneConfig, TuneTrace, save_trace, tune

MANIFEST_FORMAT = "rmtune-manifest v1"


# ---------------------------------------------------------------------------
# Atomic writes and checksums
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic(path, saver, *args) -> str:
    """Run `saver(*args, tmp)` then rename tmp onto `path`."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rmtune-tmp-")
    os.close(fd)
    try:
        saver(*args, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _save_text(text: str, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _write_manifest(doc: dict, path) -> None:
    _atomic(path, _save_text, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Command implementations
#
# Each runner takes the resolved configuration (a plain JSON-able dict, the
# same one the manifest records) and the output location, and returns
# {output-name: written path}. The argparse layer only builds these dicts.
# ---------------------------------------------------------------------------

def _run_gen(cfg: dict, out: str) -> dict:
    synth = _synth_from_doc(cfg["synth"])
    train_c, test_c = generate_synthetic(synth)
    vocab = build_vocab([train_c, test_c])
    vectors = synth_embedding_vectors(synth)
    os.makedirs(out, exist_ok=True)
    paths = {
        "train": os.path.join(out, "train.jsonl"),
        "test": os.path.join(out, "test.jsonl"),
        "vocab": os.path.join(out, "vocab.txt"),
        "embeddings": os.path.join(out, "embeddings.txt"),
        "config": os.path.join(out, "config.json"),
    }
    _atomic(paths["train"], save_corpus, train_c)
    _atomic(paths["test"], save_corpus, test_c)
    _atomic(paths["vocab"], save_vocab, vocab)
    _atomic(paths["embeddings"], save_embedding_file, vectors)
    _atomic(paths["config"], save_synth_config, synth)
    return paths


def _synth_from_doc(doc: dict):
    from .corpus import HeadSpec, SynthConfig

    doc = dict(doc)
    heads = [HeadSpec(**h) for h in doc.pop("heads")]
    doc["sentence_len"] = tuple(doc["sentence_len"])
    config = SynthConfig(heads=heads, **doc)
    config.validate()
    return config


def _synth_doc(config) -> dict:
    doc = asdict(config)
    doc["sentence_len"] = list(doc["sentence_len"])
    return doc


def _run_train(cfg: dict, out: str) -> dict:
    corpus = load_corpus(cfg["corpus"])
    model_config = ModelConfig(**_untuple(cfg["model"], "widths"))
    training = TrainConfig(**cfg["training"])
    vocab = (load_vocab(cfg["vocab"]) if cfg["vocab"]
             else build_vocab([corpus]))
    if cfg["embeddings"]:
        table = load_embeddings(cfg["embeddings"], vocab,
                                model_config.emb_dim, seed=training.seed)
    else:
        table = table_from_vectors({}, vocab, model_config.emb_dim,
                                   seed=training.seed)
    if training.mode == "independent":
        if not cfg["head"]:
            raise CliError("independent training writes one checkpoint; "
                           "name the head with --head")
        models = train(corpus, vocab, table, model_config, training,
                       heads=[cfg["head"]])
        model = models[cfg["head"]]
    else:
        model = train(corpus, vocab, table, model_config, training)
    _atomic(out, save_checkpoint, model)
    return {"checkpoint": out}


def _untuple(doc: dict, *keys) -> dict:
    doc = dict(doc)
    for key in keys:
        doc[key] = tuple(doc[key])
    return doc


def _run_export_hidden(cfg: dict, out: str) -> dict:
    model = load_checkpoint(cfg["model"])
    corpus = load_corpus(cfg["corpus"])
    records = export_hidden(model, corpus)
    _atomic(out, save_hidden, records, model.config.hidden_dim)
    return {"hidden": out}


def _run_tune(cfg: dict, out: str) -> dict:
    model = load_checkpoint(cfg["model"])
    _, records = load_hidden(cfg["hidden"])
    hidden = np.stack([h for _, h in records])
    names = cfg["heads"]
    tune_cfg = None
    if cfg["iters"] > 0:
        tune_cfg = TuneConfig(delta=cfg["delta"],
                              learning_rate=cfg["lr"],
                              max_iters=cfg["iters"],
                              tolerance=cfg["tol"],
                              priors=tuple(cfg["priors"]),
                              prior_mode=cfg["prior_mode"],
                              guarded=cfg["guard"])

    def tune_one(name):
        head = model.head(name)
        if tune_cfg is None:
            # --iters 0: the tuned weights are the input weights.
            return name, head, TuneTrace(final_v=head.W[1] - head.W[0])
        tuned, trace = tune(head, hidden, tune_cfg)
        return name, tuned, trace

    if cfg["jobs"] > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(tune_one, names))
    else:
        results = [tune_one(name) for name in names]

    outputs = {"checkpoint": out}
    for name, tuned, trace in results:
        model.heads[model.head_names.index(name)] = tuned
        trace_path = f"{out}.{name}.trace"
        _atomic(trace_path, save_trace, trace)
        outputs[f"trace.{name}"] = trace_path
    _atomic(out, save_checkpoint, model)
    return outputs


def _run_diagnose(cfg: dict, out: str | None) -> dict:
    if cfg["scores"]:
        scores = load_scores(cfg["scores"])
    else:
        model = load_checkpoint(cfg["model"])
        _, records = load_hidden(cfg["hidden"])
        hidden = np.stack([h for _, h in records])
        head = model.head(cfg["head"])
        scores = hidden @ (head.W[1] - head.W[0]) + (head.b[1] - head.b[0])
    text = format_report(gaussianity_diagnostic(scores))
    sys.stdout.write(text)
    if out is None:
        return {}
    _atomic(out, _save_text, text)
    return {"report": out}


def _run_eval(cfg: dict, out: str | None) -> dict:
    model = load_checkpoint(cfg["model"])
    corpus = load_corpus(cfg["corpus"])
    names = cfg["heads"] or model.head_names
    unknown = [n for n in names if n not in model.head_names]
    if unknown:
        raise CliError(f"model has no head named {', '.join(unknown)}")
    predicted = predict(model, corpus)
    header = ["head", "prec_pos", "rec_pos", "f_pos",
              "prec_neg", "rec_neg", "f_neg", "macro_f"]
    body = []
    for name in names:
        actual = np.array([t.label(name) for t in corpus.turns])
        r = macro_f(confusion_counts(predicted[name], actual), name)
        body.append([name] + [f"{v:.4f}" for v in
                              (r.precision_pos, r.recall_pos, r.f_pos,
                               r.precision_neg, r.recall_neg, r.f_neg,
                               r.macro_f)])
    widths = [max(len(row[i]) for row in [header] + body)
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths))
              for row in body]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out is None:
        return {}
    _atomic(out, _save_text, text)
    return {"table": out}


def _run_benchmark(cfg: dict, out: str) -> dict:
    synth = _synth_from_doc(cfg["synth"])
    train_c, test_c = generate_synthetic(synth)
    vocab = build_vocab([train_c, test_c])
    table = table_from_vectors(synth_embedding_vectors(synth), vocab,
                               synth.embedding_dim, seed=1)
    bench = BenchmarkConfig(
        model=ModelConfig(**_untuple(cfg["model"], "widths")),
        training=TrainConfig(**cfg["training"]),
        tuning=TuneConfig(**_untuple(cfg["tuning"], "priors")),
        seeds=tuple(cfg["seeds"]),
        rare_threshold=cfg["rare_threshold"],
        prior_source=cfg["prior_source"])
    result = run_benchmark(train_c, test_c, vocab, table, bench,
                           jobs=cfg["jobs"])
    os.makedirs(out, exist_ok=True)
    paths = {
        "csv": os.path.join(out, "benchmark.csv"),
        "table": os.path.join(out, "benchmark.txt"),
    }
    _atomic(paths["csv"], _save_text, result.to_csv())
    _atomic(paths["table"], _save_text, result.format_table())
    sys.stdout.write(result.format_table())
    return paths


def _run_risk_check(cfg: dict, out: str | None) -> dict:
    max_rel, rows = grid_cross_check()
    ok = max_rel < cfg["tol"]
    lines = [f"{s0} {s1} {rel!r}" for s0, s1, rel in rows]
    lines.append(f"max_relative_difference {max_rel!r} tolerance "
                 f"{cfg['tol']!r} {'PASS' if ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out is not None:
        _atomic(out, _save_text, text)
    if not ok:
        raise CliError(f"risk oracle grid check failed: max relative "
                       f"difference {max_rel!r} >= {cfg['tol']!r}")
    return {"grid": out} if out is not None else {}


# name -> (runner, output is a directory, keys of cfg holding input paths)
_COMMANDS = {
    "gen": (_run_gen, True, ("config",)),
    "train": (_run_train, False, ("corpus", "vocab", "embeddings")),
    "export-hidden": (_run_export_hidden, False, ("model", "corpus")),
    "tune": (_run_tune, False, ("model", "hidden")),
    "diagnose": (_run_diagnose, False, ("scores", "model", "hidden")),
    "eval": (_run_eval, False, ("model", "corpus")),
    "benchmark": (_run_benchmark, True, ("config",)),
    "risk-check": (_run_risk_check, False, ()),
}


def _execute(command: str, cfg: dict, seeds: list, out: str | None) -> int:
    runner, out_is_dir, input_keys = _COMMANDS[command]
    manifest_path = None
    if out is not None:
        if out_is_dir:
            os.makedirs(out, exist_ok=True)
            manifest_path = os.path.join(out, "manifest.json")
        else:
            manifest_path = out + ".manifest.json"
    doc = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "command": command,
        "config": cfg,
        "seeds": seeds,
        "inputs": {
            key: {"path": cfg[key], "sha256": _sha256(cfg[key])}
            for key in input_keys if cfg.get(key)
        },
        "outputs": {},
    }
    if manifest_path is not None:
        _write_manifest(doc, manifest_path)
    outputs = runner(cfg, out)
    if manifest_path is not None:
        base = os.path.dirname(os.path.abspath(manifest_path))
        doc["outputs"] = {
            name: {"file": os.path.relpath(os.path.abspath(path), base),
                   "sha256": _sha256(path)}
            for name, path in outputs.items()
        }
        _write_manifest(doc, manifest_path)
    return 0


def _rerun(manifest: str, out_override: str | None) -> int:
    with open(manifest, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except ValueError as e:
            raise CliError(f"{manifest}: not a manifest ({e})") from e
    if doc.get("format") != MANIFEST_FORMAT:
        raise CliError(f"{manifest}: unknown manifest format "
                       f"{doc.get('format')!r}")
    command = doc["command"]
    if command not in _COMMANDS:
        raise CliError(f"{manifest}: unknown command {command!r}")
    _, out_is_dir, _ = _COMMANDS[command]
    for name, entry in doc.get("inputs", {}).items():
        if _sha256(entry["path"]) != entry["sha256"]:
            raise CliError(f"input {name} ({entry['path']}) changed since "
                           f"the manifest was written")
    if out_override is not None:
        out = out_override
    elif out_is_dir:
        out = os.path.dirname(os.path.abspath(manifest))
    elif manifest.endswith(".manifest.json"):
        out = manifest[: -len(".manifest.json")]
    else:
        raise CliError(f"cannot infer the output path from {manifest}; "
                       f"pass --out")
    code = _execute(command, doc["config"], doc.get("seeds", []), out)
    if code == 0 and doc.get("outputs"):
        base = os.path.dirname(os.path.abspath(
            os.path.join(out, "manifest.json") if out_is_dir
            else out + ".manifest.json"))
        stale = [
            name for name, entry in doc["outputs"].items()
            if _sha256(os.path.join(base, entry["file"])) != entry["sha256"]
        ]
        if stale:
            print(f"rerun: outputs differ from manifest: {', '.join(stale)}",
                  file=sys.stderr)
            return 1
        print("rerun: outputs match the manifest")
    return code


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _parse_priors(text: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two values: p0,p1")
    return [float(p) for p in parts]


def _model_doc(args) -> dict:
    doc = asdict(ModelConfig(emb_dim=args.emb, hidden_dim=args.hidden_dim))
    doc["widths"] = list(doc["widths"])
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmtune",
        description="Multi-head binary semantic decoding with unsupervised "
                    "risk-minimisation tuning.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus pair")
    p.add_argument("--config", help="synthetic-corpus config JSON "
                                    "(default: built-in benchmark corpus)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a decoder on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: built from "
                                   "the corpus)")
    p.add_argument("--embeddings", help="pretrained embedding file "
                                        "(default: seeded random table)")
    p.add_argument("--mode", choices=("joint", "independent"),
                   default="joint")
    p.add_argument("--head", help="head to fit in independent mode")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--dropout", type=float, default=TrainConfig.dropout)
    p.add_argument("--emb", type=int, default=ModelConfig.emb_dim,
                   help="embedding dimension")
    p.add_argument("--hidden-dim", type=int, default=ModelConfig.hidden_dim)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint file")

    p = sub.add_parser("export-hidden",
                       help="write the hidden vector of every turn")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="hidden-vector file")

    p = sub.add_parser("tune", help="risk-tune heads on unlabeled hiddens")
    p.add_argument("--model", required=True)
    p.add_argument("--hidden", required=True)
    p.add_argument("--head", action="append", required=True,
                   help="head to tune (repeatable)")
    p.add_argument("--priors", type=_parse_priors, default=[0.99, 0.01],
                   metavar="p0,p1")
    p.add_argument("--prior-mode", choices=("fixed", "estimated"),
                   default="fixed")
    p.add_argument("--delta", type=float, default=TuneConfig.delta)
    p.add_argument("--lr", type=float, default=TuneConfig.learning_rate)
    p.add_argument("--iters", type=int, default=TuneConfig.max_iters,
                   help="coordinate sweeps; 0 writes the input weights")
    p.add_argument("--tol", type=float, default=TuneConfig.tolerance)
    p.add_argument("--guard", choices=("on", "off"), default="on")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="tuned checkpoint file")

    p = sub.add_parser("diagnose",
                       help="normality check of a score sample")
    p.add_argument("--scores", help="score file, one value per line")
    p.add_argument("--model", help="checkpoint (with --hidden and --head)")
    p.add_argument("--hidden")
    p.add_argument("--head")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="per-head metrics of a model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--head", action="append",
                   help="restrict to these heads (repeatable)")
    p.add_argument("--out")

    p = sub.add_parser("benchmark",
                       help="three-condition comparison on synthetic data")
    p.add_argument("--config", help="synthetic-corpus config JSON "
                                    "(default: built-in benchmark corpus)")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument("--seeds", type=int, default=5,
                   help="number of training seeds (0..n-1)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("risk-check",
                       help="closed form vs quadrature over the risk grid")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")

    p = sub.add_parser("rerun", help="re-execute a recorded manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="override the recorded output location")

    return parser


def _dispatch(args) -> int:
    if args.command == "rerun":
        return _rerun(args.manifest, args.out)

    if args.command == "gen":
        synth = (load_synth_config(args.config) if args.config
                 else default_benchmark_config())
        synth = with_seed(synth, args.seed)
        cfg = {"config": args.config, "seed": args.seed,
               "synth": _synth_doc(synth)}
        return _execute("gen", cfg, [args.seed], args.out)

    if args.command == "train":
        cfg = {
            "corpus": args.corpus, "vocab": args.vocab,
            "embeddings": args.embeddings, "head": args.head,
            "model": _model_doc(args),
            "training": asdict(TrainConfig(
                epochs=args.epochs, batch_size=args.batch_size,
                dropout=args.dropout, mode=args.mode, seed=args.seed)),
        }
        return _execute("train", cfg, [args.seed], args.out)

    if args.command == "export-hidden":
        cfg = {"model": args.model, "corpus": args.corpus}
        return _execute("export-hidden", cfg, [], args.out)

    if args.command == "tune":
        cfg = {
            "model": args.model, "hidden": args.hidden, "heads": args.head,
            "priors": args.priors, "prior_mode": args.prior_mode,
            "delta": args.delta, "lr": args.lr, "iters": args.iters,
            "tol": args.tol, "guard": args.guard == "on", "jobs": args.jobs,
        }
        return _execute("tune", cfg, [], args.out)

    if args.command == "diagnose":
        by_scores = args.scores is not None
        by_margin = all(v is not None
                        for v in (args.model, args.hidden, args.head))
        if by_scores == by_margin:
            raise CliError("pass either --scores or all of --model, "
                           "--hidden, --head")
        cfg = {"scores": args.scores, "model": args.model,
               "hidden": args.hidden, "head": args.head}
        return _execute("diagnose", cfg, [], args.out)

    if args.command == "eval":
        cfg = {"model": args.model, "corpus": args.corpus,
               "heads": args.head}
        return _execute("eval", cfg, [], args.out)

    if args.command == "benchmark":
        synth = (load_synth_config(args.config) if args.config
                 else default_benchmark_config())
        synth = with_seed(synth, args.seed)
        settings = default_benchmark_settings()
        cfg = {
            "config": args.config,
            "synth": _synth_doc(synth),
            "model": _doc_with_list(asdict(settings.model), "widths"),
            "training": asdict(settings.training),
            "tuning": _doc_with_list(asdict(settings.tuning), "priors"),
            "seeds": list(range(args.seeds)),
            "rare_threshold": settings.rare_threshold,
            "prior_source": settings.prior_source,
            "jobs": args.jobs,
        }
        return _execute("benchmark", cfg, cfg["seeds"], args.out)

    if args.command == "risk-check":
        return _execute("risk-check", {"tol": args.tol}, [], args.out)

    raise CliError(f"unknown command {args.command!r}")


def _doc_with_list(doc: dict, *keys) -> dict:
    for key in keys:
        doc[key] = list(doc[key])
    return doc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except RmtuneError as e:
        message = " ".join(str(e).split())
        print(f"rmtune: error: module={e.module}: {message}", file=sys.stderr)
        return 2
    except OSError as e:
        message = " ".join(str(e).split())
        print(f"rmtune: error: module=cli: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
