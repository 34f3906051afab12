"""``gcae`` command line: prepare, train, grad-check, visualize, bench.

Exit codes: 0 success, 2 config/usage error, 3 data error (parse failure,
incompatible data), 4 missing input file, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, dump_config, load_config
from .model import (
    GateKind,
    ModelDims,
    ModelParams,
    ModelVariant,
    SparseRows,
    Task,
    UnsupportedVariantError,
    gate_trace,
    loss_and_grad,
)
from .numeric import NonFiniteError, grad_check
from .reference import reference_loss
from .train import ModelFactory, TrainConfig, bench, run_protocol, write_history_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4, 5
DATA_ENV = "GCAE_DATA_DIR"
SCHEMA_DIR = Path(__file__).parent / "schemas"
GRAD_TOL = 1e-4

log = logging.getLogger("gcae")


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, argv: list[str]):
        self.record = {
            "command": command,
            "argv": argv,
            "config": None,
            "inputs": {},
            "outputs": [],
            "started": datetime.now(timezone.utc).isoformat(),
            "finished": None,
        }

    def input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise CLIError(f"missing input file: {path}", EXIT_MISSING)
        self.record["inputs"][str(path)] = _digest(path)
        return path

    def output(self, path) -> Path:
        self.record["outputs"].append(str(path))
        return Path(path)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        self.output(path)
        self.record["finished"] = datetime.now(timezone.utc).isoformat()
        path.write_text(json.dumps(self.record, indent=2, sort_keys=True) + "\n")
        return path


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- prepare -----------------------------------------------------------------

def _parse_inputs(specs: list[str], merge: bool) -> dict[str, list[tuple[str | None, str]]]:
    """``SPLIT=PATH`` or, with --merge-large, ``SPLIT:YEAR=PATH``."""
    out: dict[str, list] = {"train": [], "test": []}
    for spec in specs:
        if "=" not in spec:
            raise CLIError(f"--input expects SPLIT=PATH, got {spec!r}", EXIT_CONFIG)
        key, path = spec.split("=", 1)
        split, _, year = key.partition(":")
        if split not in out:
            raise CLIError(f"unknown split {split!r} in --input; use train or test", EXIT_CONFIG)
        if merge and year not in ("2014", "2015", "2016"):
            raise CLIError(f"--merge-large inputs need SPLIT:YEAR=PATH with YEAR in 2014-2016, got {spec!r}", EXIT_CONFIG)
        out[split].append((year or None, path))
    if not out["train"] or not out["test"]:
        raise CLIError("--input needs at least one train=... and one test=... file", EXIT_CONFIG)
    return out


def _read_xml(manifest: Manifest, path: str, task: str, schema: str, errors: list) -> list[D.AnnotatedSentence]:
    raw = manifest.input(path).read_bytes()
    try:
        return D.parse_semeval_xml(raw, task, schema, errors)
    except D.SemEvalParseError as exc:
        raise CLIError(f"{path}: {exc}", EXIT_DATA) from exc


def cmd_prepare(args, manifest: Manifest) -> int:
    out = _out_dir(args)
    inputs = _parse_inputs(args.input, args.merge_large)
    errors: list[str] = []
    warnings: list[str] = []
    splits = {}
    if args.merge_large:
        if args.task != "acsa":
            raise CLIError("--merge-large applies to the acsa task only", EXIT_CONFIG)
        for split, files in inputs.items():
            by_year = {"2014": [], "2015": [], "2016": []}
            for year, path in files:
                by_year[year].extend(_read_xml(manifest, path, "acsa", "2014" if year == "2014" else "2015", errors))
            merged = D.merge_restaurant_large(by_year["2014"], by_year["2015"], by_year["2016"], warnings)
            splits[split] = D.explode_instances(merged, "acsa")
        class_count = 3
    else:
        for split, files in inputs.items():
            sents = []
            for _, path in files:
                sents.extend(_read_xml(manifest, path, args.task, args.schema, errors))
            splits[split] = D.explode_instances(sents, args.task)
        class_count = 4
    if errors:
        for e in errors:
            log.error(e)
        (out / "parse_errors.txt").write_text("\n".join(errors) + "\n")
        manifest.output(out / "parse_errors.txt")
    splits["hard_train"] = D.build_hard_subset(splits["train"])
    splits["hard_test"] = D.build_hard_subset(splits["test"])
    for split in ("train", "test", "hard_train", "hard_test"):
        D.write_jsonl(manifest.output(out / f"{split}.jsonl"), splits[split])

    vocab = D.build_vocab(splits["train"], args.min_count)
    aspects = D.aspect_names(splits["train"] + splits["test"]) if args.task == "acsa" else []
    vocab_path = manifest.output(out / "vocab.json")
    vocab_path.write_text(
        json.dumps({"task": args.task, "class_count": class_count, "aspects": aspects, "tokens": vocab.itos}, indent=1)
        + "\n"
    )
    stats = {split: D.dataset_stats(insts) for split, insts in splits.items()}
    report = {"stats": stats, "parse_errors": len(errors), "merge_warnings": warnings}
    if args.expect:
        expected = json.loads(manifest.input(args.expect).read_text())
        mismatches = []
        for split, counts in expected.items():
            for pol, n in counts.items():
                got = stats.get(split, {}).get(pol)
                if got != n:
                    mismatches.append({"split": split, "polarity": pol, "expected": n, "got": got})
        report["expected"] = expected
        report["mismatches"] = mismatches
        for m in mismatches:
            log.warning("stats mismatch %(split)s/%(polarity)s: expected %(expected)s, got %(got)s", m)
    stats_path = manifest.output(out / "stats.json")
    stats_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(_stats_table(stats))
    manifest.write(out)
    return EXIT_DATA if errors else EXIT_OK


def _stats_table(stats: dict) -> str:
    pols = [p.value for p in D.POLARITIES]
    lines = ["split".ljust(12) + "".join(p.rjust(10) for p in pols)]
    for split, counts in stats.items():
        lines.append(split.ljust(12) + "".join(str(counts[p]).rjust(10) for p in pols))
    return "\n".join(lines)


# --- train / bench -------------------------------------------------------------

def _load_config(args, manifest: Manifest) -> TrainConfig:
    if not args.config:
        return TrainConfig()
    try:
        return load_config(manifest.input(args.config))
    except ConfigError as exc:
        raise CLIError(str(exc), EXIT_CONFIG) from exc


def _load_prepared(args, manifest: Manifest, config: TrainConfig, variant: ModelVariant):
    data_dir = Path(args.data or os.environ.get(DATA_ENV, "data"))
    meta = json.loads(manifest.input(data_dir / "vocab.json").read_text())
    task = Task(meta["task"])
    if variant.task is not task:
        raise CLIError(f"variant {variant.name} expects {variant.task.value} data, {data_dir} holds {task.value}", EXIT_DATA)
    if meta["class_count"] != config.class_count:
        raise CLIError(f"config class_count={config.class_count} but data has {meta['class_count']} classes", EXIT_CONFIG)
    vocab = D.Vocabulary(meta["tokens"])
    aspects = meta["aspects"]
    embeddings = None
    if args.embeddings:
        try:
            embeddings = D.load_embeddings(manifest.input(args.embeddings), vocab, config.embedding_dim, config.seed).matrix
        except ValueError as exc:
            raise CLIError(str(exc), EXIT_DATA) from exc
    min_len = max(config.widths)
    sets = {}
    for split, name in (("train", "train"), ("test", "test"), ("hard", "hard_test")):
        path = data_dir / f"{name}.jsonl"
        if split == "hard" and not path.exists():
            continue
        insts = D.read_jsonl(manifest.input(path))
        try:
            sets[split] = D.encode_dataset(insts, vocab, min_len, aspects, config.term_width, config.class_count)
        except (KeyError, ValueError) as exc:
            raise CLIError(f"{path}: {exc}", EXIT_DATA) from exc
    factory = ModelFactory.from_config(variant, config, len(vocab), len(aspects), embeddings)
    return sets, factory, vocab, aspects


def _variant(args, task=Task.ACSA) -> ModelVariant:
    return ModelVariant.from_name(args.variant, args.gate, task)


def _task_of_data(args) -> Task:
    data_dir = Path(args.data or os.environ.get(DATA_ENV, "data"))
    try:
        return Task(json.loads((data_dir / "vocab.json").read_text())["task"])
    except FileNotFoundError:
        raise CLIError(f"missing input file: {data_dir / 'vocab.json'}", EXIT_MISSING) from None


def cmd_train(args, manifest: Manifest) -> int:
    variant = _variant(args, _task_of_data(args))
    config = _load_config(args, manifest)
    manifest.record["config"] = config.to_json()
    manifest.record["variant"] = {"name": variant.name, "gate": variant.gate.value}
    out = _out_dir(args)
    sets, factory, vocab, aspects = _load_prepared(args, manifest, config, variant)
    final = {}

    def keep(run, params, history):
        final["params"], final["history"] = params, history
        write_history_csv(manifest.output(out / f"history_run{run}.csv"), history)

    try:
        report = run_protocol(variant, sets, config, factory, on_run=keep)
    except NonFiniteError as exc:
        raise CLIError(str(exc), EXIT_NUMERIC) from exc
    write_history_csv(manifest.output(out / "history.csv"), final["history"])
    save_checkpoint(manifest.output(out / "checkpoint.npz"), final["params"], vocab, aspects,
                    extra={"config": config.to_json()})
    manifest.output(out / "report.json").write_text(report.dumps())
    (manifest.output(out / "config.txt")).write_text(dump_config(config))
    print(f"{variant.name}/{variant.gate.value}: test {report.mean:.4f} +- {report.std:.4f}"
          + (f", hard {report.hard_mean:.4f} +- {report.hard_std:.4f}" if report.hard_mean is not None else ""))
    manifest.write(out)
    return EXIT_OK


def cmd_bench(args, manifest: Manifest) -> int:
    variant = _variant(args, _task_of_data(args))
    config = _load_config(args, manifest)
    manifest.record["config"] = config.to_json()
    out = _out_dir(args)
    start = time.perf_counter()
    sets, factory, _, _ = _load_prepared(args, manifest, config, variant)
    load_seconds = time.perf_counter() - start
    result = bench(variant, sets, config, factory, load_seconds, fanout_workers=args.workers)
    validate_timing(result)
    manifest.output(out / "timing.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps({k: result[k] for k in ("total_seconds", "train_seconds", "best_epoch")}))
    manifest.write(out)
    return EXIT_OK


def validate_timing(result: dict) -> None:
    import jsonschema

    schema = json.loads((SCHEMA_DIR / "timing.schema.json").read_text())
    jsonschema.validate(result, schema)


# --- grad-check ----------------------------------------------------------------

SMALL_DIMS = dict(vocab_size=12, embed_dim=8, n_classes=3, widths=(2, 3), filters=4, n_aspects=5,
                  term_width=3, term_filters=4)
SMALL_LEN = 7


def run_grad_check(variant: ModelVariant, seed: int = 0, corrupt: bool = False):
    """Finite-difference check of every parameter group on a tiny random model.

    Central differences are taken of the extended-precision reference loss.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams.init(variant, ModelDims(**SMALL_DIMS), rng)
    ids = rng.integers(1, SMALL_DIMS["vocab_size"], size=SMALL_LEN)
    if variant.task is Task.ACSA:
        aspect = int(rng.integers(SMALL_DIMS["n_aspects"]))
    else:
        aspect = rng.integers(1, SMALL_DIMS["vocab_size"], size=SMALL_DIMS["term_width"])
    target = int(rng.integers(SMALL_DIMS["n_classes"]))
    _, grads = loss_and_grad(params, ids, aspect, target)
    dense = {k: g.to_dense() if isinstance(g, SparseRows) else g.copy() for k, g in grads.items()}
    if corrupt:
        name = "out_weight"
        dense[name][0, 0] = 2.0 * dense[name][0, 0] + 1.0
    return grad_check(
        lambda _p: reference_loss(params, ids, aspect, target),
        params.arrays,
        dense,
        eps=1e-5,
        tol=GRAD_TOL,
        skip={"word_embeddings": lambda idx: idx[0] == D.PAD_ID},
    )


def cmd_grad_check(args, manifest: Manifest) -> int:
    if args.dims != "small":
        raise CLIError("only --dims small is supported", EXIT_CONFIG)
    variant = _variant(args)
    out = _out_dir(args)
    report = run_grad_check(variant, args.seed, args.corrupt)
    lines = [f"{name:<22} {err:.3e}" for name, err in report.per_param.items()]
    status = "PASS" if report.passed else "FAIL"
    lines.append(f"{status} max_rel_err={report.max_rel_err:.3e} worst={report.worst_param} tol={GRAD_TOL:g}")
    text = "\n".join(lines)
    print(text)
    manifest.output(out / "grad_check.txt").write_text(text + "\n")
    manifest.record["config"] = {"variant": variant.name, "gate": variant.gate.value, "seed": args.seed,
                                 "corrupt": args.corrupt, "dims": SMALL_DIMS | {"widths": [2, 3]}}
    manifest.write(out)
    return EXIT_OK if report.passed else EXIT_NUMERIC


# --- visualize -----------------------------------------------------------------

def cmd_visualize(args, manifest: Manifest) -> int:
    params, meta = load_checkpoint(manifest.input(args.checkpoint))
    if meta["vocab"] is None:
        raise CLIError("checkpoint carries no vocabulary", EXIT_DATA)
    vocab = D.Vocabulary(meta["vocab"])
    words = D.tokenize(args.sentence)
    if not words:
        raise CLIError("sentence has no tokens", EXIT_CONFIG)
    ids = D.pad_ids(vocab.encode(words), params.dims.min_len)
    if params.variant.task is Task.ACSA:
        known = meta["aspects"] or []
        if args.aspect not in known:
            raise CLIError(f"unknown aspect {args.aspect!r}; known aspects: {', '.join(known)}", EXIT_CONFIG)
        aspect = known.index(args.aspect)
    else:
        term = D.tokenize(args.aspect)
        if not term:
            raise CLIError("aspect term has no tokens", EXIT_CONFIG)
        aspect = np.array(D.pad_ids(vocab.encode(term), params.dims.term_width))
    try:
        scores = gate_trace(params, ids, aspect, n_words=len(words))
    except UnsupportedVariantError as exc:
        raise CLIError(str(exc), EXIT_CONFIG) from exc
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["word", "score"])
    for w, s in zip(words, scores):
        writer.writerow([w, repr(float(s))])
    sys.stdout.write(buf.getvalue())
    out = _out_dir(args)
    manifest.output(out / "gate_trace.csv").write_text(buf.getvalue())
    manifest.record["config"] = {"sentence": args.sentence, "aspect": args.aspect}
    manifest.write(out)
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcae", description=__doc__.splitlines()[0].replace("``", ""))
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse SemEval XML into instance files")
    p.add_argument("--task", choices=["acsa", "atsa"], required=True)
    p.add_argument("--schema", choices=["2014", "2015"], default="2014")
    p.add_argument("--input", nargs="+", required=True, metavar="SPLIT[:YEAR]=PATH")
    p.add_argument("--merge-large", action="store_true", help="build Restaurant-Large from 2014-2016 files")
    p.add_argument("--expect", help="JSON of expected per-split polarity counts")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    def model_args(p):
        p.add_argument("--variant", choices=["gcae-acsa", "gcae-atsa", "cnn", "gcn"], required=True)
        p.add_argument("--gate", choices=[g.value for g in GateKind], default="gtru")

    def data_args(p):
        p.add_argument("--config")
        p.add_argument("--data", help=f"prepared data directory (default ${DATA_ENV} or ./data)")
        p.add_argument("--embeddings")
        p.add_argument("--out")

    p = sub.add_parser("train", help="run the repeated-run protocol and save a checkpoint")
    model_args(p)
    data_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="finite-difference check on a tiny model")
    model_args(p)
    p.add_argument("--dims", default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="debug: perturb one analytic gradient")
    p.add_argument("--out")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("visualize", help="per-word relu-gate scores as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sentence", required=True)
    p.add_argument("--aspect", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("bench", help="time training phases and serial vs fan-out evaluation")
    model_args(p)
    data_args(p)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    manifest = Manifest(args.command, argv)
    try:
        return args.func(args, manifest)
    except CLIError as exc:
        print(f"gcae {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
