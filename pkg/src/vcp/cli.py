"""``vcp`` command line: synth, extract, dataset, train, eval, predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

Options may also come from ``--config FILE``, a ``key = value`` file whose
keys are the long option names (dashes or underscores). Command-line flags
override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from vcp import corpus, embeddings, evaluation, pairs, siamese, synth, textprep

logger = logging.getLogger("vcp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path: str | Path) -> dict[str, str]:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text("utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for line_no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise UsageError(f"{path}:{line_no}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file of option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--max-distance", type=int, default=pairs.MAX_DISTANCE)
    p.add_argument("--seq-len", type=int, default=textprep.DEFAULT_SEQ_LEN)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="vcp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.subcommands = sub.choices

    p = sub.add_parser("synth", help="write a synthetic corpus with planted co-citations")
    _shared(p)
    p.add_argument("--n-docs", type=int, default=300)
    p.add_argument("--dim", type=int, default=synth.SynthConfig.dim)
    p.add_argument("--doc-words", type=int, default=synth.SynthConfig.doc_words)

    p = sub.add_parser("extract", help="corpus.jsonl -> pairs.tsv")
    _shared(p)
    p.add_argument("corpus")
    p.add_argument("--out", default=None, help="output path (default OUT_DIR/pairs.tsv)")

    p = sub.add_parser("dataset", help="pairs.tsv + corpus -> train/val/test splits")
    _shared(p)
    p.add_argument("pairs")
    p.add_argument("corpus")
    p.add_argument("--vectors", required=False)
    p.add_argument("--stopwords", default=None)
    p.add_argument("--fractions", default="0.72,0.08,0.20")

    p = sub.add_parser("train", help="dataset dir -> checkpoint + history")
    _shared(p)
    p.add_argument("dataset_dir")
    p.add_argument("--train-embeddings", action="store_true")

    p = sub.add_parser("eval", help="checkpoint + test.tsv -> report")
    _shared(p)
    p.add_argument("checkpoint")
    p.add_argument("test")
    p.add_argument("--sequences", default=None)

    p = sub.add_parser("predict", help="predict the distance between two text files")
    _shared(p)
    p.add_argument("checkpoint")
    p.add_argument("text_a")
    p.add_argument("text_b")
    p.add_argument("--vocab", default=None)
    p.add_argument("--stopwords", default=None)
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser.subcommands[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            action = known.get(key)
            if action is None or key in ("config", "help") or not action.option_strings:
                raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
            if action.nargs == 0:
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[key] = action.type(raw) if action.type else raw
                except ValueError:
                    raise UsageError(f"{args.config}: bad value {raw!r} for {key}") from None
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(*paths: str | Path | None) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"no such file: {p}")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _doc_words(rec: dict) -> list[str]:
    try:
        doc, _ = corpus.parse_document(rec["text"], rec["id"], rec["title"])
        return doc.words
    except corpus.ParseError:
        return rec["text"].split()


def cmd_synth(args) -> int:
    out = _out_dir(args)
    cfg = synth.SynthConfig(doc_words=args.doc_words, dim=args.dim)
    data = synth.synthesize(args.n_docs, args.seed, cfg)
    corpus.write_corpus(data.records, out / "corpus.jsonl")
    synth.write_vectors(synth.synth_vectors(data, args.dim, args.seed), out / "vectors.txt")
    synth.write_planted(data.planted, out / "planted.tsv")
    print(f"wrote {len(data.records)} documents, {len(data.planted)} planted pairs to {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    _require(args.corpus)
    out_path = Path(args.out) if args.out else _out_dir(args) / "pairs.tsv"
    records = list(corpus.iter_corpus(args.corpus))
    result = pairs.extract(records, limit=args.limit)
    pairs.write_pairs(result, out_path)
    print(f"{len(records)} documents -> {len(result)} pairs in {out_path}")
    return EXIT_OK


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad --fractions {text!r}") from None
    if len(parts) != 3:
        raise UsageError("--fractions takes three comma-separated numbers")
    return parts


def cmd_dataset(args) -> int:
    if not args.vectors:
        raise UsageError("dataset needs --vectors")
    _require(args.pairs, args.corpus, args.vectors, args.stopwords)
    fractions = _fractions(args.fractions)
    out = _out_dir(args)

    records = sorted(corpus.iter_corpus(args.corpus), key=lambda r: r["id"])
    title_to_id: dict[str, str] = {}
    for rec in records:
        title_to_id.setdefault(corpus.normalize_title(rec["title"]), rec["id"])

    kept = pairs.filter_pairs(pairs.read_pairs(args.pairs), args.max_distance)
    rows = pairs.to_rows(kept, title_to_id)
    rows = pairs.limit_items(rows, args.limit, args.seed)
    try:
        train_rows, val_rows, test_rows = pairs.split_dataset(rows, args.seed, fractions)
    except ValueError as exc:
        raise DataError(str(exc)) from None

    stop = textprep.load_stopwords(args.stopwords)
    tokens = {rec["id"]: textprep.normalize(" ".join(_doc_words(rec)), stop) for rec in records}
    vocab = textprep.build_vocab(tokens[rec["id"]] for rec in records)
    vectors = embeddings.load_vectors(args.vectors, keep=vocab.token_to_id)
    dim = len(next(iter(vectors.values()))) if vectors else _vector_dim(args.vectors)
    matrix = embeddings.build_matrix(vocab, vectors, dim)

    used = sorted({r.id_a for r in rows} | {r.id_b for r in rows})
    with open(out / "sequences.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for doc_id in used:
            ids = textprep.encode(tokens[doc_id], vocab, args.seq_len)
            fh.write(doc_id + "\t" + " ".join(map(str, ids)) + "\n")
    for name, part in (("train", train_rows), ("val", val_rows), ("test", test_rows)):
        pairs.write_rows(part, out / f"{name}.tsv")
    vocab.write(out / "vocab.tsv")
    np.save(out / "embeddings.npy", matrix)
    manifest = {
        "seq_len": args.seq_len,
        "dim": dim,
        "vocab_size": len(vocab),
        "max_distance": args.max_distance,
        "seed": args.seed,
        "fractions": list(fractions),
        "sizes": {"train": len(train_rows), "val": len(val_rows), "test": len(test_rows)},
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(
        f"{len(kept)} pairs pass the filter, {len(rows)} usable: "
        f"{len(train_rows)} train / {len(val_rows)} val / {len(test_rows)} test"
    )
    return EXIT_OK


def _vector_dim(path) -> int:
    with open(path, encoding="utf-8") as fh:
        return len(fh.readline().rstrip("\n").rstrip(" ").split(" ")) - 1


def read_sequences(path: str | Path) -> dict[str, np.ndarray]:
    seqs = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            doc_id, tab, ids = line.rstrip("\n").partition("\t")
            if not tab:
                raise DataError(f"{path}:{line_no}: expected 'id<TAB>ids'")
            try:
                seqs[doc_id] = np.array([int(x) for x in ids.split()], dtype=np.int64)
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-integer token id") from None
    return seqs


def load_pairset(rows: list[pairs.DatasetRow], seqs: dict[str, np.ndarray]) -> siamese.PairSet:
    try:
        a = np.stack([seqs[r.id_a] for r in rows])
        b = np.stack([seqs[r.id_b] for r in rows])
    except KeyError as exc:
        raise DataError(f"document {exc.args[0]!r} has no encoded sequence") from None
    return siamese.PairSet(a, b, [r.distance for r in rows])


def cmd_train(args) -> int:
    ds = Path(args.dataset_dir)
    _require(ds / "dataset.json", ds / "train.tsv", ds / "val.tsv", ds / "sequences.tsv")
    manifest = json.loads((ds / "dataset.json").read_text())
    seqs = read_sequences(ds / "sequences.tsv")
    train_set = load_pairset(pairs.read_rows(ds / "train.tsv"), seqs)
    val_set = load_pairset(pairs.read_rows(ds / "val.tsv"), seqs)
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation splits must be non-empty")
    matrix = np.load(ds / "embeddings.npy")
    vocab = textprep.Vocabulary.read(ds / "vocab.tsv")

    cfg = siamese.TrainConfig(
        max_epochs=args.epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
    )
    baseline = evaluation.mean_baseline(train_set.distance)
    scale = max(float(np.std(train_set.distance)), 1.0)
    model = siamese.SiameseModel.create(
        matrix,
        seq_len=int(manifest["seq_len"]),
        hidden=args.hidden,
        seed=args.seed,
        target_shift=baseline,
        target_scale=scale,
        trainable_embeddings=args.train_embeddings,
    )
    model, history = siamese.train(model, train_set, val_set, cfg)

    out = _out_dir(args)
    siamese.save_checkpoint(
        out / "model.ckpt", model, cfg, vocab.digest(), extra={"baseline_mean": baseline}
    )
    if (ds / "vocab.tsv").resolve() != (out / "vocab.tsv").resolve():
        shutil.copyfile(ds / "vocab.tsv", out / "vocab.tsv")
    hist = {
        "best_epoch": history.best_epoch,
        "stopped_epoch": history.stopped_epoch,
        "history": history.rows(),
    }
    (out / "history.json").write_text(json.dumps(hist, indent=2, sort_keys=True) + "\n")
    print(
        f"stopped at epoch {history.stopped_epoch}, best epoch {history.best_epoch} "
        f"(val MAE {history.val_mae[history.best_epoch - 1]:.4f})"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args.checkpoint, args.test)
    seq_path = Path(args.sequences) if args.sequences else Path(args.test).parent / "sequences.tsv"
    _require(seq_path)
    model, meta = siamese.load_checkpoint(args.checkpoint)
    test_set = load_pairset(pairs.read_rows(args.test), read_sequences(seq_path))
    if len(test_set) == 0:
        raise DataError("test split is empty")
    baseline = meta.get("extra", {}).get("baseline_mean")
    if baseline is None:
        raise DataError("checkpoint carries no training-set mean for the baseline")
    report = evaluation.evaluate(model, test_set, float(baseline))

    history = None
    hist_path = Path(args.checkpoint).parent / "history.json"
    if hist_path.exists():
        h = json.loads(hist_path.read_text())
        history = evaluation.history_from_rows(h["history"], h["best_epoch"], h["stopped_epoch"])
    out = _out_dir(args)
    text = evaluation.emit_report(report, history, out / "report.json", out / "report.txt")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = Path(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else ckpt.parent / "vocab.tsv"
    _require(ckpt, args.text_a, args.text_b, vocab_path, args.stopwords)
    vocab = textprep.Vocabulary.read(vocab_path)
    model, _ = siamese.load_checkpoint(ckpt, expected_vocab_hash=vocab.digest())
    stop = textprep.load_stopwords(args.stopwords)
    seqs = []
    for path in (args.text_a, args.text_b):
        text = Path(path).read_text("utf-8")
        words = _doc_words({"id": str(path), "title": str(path), "text": text})
        seqs.append(textprep.encode(textprep.normalize(" ".join(words), stop), vocab, model.seq_len))
    print(siamese.predict(model, seqs[0], seqs[1]))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}

_DATA_ERRORS = (
    DataError,
    corpus.CorpusFormatError,
    pairs.PairsFormatError,
    embeddings.VectorFormatError,
    siamese.CheckpointError,
    siamese.TrainingError,
    ValueError,
)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"vcp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vcp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"vcp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"vcp: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
