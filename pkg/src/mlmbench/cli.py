"""Command-line entry point orchestrating every pipeline stage.

One executable with one subcommand per stage: corpus preparation, vocabulary
training, masked-batch generation, dependency-label encoding/decoding, task
evaluation, relative-gap reporting, and pretraining-manifest emission.

Every text output starts with provenance comment lines (tool version,
subcommand, seed, and a digest of the resolved configuration) so a result
file can always be traced back to the invocation that produced it.  Binary
and JSON outputs carry the same record embedded in their headers or in a
``<output>.provenance`` sidecar.  Outputs are byte-reproducible: the same
inputs, flags, and seed give identical files.

Options may come from a TOML config file (``--config run.toml``) holding one
table per subcommand; explicit command-line flags always win over the file.
Exit status: 0 success, 1 stage failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib  # type: ignore[no-redef]

from . import __version__
from .analogy import (
    AnalogyError,
    evaluate,
    load_templates,
    read_analogies,
    write_analogy_csv,
)
from .analysis import (
    AnalysisError,
    bundled_reference_results,
    compute_gaps,
    plot_data_csv,
    read_model_metadata,
    task_series,
)
from .corpus import (
    IngestionError,
    ManifestEntry,
    SentenceLine,
    StreamDeduplicator,
    collect_stats,
    iter_documents,
    normalize,
    read_manifest,
    read_sentence_lines,
    sample_for_vocab,
    write_stats_csv,
)
from .depcodec import (
    DepCodecError,
    ParsedSentence,
    decode_labels,
    encode_labels,
    projectivize,
    read_conllu,
    read_labels,
    write_conllu,
    write_labels,
)
from .masking import MaskingConfig, PipelineCounters, emit_manifest, masked_stream, write_batches, write_batches_text
from .metrics import (
    MetricsError,
    TaskResult,
    annotations_from_tagged,
    attachment_scores,
    ner_f1,
    pos_f1,
    read_results_csv,
    write_results_csv,
)
from .scorer import CountScorer, ProtocolError, ScorerClient, ScorerDeadError
from .subword import VocabError, encode, load_vocab, save_vocab, train_vocab

STAGE_ERRORS = (
    IngestionError,
    VocabError,
    DepCodecError,
    MetricsError,
    AnalysisError,
    AnalogyError,
    ProtocolError,
    ScorerDeadError,
    OSError,
    ValueError,
)

SUBCOMMANDS = (
    "corpus-prep",
    "vocab-train",
    "mlm-batches",
    "dep-encode",
    "dep-decode",
    "eval-ner",
    "eval-pos",
    "eval-dp",
    "eval-wa",
    "gaps",
    "manifest",
)


# ---------------------------------------------------------------------------
# provenance

def _config_digest(params: Mapping[str, object]) -> str:
    payload = json.dumps(params, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]


def provenance_record(subcommand: str, seed: int, params: Mapping[str, object]) -> dict:
    return {
        "tool": f"mlmbench {__version__}",
        "subcommand": subcommand,
        "seed": seed,
        "config_digest": _config_digest(params),
    }


def provenance_lines(record: Mapping[str, object]) -> str:
    return (
        f"# {record['tool']}\n"
        f"# subcommand: {record['subcommand']}\n"
        f"# seed: {record['seed']}\n"
        f"# config-digest: {record['config_digest']}\n"
    )


def _write_text(path: Path, header: str, body: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(header + body, encoding="utf-8")


def _write_sidecar(path: Path, header: str) -> None:
    Path(str(path) + ".provenance").write_text(header, encoding="utf-8")


# ---------------------------------------------------------------------------
# config resolution

def _load_config(path: str | None, parser: argparse.ArgumentParser) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as handle:
            loaded = tomllib.load(handle)
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    except tomllib.TOMLDecodeError as exc:
        parser.error(f"invalid config file {path}: {exc}")
    if not isinstance(loaded, dict):  # pragma: no cover - tomllib guarantees dict
        parser.error(f"config file {path} must contain tables")
    return loaded


def _resolve(
    args: argparse.Namespace,
    config: Mapping[str, object],
    subcommand: str,
    defaults: Mapping[str, object],
) -> None:
    """Fill unset options from the config file table, then code defaults."""
    table = config.get(subcommand, {})
    if not isinstance(table, dict):
        raise ValueError(f"config table [{subcommand}] must be a table")
    merged = dict(defaults)
    for key, value in table.items():
        merged[key.replace("-", "_")] = value
    for key, value in merged.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _require(args: argparse.Namespace, parser: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            parser.error(
                f"--{name.replace('_', '-')} is required (flag or config file)"
            )


def _params(args: argparse.Namespace) -> dict:
    # Destination paths do not influence output content, so they stay out of
    # the digest: re-running the same configuration into a different location
    # must produce byte-identical files.
    skip = {"func", "subcommand", "config", "output", "output_dir"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# subcommand implementations

def _cmd_corpus_prep(args: argparse.Namespace, record: dict) -> int:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.input.endswith(".json"):
        entries = read_manifest(args.input)
    else:
        if args.language is None:
            raise IngestionError(
                "a raw-text input needs --language (or pass a manifest JSON)"
            )
        entries = [ManifestEntry(path=args.input, language=args.language)]

    def normalized() -> Iterator[SentenceLine]:
        for doc in iter_documents(entries):
            yield from normalize(doc)

    dedup = StreamDeduplicator()
    header = provenance_lines(record)
    handles: dict[str, object] = {}
    counted: list[SentenceLine] = []
    try:
        for line in dedup.process(normalized()):
            handle = handles.get(line.language)
            if handle is None:
                path = out_dir / f"{line.language}.txt"
                handle = path.open("w", encoding="utf-8")
                handles[line.language] = handle
                _write_sidecar(path, header)
            handle.write(line.text + "\n")
            counted.append(line)
    finally:
        for handle in handles.values():
            handle.close()

    stats = collect_stats(counted, dedup)
    stats_path = out_dir / "stats.csv"
    with stats_path.open("w", encoding="utf-8") as out:
        out.write(header)
        write_stats_csv(stats.values(), out)
    for stat in stats.values():
        print(
            f"{stat.language}: {stat.sentence_count} sentences, "
            f"{stat.token_count} tokens, "
            f"duplicate ratio {stat.duplicate_ratio:.4f}"
        )
    return 0


def _parse_corpus_args(specs: Iterable[str]) -> list[tuple[str, str]]:
    """Each input is ``language=path`` or a bare path (language ``und``)."""
    out = []
    for spec in specs:
        lang, sep, path = spec.partition("=")
        if sep and lang and "/" not in lang and "\\" not in lang:
            out.append((lang, path))
        else:
            out.append(("und", spec))
    return out


def _cmd_vocab_train(args: argparse.Namespace, record: dict) -> int:
    stores: dict[str, list[str]] = {}
    for language, path in _parse_corpus_args(args.inputs):
        store = stores.setdefault(language, [])
        store.extend(line.text for line in read_sentence_lines(path, language))
    if args.sample is not None:
        sample = sample_for_vocab(stores, args.sample, seed=args.seed)
    else:
        sample = [
            SentenceLine.make(language, text)
            for language in sorted(stores)
            for text in stores[language]
        ]
    vocab = train_vocab(sample, target_size=args.target_size, seed=args.seed)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_vocab(vocab, out)
    _write_sidecar(out, provenance_lines(record))
    print(f"trained {vocab.size} pieces -> {out}")
    return 0


def _cmd_mlm_batches(args: argparse.Namespace, record: dict) -> int:
    vocab = load_vocab(args.vocab)
    cfg = MaskingConfig(
        mask_prob=args.mask_prob, seq_len=args.seq_len, seed=args.seed
    )
    lines = read_sentence_lines(args.input, args.language)
    encodings = (encode(line, vocab) for line in lines)
    counters = PipelineCounters()
    stream = masked_stream(encodings, cfg, vocab, counters)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.text:
        with out.open("w", encoding="utf-8") as handle:
            count = write_batches_text(stream, handle)
        _write_sidecar(out, provenance_lines(record))
    else:
        with out.open("wb") as handle:
            count = write_batches(stream, handle, provenance={"provenance": record})
    print(
        f"wrote {count} windows ({counters.truncated_words} truncated words, "
        f"{counters.unmaskable_windows} unmaskable windows) -> {out}"
    )
    return 0


def _cmd_dep_encode(args: argparse.Namespace, record: dict) -> int:
    items = []
    with open(args.input, encoding="utf-8") as stream:
        for i, sentence in enumerate(read_conllu(stream)):
            tree = sentence.tree
            if not tree.is_projective:
                if args.projectivize:
                    tree = projectivize(tree)
                else:
                    raise DepCodecError(
                        f"sentence {i + 1} is non-projective; "
                        "re-run with --projectivize to lift crossing arcs"
                    )
            items.append((sentence.forms, encode_labels(tree)))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as handle:
        handle.write(provenance_lines(record))
        count = write_labels(items, handle)
    print(f"encoded {count} sentences -> {out}")
    return 0


def _cmd_dep_decode(args: argparse.Namespace, record: dict) -> int:
    with open(args.input, encoding="utf-8") as stream:
        sentences = [
            ParsedSentence(
                forms=forms,
                tree=decode_labels(labels, len(forms)),
                comments=(),
            )
            for forms, labels in read_labels(stream)
        ]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as handle:
        handle.write(provenance_lines(record))
        count = write_conllu(sentences, handle)
    print(f"decoded {count} sentences -> {out}")
    return 0


def _read_tag_file(path: str) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    with open(path, encoding="utf-8") as stream:
        return list(read_labels(stream))


def _write_results(
    path: Path, record: dict, results: Iterable[TaskResult]
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write(provenance_lines(record))
        write_results_csv(results, handle)


def _cmd_eval_ner(args: argparse.Namespace, record: dict) -> int:
    gold = _read_tag_file(args.gold)
    pred = _read_tag_file(args.pred)
    _, macro = ner_f1(
        annotations_from_tagged([tags for _, tags in gold]),
        annotations_from_tagged([tags for _, tags in pred]),
    )
    result = TaskResult(args.model, args.language, "NER", "macro_f1", macro)
    _write_results(Path(args.output), record, [result])
    print(f"NER macro_f1 {macro:.6f} -> {args.output}")
    return 0


def _cmd_eval_pos(args: argparse.Namespace, record: dict) -> int:
    gold = _read_tag_file(args.gold)
    pred = _read_tag_file(args.pred)
    value = pos_f1([tags for _, tags in gold], [tags for _, tags in pred])
    result = TaskResult(args.model, args.language, "POS", "micro_f1", value)
    _write_results(Path(args.output), record, [result])
    print(f"POS micro_f1 {value:.6f} -> {args.output}")
    return 0


def _cmd_eval_dp(args: argparse.Namespace, record: dict) -> int:
    with open(args.gold, encoding="utf-8") as stream:
        gold = [s.tree for s in read_conllu(stream)]
    with open(args.pred, encoding="utf-8") as stream:
        pred = [s.tree for s in read_conllu(stream)]
    uas, las = attachment_scores(gold, pred)
    results = [
        TaskResult(args.model, args.language, "DP", "uas", uas),
        TaskResult(args.model, args.language, "DP", "las", las),
    ]
    _write_results(Path(args.output), record, results)
    print(f"DP uas {uas:.4f} las {las:.4f} -> {args.output}")
    return 0


def _cmd_eval_wa(args: argparse.Namespace, record: dict) -> int:
    vocab = load_vocab(args.vocab)
    with open(args.dataset, encoding="utf-8") as stream:
        entries = list(read_analogies(stream))
    templates = load_templates(args.templates) if args.templates else None

    client: ScorerClient | None = None
    if args.scorer_cmd is not None:
        client = ScorerClient(shlex.split(args.scorer_cmd))
        scorer = client
    elif args.train is not None:
        scorer = CountScorer(
            vocab, read_sentence_lines(args.train, args.language)
        )
    else:
        raise AnalogyError("eval-wa needs either --scorer-cmd or --train")

    try:
        result = evaluate(
            entries,
            scorer,
            vocab,
            args.language,
            templates=templates,
            k=args.k,
            beam_width=args.beam_width,
            mask_slot=args.mask_slot,
        )
    finally:
        if client is not None:
            client.close()

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as handle:
        handle.write(provenance_lines(record))
        write_analogy_csv(result, handle)
    print(
        f"WA macro p@5 {result.macro:.6f} "
        f"({result.completed}/{result.total} probes) -> {out}"
    )
    if result.partial:
        print(
            "eval-wa: scorer died before finishing; output is partial",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_gaps(args: argparse.Namespace, record: dict) -> int:
    if args.bundled:
        results, metadata = bundled_reference_results()
    else:
        if args.results is None or args.metadata is None:
            raise AnalysisError(
                "gaps needs --bundled, or both --results and --metadata"
            )
        with open(args.results, encoding="utf-8") as stream:
            results = tuple(read_results_csv(stream))
        with open(args.metadata, encoding="utf-8") as stream:
            metadata = read_model_metadata(stream)
    points = compute_gaps(results, metadata)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = provenance_lines(record)
    written = []
    csv_path = out_dir / f"{args.stem}.csv"
    _write_text(csv_path, header, plot_data_csv(points))
    written.append(csv_path)
    for axis, text in task_series(points).items():
        series_path = out_dir / f"{args.stem}_{axis.lower()}.dat"
        _write_text(series_path, header, text)
        written.append(series_path)
    if args.figure:
        from .figures import FigureError, render_gap_figure

        try:
            figure_path = out_dir / f"{args.stem}.{args.figure_format}"
            render_gap_figure(points, figure_path)
            written.append(figure_path)
        except FigureError as exc:
            raise AnalysisError(str(exc)) from exc
    print("\n".join(str(p) for p in written))
    return 0


def _cmd_manifest(args: argparse.Namespace, record: dict) -> int:
    manifest = emit_manifest(
        args.model, MaskingConfig(seed=args.seed) if args.seed else None
    )
    payload = json.loads(manifest.to_json())
    payload["provenance"] = record
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output is None:
        sys.stdout.write(text)
    else:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(f"wrote manifest -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser

DEFAULTS: dict[str, dict[str, object]] = {
    "corpus-prep": {"output_dir": "prepared", "language": None},
    "vocab-train": {"sample": None},
    "mlm-batches": {
        "language": "und",
        "seq_len": 512,
        "mask_prob": 0.15,
        "text": False,
    },
    "dep-encode": {"projectivize": False},
    "dep-decode": {},
    "eval-ner": {},
    "eval-pos": {},
    "eval-dp": {},
    "eval-wa": {
        "templates": None,
        "mask_slot": "w2",
        "k": 5,
        "beam_width": 10,
        "scorer_cmd": None,
        "train": None,
    },
    "gaps": {
        "bundled": False,
        "results": None,
        "metadata": None,
        "output_dir": "gaps-out",
        "stem": "gaps",
        "figure": True,
        "figure_format": "png",
    },
    "manifest": {"output": None},
}

REQUIRED: dict[str, tuple[str, ...]] = {
    "vocab-train": ("target_size", "output"),
    "mlm-batches": ("vocab", "output"),
    "eval-ner": ("model", "language", "output"),
    "eval-pos": ("model", "language", "output"),
    "eval-dp": ("model", "language", "output"),
    "eval-wa": ("language", "output", "vocab"),
}

HANDLERS: dict[str, Callable[[argparse.Namespace, dict], int]] = {
    "corpus-prep": _cmd_corpus_prep,
    "vocab-train": _cmd_vocab_train,
    "mlm-batches": _cmd_mlm_batches,
    "dep-encode": _cmd_dep_encode,
    "dep-decode": _cmd_dep_decode,
    "eval-ner": _cmd_eval_ner,
    "eval-pos": _cmd_eval_pos,
    "eval-dp": _cmd_eval_dp,
    "eval-wa": _cmd_eval_wa,
    "gaps": _cmd_gaps,
    "manifest": _cmd_manifest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmbench",
        description="Corpus, masking, parsing-as-labeling, and evaluation pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"mlmbench {__version__}")
    parser.add_argument("--config", help="TOML file with one table per subcommand")
    parser.add_argument("--seed", type=int, help="base RNG seed (default 0)")
    parser.add_argument(
        "--threads",
        type=int,
        help="cap internal parallelism (results never depend on it)",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("corpus-prep", help="normalize and deduplicate raw documents")
    p.add_argument("input", help="manifest JSON or one raw-text/.gz document")
    p.add_argument("--language", help="language code when input is one document")
    p.add_argument("-o", "--output-dir", help="directory for <language>.txt + stats.csv")

    p = sub.add_parser("vocab-train", help="induce a subword vocabulary")
    p.add_argument("inputs", nargs="+", help="sentence files, 'lang=path' or path")
    p.add_argument("--target-size", type=int, help="total piece budget")
    p.add_argument("--sample", type=int, help="draw this many lines, equal parts per language")
    p.add_argument("-o", "--output", help="vocabulary file to write")

    p = sub.add_parser("mlm-batches", help="pack and mask pretraining windows")
    p.add_argument("input", help="one-sentence-per-line corpus file")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--language", help="language code for provenance (default und)")
    p.add_argument("--seq-len", type=int, help="window length (default 512)")
    p.add_argument("--mask-prob", type=float, help="target mask fraction (default 0.15)")
    p.add_argument("--text", action="store_const", const=True, help="JSON-lines debug output instead of binary")
    p.add_argument("-o", "--output", help="batch file to write")

    p = sub.add_parser("dep-encode", help="encode dependency trees as word labels")
    p.add_argument("input", help="CoNLL-U file")
    p.add_argument("output", help="labels file to write")
    p.add_argument("--projectivize", action="store_const", const=True, help="lift crossing arcs instead of failing")

    p = sub.add_parser("dep-decode", help="decode word labels back into trees")
    p.add_argument("input", help="labels file")
    p.add_argument("output", help="CoNLL-U file to write")

    for name, descr in (
        ("eval-ner", "span-level NER macro-F1"),
        ("eval-pos", "POS tagging micro-F1"),
    ):
        p = sub.add_parser(name, help=descr)
        p.add_argument("gold", help="gold FORM<TAB>TAG file")
        p.add_argument("pred", help="predicted FORM<TAB>TAG file")
        p.add_argument("--model", help="model name for the results row")
        p.add_argument("--language", help="language code for the results row")
        p.add_argument("-o", "--output", help="results CSV to write")

    p = sub.add_parser("eval-dp", help="attachment scores (UAS/LAS)")
    p.add_argument("gold", help="gold CoNLL-U file")
    p.add_argument("pred", help="predicted CoNLL-U file")
    p.add_argument("--model", help="model name for the results rows")
    p.add_argument("--language", help="language code for the results rows")
    p.add_argument("-o", "--output", help="results CSV to write")

    p = sub.add_parser("eval-wa", help="word analogy P@5 via a scorer")
    p.add_argument("dataset", help="analogy file (': category' headers)")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--language", help="template language code")
    p.add_argument("--templates", help="JSON file mapping language to template")
    p.add_argument("--mask-slot", choices=("w2", "w4"), help="which word to predict")
    p.add_argument("--k", type=int, help="top-k cutoff (default 5)")
    p.add_argument("--beam-width", type=int, help="beam width for multi-piece words")
    p.add_argument("--scorer-cmd", help="external scorer command line")
    p.add_argument("--train", help="corpus for the built-in count scorer")
    p.add_argument("-o", "--output", help="per-category CSV to write")

    p = sub.add_parser("gaps", help="relative-gap report (CSV, series, figure)")
    p.add_argument("--bundled", action="store_const", const=True, help="use the bundled reference scores")
    p.add_argument("--results", help="results CSV (model,language,task,metric,value)")
    p.add_argument("--metadata", help="metadata CSV (model,language,vocab_k,train_tokens_b)")
    p.add_argument("-o", "--output-dir", help="directory for report files")
    p.add_argument("--stem", help="basename for report files (default gaps)")
    p.add_argument("--figure", action=argparse.BooleanOptionalAction, help="render the scatter figure (default on)")
    p.add_argument("--figure-format", choices=("png", "svg", "pdf"), help="figure file format")

    p = sub.add_parser("manifest", help="emit pretraining hyperparameters as JSON")
    p.add_argument("--model", choices=("litlat", "estroberta"), help="which recipe")
    p.add_argument("-o", "--output", help="file to write (default stdout)")

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return 2

    config = _load_config(args.config, parser)
    if args.seed is None:
        seed = config.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            parser.error("seed must be an integer")
        args.seed = seed
    _resolve(args, config, args.subcommand, DEFAULTS.get(args.subcommand, {}))
    _require(args, parser, *REQUIRED.get(args.subcommand, ()))
    if args.subcommand == "manifest" and args.model is None:
        parser.error("--model is required (flag or config file)")

    record = provenance_record(args.subcommand, args.seed, _params(args))
    handler = HANDLERS[args.subcommand]
    try:
        return handler(args, record)
    except STAGE_ERRORS as exc:
        print(f"mlmbench {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover - exercised via subprocess
    sys.exit(main())
