"""Command-line entry point.

Exit codes: 0 success, 1 data/runtime error, 2 usage/config error,
3 oracle disagreement.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .embedding import SimilarityMetric, TextEncoder, init_table, load_table, save_table
from .errors import ConfigError, DiseaseVecError, MalformedLine
from .evaluation import (
    ComparisonCell,
    ComparisonTable,
    EvalConfig,
    evaluate,
    merge_reports,
    oracle_evaluate,
    similarity_probe,
    write_report_jsonl,
)
from .manifest import RunManifest, manifest_path_for
from .mnrl import TrainConfig, load_train_config, train
from .pipeline import (
    ProviderConfig,
    clean,
    generate_pairs,
    load_provider_config,
    make_triplets,
    shuffle_split,
)
from .records import load_diseases, load_pairs, load_triplets, save_pairs, save_triplets
from .synthetic import make_cluster_corpus
from .vocab import build_vocab, load_vocab, save_vocab

EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_ORACLE = 3

METRIC = click.Choice([m.value for m in SimilarityMetric])


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(str(exc), EXIT_USAGE)
        except DiseaseVecError as exc:
            _fail(f"{type(exc).__name__}: {exc}", EXIT_DATA)
        except OSError as exc:
            _fail(f"{exc.strerror or exc}: {exc.filename}", EXIT_DATA)

    return wrapper


def _finish(manifest: RunManifest, out: str | Path | None) -> None:
    manifest.finish()
    if out is not None:
        manifest.write(manifest_path_for(out))


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Train and evaluate mean-pooled disease embeddings."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("vocab")
@click.argument("corpus")
@click.option("--min-freq", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", required=True, help="Vocabulary file to write.")
@handle_errors
def cmd_vocab(corpus: str, min_freq: int, out: str) -> None:
    """Build a vocabulary from CORPUS (one document per line, or a pair file)."""
    manifest = RunManifest("vocab", {"min_freq": min_freq})
    manifest.add_input(corpus)
    docs = _corpus_documents(corpus)
    vocab = build_vocab(docs, min_freq)
    save_vocab(vocab, out)
    click.echo(f"vocabulary: {len(vocab)} tokens -> {out}")
    _finish(manifest, out)


def _corpus_documents(path: str) -> list[str]:
    if path.endswith(".jsonl"):
        return [text for p in load_pairs(path) for text in (p.anchor, p.positive)]
    return Path(path).read_text(encoding="utf-8").splitlines()


@main.command("train")
@click.argument("pairs")
@click.argument("vocab_path", metavar="VOCAB")
@click.option("--config", "config_path", help="key = value training config file.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--init-table", "init_path", help="Start from this table instead of a seeded random one.")
@click.option("--out", required=True, help="Trained table file to write.")
@click.option("--loss-log", help="Per-epoch loss log [default: OUT.loss.log].")
@handle_errors
def cmd_train(pairs, vocab_path, config_path, seed, init_path, out, loss_log):
    """Train an embedding table on anchor/positive PAIRS with MNRL."""
    config = load_train_config(config_path) if config_path else TrainConfig()
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    manifest = RunManifest("train", _config_dict(config), seed=config.seed)
    for path in (pairs, vocab_path, config_path, init_path):
        if path:
            manifest.add_input(path)
    records = load_pairs(pairs)
    vocab = load_vocab(vocab_path)
    table = load_table(init_path) if init_path else init_table(len(vocab), config.dim, config.seed)
    trained, stats = train(records, vocab, table, config)
    save_table(trained, out)
    lines = stats.log_lines()
    Path(loss_log or f"{out}.loss.log").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    for line in lines:
        click.echo(line)
    click.echo(f"steps {stats.steps} -> {out}")
    _finish(manifest, out)


def _config_dict(config) -> dict:
    return {k: (str(v) if isinstance(v, SimilarityMetric) else v) for k, v in dataclasses.asdict(config).items()}


@main.command("make-triplets")
@click.argument("pairs")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-k", "--negatives", "k", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", required=True)
@handle_errors
def cmd_make_triplets(pairs: str, seed: int, k: int, out: str) -> None:
    """Build (anchor, positive, negative) triplets with cross-label negatives."""
    manifest = RunManifest("make-triplets", {"negatives_per_pair": k}, seed=seed)
    manifest.add_input(pairs)
    triplets = make_triplets(load_pairs(pairs), seed, k)
    save_triplets(triplets, out)
    click.echo(f"triplets {len(triplets)} -> {out}")
    _finish(manifest, out)


@main.command("eval")
@click.argument("table_path", metavar="TABLE")
@click.argument("vocab_path", metavar="VOCAB")
@click.argument("triplets_path", metavar="TRIPLETS")
@click.option("--margin", type=float, default=0.0, show_default=True)
@click.option("--metric", type=METRIC, default="cosine", show_default=True)
@click.option("--oracle", is_flag=True, help="Cross-check with the independent evaluator.")
@click.option("--model", help="Model name for the report [default: table file stem].")
@click.option("--dataset", help="Dataset name for the report [default: triplet file stem].")
@click.option("--out", help="JSON-lines report to write.")
@handle_errors
def cmd_eval(table_path, vocab_path, triplets_path, margin, metric, oracle, model, dataset, out):
    """Triplet accuracy of TABLE on TRIPLETS."""
    config = EvalConfig(margin=margin, metric=metric, per_example=oracle)
    manifest = RunManifest("eval", {"margin": margin, "metric": metric, "oracle": oracle})
    for path in (table_path, vocab_path, triplets_path):
        manifest.add_input(path)
    encoder = TextEncoder(load_table(table_path), load_vocab(vocab_path))
    triplets = load_triplets(triplets_path)
    report = evaluate(encoder, triplets, config)
    cell = ComparisonCell(model or Path(table_path).stem, dataset or Path(triplets_path).stem, report)
    click.echo(report.summary())
    click.echo(ComparisonTable.from_cells([cell]).to_text(), nl=False)
    if out:
        write_report_jsonl([cell], out)
    _finish(manifest, out)
    if oracle:
        check = oracle_evaluate(encoder, triplets, config)
        mismatched = [
            i for i, (a, b) in enumerate(zip(report.per_example, check.per_example)) if a.passed != b.passed
        ]
        if check.correct != report.correct or mismatched:
            _fail(
                f"oracle disagreement: evaluate={report.correct} oracle={check.correct}, "
                f"first differing triplet index {mismatched[:1]}",
                EXIT_ORACLE,
            )
        click.echo(f"oracle agrees: correct {check.correct}/{check.total}")


def _load_candidates(path: str) -> list[tuple[str, str]]:
    candidates = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            name, sep, text = line.partition("\t")
            if not sep or not name or not text:
                raise MalformedLine(f"{path}:{lineno}: expected 'name\\ttext'")
            candidates.append((name, text))
    if not candidates:
        raise MalformedLine(f"{path}: no candidates")
    return candidates


@main.command("similarity")
@click.argument("table_path", metavar="TABLE")
@click.argument("vocab_path", metavar="VOCAB")
@click.argument("query")
@click.argument("candidates_path", metavar="CANDIDATES")
@click.option("--metric", type=METRIC, default="cosine", show_default=True)
@click.option("--out", help="Also write the ranked listing here.")
@handle_errors
def cmd_similarity(table_path, vocab_path, query, candidates_path, metric, out):
    """Rank CANDIDATES (name<TAB>text lines) by similarity to QUERY."""
    manifest = RunManifest("similarity", {"metric": metric, "query": query})
    for path in (table_path, vocab_path, candidates_path):
        manifest.add_input(path)
    encoder = TextEncoder(load_table(table_path), load_vocab(vocab_path))
    ranked = similarity_probe(encoder, query, _load_candidates(candidates_path), metric)
    listing = "".join(f"{name} {score:.4f}\n" for name, score in ranked)
    click.echo(listing, nl=False)
    if out:
        Path(out).write_text(listing, encoding="utf-8")
    _finish(manifest, out)


@main.command("report")
@click.argument("reports", nargs=-1, required=True)
@click.option("--out", help="Write the markdown table here as well.")
@handle_errors
def cmd_report(reports: tuple[str, ...], out: str | None) -> None:
    """Merge JSON-lines REPORTS into one model x dataset markdown table."""
    manifest = RunManifest("report")
    for path in reports:
        manifest.add_input(path)
    markdown = merge_reports(reports).to_markdown()
    click.echo(markdown, nl=False)
    if out:
        Path(out).write_text(markdown, encoding="utf-8")
    _finish(manifest, out)


@main.command("generate")
@click.argument("diseases_path", metavar="DISEASES")
@click.option("--config", "config_path", help="provider.* config; default is the offline stub.")
@click.option("--per-disease", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--template", default="description", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@handle_errors
def cmd_generate(diseases_path, config_path, per_disease, template, seed, out):
    """Generate anchor/positive pairs for each disease in a code<TAB>name file."""
    pconf = load_provider_config(config_path) if config_path else ProviderConfig()
    settings = {"provider": pconf.kind, "url": pconf.url, "per_disease": per_disease, "template": template}
    manifest = RunManifest("generate", settings, seed=seed)
    manifest.add_input(diseases_path)
    pairs = generate_pairs(
        load_diseases(diseases_path), pconf.build(), template, per_disease, seed,
        max_in_flight=pconf.max_in_flight,
    )
    save_pairs(pairs, out)
    click.echo(f"pairs {len(pairs)} -> {out}")
    _finish(manifest, out)


@main.command("clean")
@click.argument("pairs")
@click.option("--diseases", "diseases_path", help="code<TAB>name file for the name-leak check.")
@click.option("--out", required=True)
@handle_errors
def cmd_clean(pairs: str, diseases_path: str | None, out: str) -> None:
    """Drop empty, name-leaking and duplicate pairs."""
    manifest = RunManifest("clean")
    manifest.add_input(pairs)
    names = {}
    if diseases_path:
        manifest.add_input(diseases_path)
        names = {d.code: d.name for d in load_diseases(diseases_path)}
    result = clean(load_pairs(pairs), names)
    save_pairs(result.pairs, out)
    for reason, count in sorted(result.dropped.items()):
        click.echo(f"dropped {reason} {count}")
    click.echo(f"kept {len(result.pairs)} -> {out}")
    _finish(manifest, out)


@main.command("split")
@click.argument("pairs")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-fraction", type=float, default=0.8, show_default=True)
@click.option("--out-train", required=True)
@click.option("--out-eval", required=True)
@handle_errors
def cmd_split(pairs, seed, train_fraction, out_train, out_eval):
    """Seeded shuffle and train/eval split of a pair file."""
    manifest = RunManifest("split", {"train_fraction": train_fraction}, seed=seed)
    manifest.add_input(pairs)
    train_part, eval_part = shuffle_split(load_pairs(pairs), seed, (train_fraction, 1.0 - train_fraction))
    save_pairs(train_part, out_train)
    save_pairs(eval_part, out_eval)
    click.echo(f"train {len(train_part)} -> {out_train}\neval {len(eval_part)} -> {out_eval}")
    _finish(manifest, out_train)


@main.command("demo-corpus")
@click.option("--diseases", "n_diseases", type=click.IntRange(min=2), default=20, show_default=True)
@click.option("--pairs-per-disease", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True)
@handle_errors
def cmd_demo_corpus(n_diseases, pairs_per_disease, seed, out):
    """Write a synthetic clustered pair corpus (for smoke tests and demos)."""
    pairs = make_cluster_corpus(n_diseases, pairs_per_disease=pairs_per_disease, seed=seed)
    save_pairs(pairs, out)
    click.echo(f"pairs {len(pairs)} -> {out}")
    manifest = RunManifest("demo-corpus", {"diseases": n_diseases, "pairs_per_disease": pairs_per_disease}, seed=seed)
    _finish(manifest, out)


if __name__ == "__main__":
    main()
