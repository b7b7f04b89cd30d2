"""Command-line pipeline for semantic join discovery.

Offline stages: ingest (or synth-bench) -> train -> embed -> build-index.
Online stages: query against the store/index; oracle, evaluate, and bench
produce ground truth, quality metrics, and timing reports. Reports are
delimited files; evaluate and bench additionally render figures next to
them.

Configuration is a flat JSON file; any command-line flag overrides its
config key, which overrides the built-in default. Unknown config keys are
rejected rather than ignored.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, evaluation, index, matching, projection, repository
from . import training
from .embedder import EmbedderConfig, make_embedder

DEFAULTS: dict = {
    # cell embedder
    "embedder": "hashed-ngram",    # hashed-ngram | word-vector-file
    "dimension": 64,
    "ngram_min": 2,
    "ngram_max": 3,
    "vector_file": None,
    "embedder_seed": 0,
    # cell matching
    "tau": 0.2,
    # training
    "temperature": 0.08,
    "momentum_alpha": 0.9999,
    "queue_len": 32,
    "batch_size": 64,
    "rank_list_len": 3,
    "learning_rate": 0.01,
    "epochs": 1,
    "seed": 0,
    "num_proxy_sets": 90,
    "proxies_per_set": 50,
    # positive synthesis
    "split_ratio": 0.5,
    "score_min": 0.6,
    "score_max": 0.9,
    "sigma": 0.1,
    "gamma": 0.5,
    "max_shrink": 10,
    "synth_mode": "embedding",     # text | embedding
    "synth_seed": 1,
    # approximate index
    "max_neighbors": 16,
    "ef_construction": 200,
    "ef_search": 64,
    "exact_fallback_threshold": 2048,
    "index_seed": 0,
}

_CONFIG_FLAGS = sorted(DEFAULTS)


class CliError(Exception):
    """User-facing failure with a clean one-line message."""


def load_settings(args: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    settings = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as handle:
                file_cfg = json.load(handle)
        except FileNotFoundError:
            raise CliError(f"config file not found: {config_path}")
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}")
        unknown = sorted(set(file_cfg) - set(DEFAULTS))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(file_cfg)
    for key in _CONFIG_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _embedder_cfg(settings: dict) -> EmbedderConfig:
    return EmbedderConfig(
        kind=settings["embedder"],
        dimension=int(settings["dimension"]),
        ngram_range=(int(settings["ngram_min"]), int(settings["ngram_max"])),
        vector_file_path=settings["vector_file"],
        seed=int(settings["embedder_seed"]))


def _match_cfg(settings: dict) -> matching.MatchConfig:
    return matching.MatchConfig(tau=float(settings["tau"]))


def _train_cfg(settings: dict) -> training.TrainConfig:
    return training.TrainConfig(
        temperature=float(settings["temperature"]),
        momentum_alpha=float(settings["momentum_alpha"]),
        queue_len=int(settings["queue_len"]),
        batch_size=int(settings["batch_size"]),
        rank_list_len=int(settings["rank_list_len"]),
        learning_rate=float(settings["learning_rate"]),
        epochs=int(settings["epochs"]),
        seed=int(settings["seed"]),
        num_proxy_sets=int(settings["num_proxy_sets"]),
        proxies_per_set=int(settings["proxies_per_set"]),
        dimension=int(settings["dimension"]))


def _synth_cfg(settings: dict) -> datagen.SynthConfig:
    return datagen.SynthConfig(
        split_ratio=float(settings["split_ratio"]),
        score_range=(float(settings["score_min"]),
                     float(settings["score_max"])),
        sigma=float(settings["sigma"]),
        gamma=float(settings["gamma"]),
        max_shrink=int(settings["max_shrink"]),
        mode=settings["synth_mode"],
        seed=int(settings["synth_seed"]))


def _ann_cfg(settings: dict) -> index.AnnIndexConfig:
    return index.AnnIndexConfig(
        max_neighbors=int(settings["max_neighbors"]),
        ef_construction=int(settings["ef_construction"]),
        ef_search=int(settings["ef_search"]),
        exact_fallback_threshold=int(settings["exact_fallback_threshold"]),
        seed=int(settings["index_seed"]))


def _require(path: str | Path, what: str, hint: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"{what} not found at {path}; run '{hint}' first")
    return path


def _load_model(path: str | Path) -> tuple[np.ndarray, np.ndarray, int]:
    return projection.load_proxy_checkpoint(
        _require(path, "model checkpoint", "joinscout train"))


def _print_table(rows: list[dict], columns: list[str]) -> None:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows
              else len(c) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    print(header)
    print("-" * len(header))
    for row in rows:
        print("  ".join(str(row[c]).ljust(widths[c]) for c in columns))


# -- subcommands -----------------------------------------------------


def cmd_ingest(args: argparse.Namespace, settings: dict) -> int:
    repo = repository.ingest_tables(
        _require(args.tables, "table directory", "mkdir + add CSVs"))
    repository.save_repository(repo, args.out)
    manifest_path = args.manifest or str(
        Path(args.out).with_suffix(".manifest.json"))
    repository.write_manifest(repo, manifest_path)
    for warning in repo.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"ingested {len(repo)} columns -> {args.out} "
          f"(manifest: {manifest_path})")
    return 0


def cmd_synth_bench(args: argparse.Namespace, settings: dict) -> int:
    try:
        levels = tuple(float(v) for v in args.levels.split(","))
    except ValueError:
        raise CliError(f"--levels must be comma-separated numbers, got "
                       f"{args.levels!r}")
    spec = repository.SynthBenchSpec(
        n_columns=args.n_columns, n_queries=args.n_queries,
        query_cells=args.query_cells,
        cells_per_column=(args.cells_min, args.cells_max),
        levels=levels,
        vocab_size=args.vocab_size, seed=int(settings["seed"]),
        n_families=args.n_families,
        lures_per_query=args.lures_per_query,
        lure_overlap=args.lure_overlap)
    bench = repository.synth_benchmark(spec)
    repository.save_repository(bench.repo, args.out)
    repository.save_columns(bench.queries, args.queries)
    manifest_path = args.manifest or str(
        Path(args.out).with_suffix(".manifest.json"))
    repository.write_manifest(bench.repo, manifest_path)
    print(f"benchmark: {len(bench.repo)} columns -> {args.out}, "
          f"{len(bench.queries)} queries -> {args.queries}")
    return 0


def cmd_train(args: argparse.Namespace, settings: dict) -> int:
    repo = repository.load_repository(
        _require(args.repo, "repository", "joinscout ingest"))
    embedder = make_embedder(_embedder_cfg(settings))
    matrices = repository.embed_all(repo.columns, embedder)
    cells_by_id = {c.id: list(c.cells) for c in repo.columns}
    cfg = _train_cfg(settings)
    synth_cfg = _synth_cfg(settings)
    provider = datagen.make_example_provider(
        matrices, cells_by_id, cfg.rank_list_len, synth_cfg,
        _match_cfg(settings), embedder)
    columns = [(c.id, matrices[c.id]) for c in repo.columns]
    result = training.train(columns, cfg, provider)
    projection.save_proxy_checkpoint(
        args.out, result.state.target_params,
        result.state.momentum_params, cfg.seed)
    if args.log:
        training.write_training_log(result.log, args.log)
    if args.plot:
        from . import report
        report.plot_training_log(result.log, args.plot)
    steps = result.state.step
    last = result.log[-1][2] if result.log else float("nan")
    print(f"trained {steps} steps -> {args.out} (final loss {last:.4f})")
    return 0


def cmd_embed(args: argparse.Namespace, settings: dict) -> int:
    repo = repository.load_repository(
        _require(args.repo, "repository", "joinscout ingest"))
    target, _, _ = _load_model(args.model)
    embedder = make_embedder(_embedder_cfg(settings))
    store = index.VectorStore(dimension=target.shape[0])
    for column in repo.columns:
        matrix = embedder.embed_column(list(column.cells))
        store.add(column.id, projection.column_embedding(matrix, target))
    store.save(args.out)
    print(f"embedded {len(store)} columns -> {args.out}")
    return 0


def cmd_build_index(args: argparse.Namespace, settings: dict) -> int:
    store = index.VectorStore.load(
        _require(args.store, "vector store", "joinscout embed"))
    ann = index.build_ann(store, _ann_cfg(settings))
    ann.save(args.out)
    mode = "exact-fallback" if ann.exact_mode else "graph"
    print(f"index over {len(store)} vectors ({mode}) -> {args.out}")
    return 0


def _query_cells(args: argparse.Namespace) -> list[str]:
    if args.cell:
        return list(args.cell)
    if args.cells_file:
        path = _require(args.cells_file, "query cell file", "create it")
        return [line.strip() for line in
                path.read_text(encoding="utf-8").splitlines()
                if line.strip()]
    raise CliError("provide query cells via --cell or --cells-file")


def cmd_query(args: argparse.Namespace, settings: dict) -> int:
    store = index.VectorStore.load(
        _require(args.store, "vector store", "joinscout embed"))
    target, _, _ = _load_model(args.model)
    embedder = make_embedder(_embedder_cfg(settings))
    cells = repository.clean_cells(_query_cells(args))
    if not cells:
        raise CliError("query column is empty after cleaning")
    matrix = embedder.embed_column(cells)
    emb = projection.column_embedding(matrix, target)
    if args.exact or not args.index:
        hits = index.knn_exact(store, emb, args.k)
    else:
        ann = index.AnnIndex.load(
            _require(args.index, "index", "joinscout build-index"), store)
        hits = ann.query(emb, args.k)
    rows = [{"rank": i, "column_id": cid, "similarity": f"{sim:.6f}"}
            for i, (cid, sim) in enumerate(hits, start=1)]
    columns = ["rank", "column_id", "similarity"]
    if args.with_oracle:
        if not args.repo:
            raise CliError("--with-oracle needs --repo")
        repo = repository.load_repository(
            _require(args.repo, "repository", "joinscout ingest"))
        match_cfg = _match_cfg(settings)
        for row in rows:
            cand = repo.get(row["column_id"])
            score = matching.joinability(
                matrix, embedder.embed_column(list(cand.cells)), match_cfg)
            row["joinability"] = f"{score.value:.6f}"
        columns.append("joinability")
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        _print_table(rows, columns)
    return 0


def cmd_oracle(args: argparse.Namespace, settings: dict) -> int:
    repo = repository.load_repository(
        _require(args.repo, "repository", "joinscout ingest"))
    queries = repository.load_columns(
        _require(args.queries, "query file", "joinscout synth-bench"))
    embedder = make_embedder(_embedder_cfg(settings))
    match_cfg = _match_cfg(settings)
    matrices = repository.embed_all(repo.columns, embedder)
    pairs = [(c.id, matrices[c.id]) for c in repo.columns]
    k = args.k if args.k else len(repo)
    results = {}
    for query in queries:
        q_matrix = embedder.embed_column(list(query.cells))
        results[query.id] = matching.exact_topk(q_matrix, pairs, k, match_cfg)
    matching.write_oracle_csv(results, args.out)
    print(f"oracle rankings for {len(queries)} queries (k={k}) -> {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace, settings: dict) -> int:
    store = index.VectorStore.load(
        _require(args.store, "vector store", "joinscout embed"))
    target, _, _ = _load_model(args.model)
    queries = repository.load_columns(
        _require(args.queries, "query file", "joinscout synth-bench"))
    truth = matching.read_oracle_csv(
        _require(args.truth, "ground-truth CSV", "joinscout oracle"))
    embedder = make_embedder(_embedder_cfg(settings))
    ks = [int(v) for v in args.k.split(",")]
    ann = None
    if args.index:
        ann = index.AnnIndex.load(
            _require(args.index, "index", "joinscout build-index"), store)
    rows = []
    for query in queries:
        if query.id not in truth:
            raise CliError(f"ground truth is missing query {query.id!r}")
        emb = projection.column_embedding(
            embedder.embed_column(list(query.cells)), target)
        hits = (ann.query(emb, max(ks)) if ann is not None
                else index.knn_exact(store, emb, max(ks)))
        approx = evaluation.RankedResult(
            query_id=query.id, items=tuple(hits))
        truth_items = tuple((cid, score.value)
                            for cid, score in truth[query.id])
        truth_ranked = evaluation.RankedResult(
            query_id=query.id, items=truth_items)
        gains = {cid: score.value for cid, score in truth[query.id]}
        missing = [cid for cid, _ in hits if cid not in gains]
        if missing:
            raise CliError(
                f"truth file has no joinability for {missing[0]!r} "
                f"(query {query.id!r}); regenerate it with "
                f"'joinscout oracle --k 0' so every column is covered")
        for k in ks:
            recall = evaluation.recall_at_k(approx, truth_ranked, k)
            ndcg = evaluation.ndcg_at_k(approx, truth_ranked, gains, k)
            rows.append((query.id, k, recall, ndcg))
    summary = evaluation.write_metric_report(rows, args.out_csv,
                                             args.out_json)
    figure_path = args.figure or str(
        Path(args.out_csv).with_suffix(".png"))
    from . import report
    report.plot_metric_summary(summary, figure_path)
    for k in ks:
        stats = summary["per_k"][str(k)]
        print(f"k={k}: mean recall {stats['mean_recall']:.4f}, "
              f"mean NDCG {stats['mean_ndcg']:.4f}")
    print(f"metrics -> {args.out_csv}, figure -> {figure_path}")
    return 0


def cmd_bench(args: argparse.Namespace, settings: dict) -> int:
    rng = np.random.default_rng(int(settings["seed"]))
    cfg = _ann_cfg(settings)
    train_cfg = _train_cfg(settings)
    proxies = training.init_proxies(
        train_cfg.num_proxy_sets, train_cfg.proxies_per_set,
        train_cfg.dimension, train_cfg.seed)
    rows = []
    encode_sizes = [int(v) for v in args.encode_sizes.split(",")]
    for size in encode_sizes:
        cells = rng.standard_normal((size, train_cfg.dimension))
        cells /= np.linalg.norm(cells, axis=1, keepdims=True)
        encode = evaluation.median_ms(
            lambda c=cells: projection.column_embedding(c, proxies),
            runs=args.runs)
        rows.append((size, encode, 0.0))
    index_sizes = [int(v) for v in args.index_sizes.split(",")]
    queries = rng.standard_normal((max(50, args.runs), args.store_dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    for size in index_sizes:
        vectors = rng.standard_normal((size, args.store_dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        store = index.VectorStore(args.store_dim)
        store.add_many([(f"v{i:07d}", vectors[i]) for i in range(size)])
        built = time.perf_counter()
        ann = index.build_ann(store, cfg)
        built = time.perf_counter() - built
        samples = []
        for q in queries:
            start = time.perf_counter()
            ann.query(q, args.k)
            samples.append((time.perf_counter() - start) * 1000.0)
        samples.sort()
        mid = len(samples) // 2
        search = (samples[mid] if len(samples) % 2 else
                  0.5 * (samples[mid - 1] + samples[mid]))
        rows.append((size, 0.0, search))
        print(f"size {size}: build {built:.1f}s, "
              f"median search {search:.3f}ms")
    evaluation.write_timing_csv(rows, args.out)
    figure_path = args.figure or str(Path(args.out).with_suffix(".png"))
    from . import report
    report.plot_latency([r for r in rows if r[1] > 0 or r[2] > 0],
                        figure_path)
    print(f"timings -> {args.out}, figure -> {figure_path}")
    return 0


# -- parser ----------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser,
                      keys: list[str]) -> None:
    for key in keys:
        default = DEFAULTS[key]
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, type=int, default=None)
        elif isinstance(default, int):
            parser.add_argument(flag, type=int, default=None)
        elif isinstance(default, float):
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="joinscout",
        description="Find joinable columns in a table repository by "
                    "semantic cell matching.")
    parser.add_argument("--config", type=str, default=None,
                        help="flat JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a column repository from CSVs")
    p.add_argument("--tables", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)

    p = sub.add_parser("synth-bench",
                       help="generate a synthetic benchmark repository")
    p.add_argument("--out", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--n-columns", type=int, default=2000)
    p.add_argument("--n-queries", type=int, default=40)
    p.add_argument("--query-cells", type=int, default=20)
    p.add_argument("--cells-min", type=int, default=40)
    p.add_argument("--cells-max", type=int, default=40)
    p.add_argument("--levels",
                   default="0.9,0.8,0.7,0.65,0.6,0.55,0.5,0.45,0.4,0.35",
                   help="comma-separated planted joinability levels")
    p.add_argument("--vocab-size", type=int, default=120_000)
    p.add_argument("--n-families", type=int, default=4)
    p.add_argument("--lures-per-query", type=int, default=5)
    p.add_argument("--lure-overlap", type=int, default=2)
    _add_config_flags(p, ["seed"])

    p = sub.add_parser("train", help="learn proxy columns from a repository")
    p.add_argument("--repo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="training-loss CSV path")
    p.add_argument("--plot", default=None, help="training-loss figure path")
    _add_config_flags(p, [
        "embedder", "dimension", "ngram_min", "ngram_max", "vector_file",
        "embedder_seed", "tau", "temperature", "momentum_alpha", "queue_len",
        "batch_size", "rank_list_len", "learning_rate", "epochs", "seed",
        "num_proxy_sets", "proxies_per_set", "split_ratio", "score_min",
        "score_max", "sigma", "gamma", "max_shrink", "synth_mode",
        "synth_seed"])

    p = sub.add_parser("embed", help="embed every repository column")
    p.add_argument("--repo", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["embedder", "dimension", "ngram_min", "ngram_max",
                          "vector_file", "embedder_seed"])

    p = sub.add_parser("build-index", help="build the ANN search index")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["max_neighbors", "ef_construction", "ef_search",
                          "exact_fallback_threshold", "index_seed"])

    p = sub.add_parser("query", help="search the top-k joinable columns")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--cell", action="append", default=None,
                   help="repeatable query cell")
    p.add_argument("--cells-file", default=None,
                   help="file with one query cell per line")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--exact", action="store_true",
                   help="bypass the ANN index")
    p.add_argument("--with-oracle", action="store_true",
                   help="audit results with true joinability")
    p.add_argument("--repo", default=None,
                   help="repository JSON (needed with --with-oracle)")
    p.add_argument("--json", action="store_true")
    _add_config_flags(p, ["embedder", "dimension", "ngram_min", "ngram_max",
                          "vector_file", "embedder_seed", "tau"])

    p = sub.add_parser("oracle", help="exact ground-truth rankings")
    p.add_argument("--repo", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=0,
                   help="0 ranks the whole repository")
    _add_config_flags(p, ["embedder", "dimension", "ngram_min", "ngram_max",
                          "vector_file", "embedder_seed", "tau"])

    p = sub.add_parser("evaluate", help="recall/NDCG against ground truth")
    p.add_argument("--store", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--k", default="5,15,25")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", default=None)
    p.add_argument("--figure", default=None)
    _add_config_flags(p, ["embedder", "dimension", "ngram_min", "ngram_max",
                          "vector_file", "embedder_seed"])

    p = sub.add_parser("bench", help="latency scaling measurements")
    p.add_argument("--out", required=True)
    p.add_argument("--figure", default=None)
    p.add_argument("--encode-sizes", default="100,200,400")
    p.add_argument("--index-sizes", default="50000,100000")
    p.add_argument("--store-dim", type=int, default=32)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--runs", type=int, default=50)
    _add_config_flags(p, ["seed", "num_proxy_sets", "proxies_per_set",
                          "dimension", "max_neighbors", "ef_construction",
                          "ef_search", "exact_fallback_threshold",
                          "index_seed"])
    return parser


_HANDLERS = {
    "ingest": cmd_ingest,
    "synth-bench": cmd_synth_bench,
    "train": cmd_train,
    "embed": cmd_embed,
    "build-index": cmd_build_index,
    "query": cmd_query,
    "oracle": cmd_oracle,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(args)
        return _HANDLERS[args.command](args, settings)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
