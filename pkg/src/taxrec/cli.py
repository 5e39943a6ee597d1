"""Command-line driver: taxonomy, categorize, recommend, evaluate.

Configuration precedence is file < environment < flags. The five
environment variables are ``TAXREC_LLM_BASE_URL``, ``TAXREC_LLM_MODEL``,
``TAXREC_LLM_API_KEY``, ``TAXREC_EMBED_BASE_URL``, ``TAXREC_CACHE_DIR``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

from . import baselines, catalog, evaluation, gateway, matchers, recommender, synthetic, taxonomy
from .core import InteractionSequence, Item
from .errors import TaxRecError

_DEFAULTS: dict[str, object] = {
    "provider": "mock",
    "mock_seed": 0,
    "model": "default",
    "base_url": "",
    "api_key": "",
    "embed_base_url": "",
    "cache_dir": ".taxrec-cache",
    "dataset": "synthetic",
    "data_dir": "",
    "domain": "",
    "n_items": 240,
    "n_users": 80,
    "per_user": 25,
    "concentration": 0.8,
    "k": 10,
    "feature_count": 10,
    "matcher": "taxonomy",
    "history_titles": True,
    "rec_titles": False,
    "no_taxonomy": False,
    "n": 200,
    "seed": 0,
    "repeats": 3,
    "ks": "1,5,10",
    "methods": "taxrec,direct,popularity",
    "sweep": "",
    "values": "",
    "external": "",
    "out": "",
    "label": "",
    "verbose": False,
    "max_workers": 4,
    "max_in_flight": 4,
}

_ENV_KEYS = {
    "TAXREC_LLM_BASE_URL": "base_url",
    "TAXREC_LLM_MODEL": "model",
    "TAXREC_LLM_API_KEY": "api_key",
    "TAXREC_EMBED_BASE_URL": "embed_base_url",
    "TAXREC_CACHE_DIR": "cache_dir",
}

_DATASET_DOMAINS = {"synthetic": "book", "movielens": "movie", "bookcrossing": "book"}

_SWEEP_AXES = {
    "feature-count": "feature_count",
    "matcher": "matcher",
    "prompt-variant": "prompt_variant",
    "ablation": "component_ablation",
}

_DEFAULT_SWEEP_VALUES = {
    "feature_count": "5,10,15,20",
    "matcher": "taxonomy,bleu,rouge",
    "prompt_variant": ",".join(evaluation.PROMPT_VARIANTS),
    "component_ablation": ",".join(evaluation.COMPONENT_ABLATIONS),
}


@dataclass
class RunConfig:
    """Fully resolved settings for one invocation."""

    provider: str
    mock_seed: int
    model: str
    base_url: str
    api_key: str
    embed_base_url: str
    cache_dir: str
    dataset: str
    data_dir: str
    domain: str
    n_items: int
    n_users: int
    per_user: int
    concentration: float
    k: int
    feature_count: int
    matcher: str
    history_titles: bool
    rec_titles: bool
    no_taxonomy: bool
    n: int
    seed: int
    repeats: int
    ks: str
    methods: str
    sweep: str
    values: str
    external: str
    out: str
    label: str
    verbose: bool
    max_workers: int
    max_in_flight: int

    def provenance(self) -> dict:
        """Everything that shaped the run except output location and secrets."""
        data = asdict(self)
        data.pop("out")
        data.pop("api_key")
        return data

    def ks_list(self) -> list[int]:
        return [int(part) for part in self.ks.split(",") if part.strip()]

    def methods_list(self) -> list[str]:
        return [part.strip() for part in self.methods.split(",") if part.strip()]


def resolve_config(args: argparse.Namespace, env: Mapping[str, str] | None = None) -> RunConfig:
    env = os.environ if env is None else env
    resolved = dict(_DEFAULTS)

    config_path = getattr(args, "config", None)
    if config_path:
        file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        unknown = set(file_values) - set(_DEFAULTS)
        if unknown:
            raise TaxRecError(f"unknown config file keys: {sorted(unknown)}")
        resolved.update(file_values)

    for env_key, field_name in _ENV_KEYS.items():
        if env.get(env_key):
            resolved[field_name] = env[env_key]

    for field_name in _DEFAULTS:
        flag_value = getattr(args, field_name, None)
        if flag_value is not None:
            resolved[field_name] = flag_value

    if not resolved["domain"]:
        resolved["domain"] = _DATASET_DOMAINS.get(str(resolved["dataset"]), "item")
    return RunConfig(**resolved)  # type: ignore[arg-type]


def build_provider(cfg: RunConfig) -> gateway.Provider:
    if cfg.provider == "mock":
        return gateway.MockProvider(cfg.mock_seed)
    if cfg.provider == "http":
        if not cfg.base_url:
            raise TaxRecError(
                "http provider needs a base URL (flag --base-url or TAXREC_LLM_BASE_URL)"
            )
        return gateway.HttpChatProvider(
            base_url=cfg.base_url,
            model_name=cfg.model,
            api_key=cfg.api_key or None,
            max_in_flight=cfg.max_in_flight,
        )
    raise TaxRecError(f"unknown provider {cfg.provider!r}; expected 'mock' or 'http'")


def build_embedder(cfg: RunConfig) -> matchers.Embedder:
    if cfg.embed_base_url:
        return matchers.HttpEmbedder(base_url=cfg.embed_base_url)
    # Deterministic non-semantic fallback so embedding paths run offline.
    return matchers.HashEmbedder(seed=cfg.mock_seed)


def load_dataset(cfg: RunConfig) -> tuple[catalog.ItemPool, list[catalog.Interaction]]:
    if cfg.dataset == "synthetic":
        return synthetic.make_synthetic_dataset(
            n_items=cfg.n_items,
            n_users=cfg.n_users,
            interactions_per_user=cfg.per_user,
            seed=cfg.seed,
            concentration=cfg.concentration,
            domain_label=cfg.domain,
        )
    if not cfg.data_dir:
        raise TaxRecError(f"dataset {cfg.dataset!r} needs --data-dir")
    if cfg.dataset == "movielens":
        return catalog.load_movielens(Path(cfg.data_dir))
    if cfg.dataset == "bookcrossing":
        return catalog.load_bookcrossing(Path(cfg.data_dir))
    raise TaxRecError(f"unknown dataset {cfg.dataset!r}")


def _build_sequences(
    cfg: RunConfig, pool: catalog.ItemPool, interactions: list[catalog.Interaction]
) -> list[InteractionSequence]:
    if cfg.dataset == "bookcrossing":
        return evaluation.build_book_sequences(
            interactions, pool, sample_n=cfg.n, seed=cfg.seed
        )
    return evaluation.build_movie_sequences(interactions, pool, sample_n=cfg.n, seed=cfg.seed)


def _progress_line(done: int, total: int, failed: int) -> None:
    end = "\n" if done + failed >= total else "\r"
    sys.stdout.write(f"categorized {done}/{total} ({failed} failed){end}")
    sys.stdout.flush()


# -- subcommands -------------------------------------------------------


def cmd_taxonomy(cfg: RunConfig) -> int:
    cache_dir = Path(cfg.cache_dir)
    cached = taxonomy.load_taxonomy(cache_dir, cfg.domain)
    if cached is not None:
        print(f"cached taxonomy for domain {cfg.domain!r}")
        doc = cached
    else:
        provider = build_provider(cfg)
        doc = taxonomy.generate_taxonomy(provider, cfg.domain, cache_dir)
        print(f"generated taxonomy for domain {cfg.domain!r}")
    for feature in doc.taxonomy.features:
        print(f"  {feature.name} ({len(feature.values)} values)")
    print(f"{len(doc.taxonomy.features)} features")
    return 0


def cmd_categorize(cfg: RunConfig) -> int:
    cache_dir = Path(cfg.cache_dir)
    doc = taxonomy.load_taxonomy(cache_dir, cfg.domain)
    if doc is None:
        raise TaxRecError(
            f"no taxonomy for domain {cfg.domain!r}; run 'taxrec taxonomy' first"
        )
    pool, _ = load_dataset(cfg)
    provider = build_provider(cfg)
    stats = catalog.CategorizeStats()
    cpool = catalog.categorize_pool(
        provider,
        pool,
        doc.taxonomy,
        cache_dir,
        max_workers=cfg.max_workers,
        progress=_progress_line,
        stats=stats,
    )
    print(f"coverage {cpool.coverage:.2%}, {stats.dropped_pairs} out-of-taxonomy pairs dropped")
    return 0


def _read_history_ids(cfg: RunConfig, ids: str, ids_file: str) -> list[str]:
    if ids:
        return [part.strip() for part in ids.split(",") if part.strip()]
    if ids_file:
        return [
            line.strip()
            for line in Path(ids_file).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    raise TaxRecError("provide history item ids via --ids or --ids-file")


def cmd_recommend(cfg: RunConfig, ids: str, ids_file: str) -> int:
    cache_dir = Path(cfg.cache_dir)
    pool, _ = load_dataset(cfg)
    history_ids = _read_history_ids(cfg, ids, ids_file)
    unknown = [item_id for item_id in history_ids if item_id not in pool.by_id]
    if unknown:
        raise TaxRecError(f"unknown item ids: {', '.join(unknown)}")
    history = [pool.by_id[item_id] for item_id in history_ids]
    sequence = InteractionSequence(
        user_id="cli", history=tuple(history), target=Item(id="__cli_no_target__", title="")
    )
    provider = build_provider(cfg)
    rec_cfg = recommender.RecommendConfig(
        k=cfg.k,
        history_with_titles=cfg.history_titles,
        recommend_with_titles=cfg.rec_titles,
        matcher="exact_title" if cfg.no_taxonomy and cfg.matcher == "taxonomy" else cfg.matcher,
        taxonomy_feature_count=cfg.feature_count,
        use_taxonomy=not cfg.no_taxonomy,
    )
    embedder = build_embedder(cfg) if rec_cfg.matcher == "embedding" else None

    if rec_cfg.use_taxonomy:
        doc = taxonomy.load_taxonomy(cache_dir, cfg.domain)
        if doc is None:
            raise TaxRecError(
                f"no taxonomy for domain {cfg.domain!r}; run 'taxrec taxonomy' first"
            )
        cpool = catalog.load_categorized_pool(cache_dir, pool, doc.taxonomy, provider.model_name)
        result = recommender.recommend(
            provider, sequence, cpool, doc.taxonomy, rec_cfg,
            domain_label=cfg.domain, embedder=embedder,
        )
    else:
        result = baselines.direct_llm_recommend(
            provider, sequence, pool, cfg.k,
            matcher=rec_cfg.matcher, domain_label=cfg.domain, embedder=embedder,
        )

    print(f"{'rank':>4}  {'id':<12} {'score':>8}  title")
    for rank, (item_id, score) in enumerate(result.ranked.entries, start=1):
        title = pool.by_id[item_id].title
        print(f"{rank:>4}  {item_id:<12} {score:>8.3f}  {title}")
    if cfg.verbose:
        print("\n--- prompt ---")
        print(result.prompt_text)
        print("--- raw output ---")
        print(result.raw_output)
    return 0


def _taxrec_method(
    provider, cpool, doc, rec_cfg, domain, embedder
) -> evaluation.MethodFn:
    index = (
        recommender.build_pool_index(cpool, include_titles=rec_cfg.recommend_with_titles)
        if rec_cfg.matcher == "taxonomy"
        else None
    )

    def method(sequence: InteractionSequence):
        return recommender.recommend(
            provider, sequence, cpool, doc.taxonomy if doc else None, rec_cfg,
            domain_label=domain, embedder=embedder, index=index,
        ).ranked

    return method


def cmd_evaluate(cfg: RunConfig) -> int:
    cache_dir = Path(cfg.cache_dir)
    provider = build_provider(cfg)
    pool, interactions = load_dataset(cfg)
    sequences = _build_sequences(cfg, pool, interactions)
    ks = cfg.ks_list()
    depth = max([cfg.k, *ks])

    doc = taxonomy.generate_taxonomy(provider, cfg.domain, cache_dir)
    cpool = catalog.categorize_pool(
        provider, pool, doc.taxonomy, cache_dir,
        max_workers=cfg.max_workers, progress=_progress_line if cfg.verbose else None,
    )
    embedder = build_embedder(cfg)

    base_rec_cfg = recommender.RecommendConfig(
        k=depth,
        history_with_titles=cfg.history_titles,
        recommend_with_titles=cfg.rec_titles,
        matcher=cfg.matcher,
        taxonomy_feature_count=cfg.feature_count,
    )

    def make_method(rec_cfg: recommender.RecommendConfig) -> evaluation.MethodFn:
        return _taxrec_method(provider, cpool, doc, rec_cfg, cfg.domain, embedder)

    if cfg.sweep:
        axis = _SWEEP_AXES.get(cfg.sweep)
        if axis is None:
            raise TaxRecError(f"unknown sweep {cfg.sweep!r}; expected one of {sorted(_SWEEP_AXES)}")
        values_text = cfg.values or _DEFAULT_SWEEP_VALUES[axis]
        raw_values = [part.strip() for part in values_text.split(",") if part.strip()]
        values: list[object] = (
            [int(v) for v in raw_values] if axis == "feature_count" else list(raw_values)
        )
        setup = evaluation.SweepSetup(
            make_method=make_method,
            base_config=base_rec_cfg,
            sequences=sequences,
            repeats=cfg.repeats,
            ks=ks,
            max_workers=cfg.max_workers,
        )
        reports = evaluation.run_sweep(axis, values, setup)
    else:
        methods: dict[str, evaluation.MethodFn] = {}
        for name in cfg.methods_list():
            if name == "taxrec":
                methods[name] = make_method(base_rec_cfg)
            elif name == "direct":
                direct_cfg = base_rec_cfg.with_overrides(use_taxonomy=False, matcher="exact_title")
                methods[name] = make_method(direct_cfg)
            elif name == "popularity":
                table = baselines.PopularityTable.from_interactions(interactions)
                methods[name] = (
                    lambda seq, table=table, depth=depth: baselines.popularity_recommend(
                        table, seq, depth
                    )
                )
            elif name == "avgemb":
                avg = baselines.AverageEmbeddingRecommender(embedder, pool)
                methods[name] = lambda seq, avg=avg, depth=depth: avg.recommend(seq, depth)
            else:
                raise TaxRecError(
                    f"unknown method {name!r}; expected taxrec, direct, popularity, or avgemb"
                )
        for path_text in [p for p in cfg.external.split(",") if p.strip()]:
            name, method = evaluation.load_external_results(Path(path_text.strip()))
            methods[name] = method
        reports = [
            evaluation.run_experiment(
                methods, sequences,
                repeats=cfg.repeats, ks=ks, max_workers=cfg.max_workers, label=cfg.label or cfg.dataset,
            )
        ]

    if cfg.out:
        run_dir = Path(cfg.out)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        run_dir = Path("runs") / f"{stamp}-{cfg.label or cfg.dataset}"
    report_path = evaluation.write_report(run_dir, cfg.provenance(), reports, ks)
    print(evaluation.format_metric_table(reports, ks))
    print(f"report: {report_path}")
    return 0


# -- argument parsing ---------------------------------------------------


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (keys mirror flag names)")
    parser.add_argument("--provider", choices=["mock", "http"], help="chat provider backend")
    parser.add_argument("--mock-seed", dest="mock_seed", type=int, help="seed for the mock provider")
    parser.add_argument("--model", help="model name for the http provider")
    parser.add_argument("--base-url", dest="base_url", help="chat completion base URL")
    parser.add_argument("--api-key", dest="api_key", help="API key for the http provider")
    parser.add_argument("--embed-base-url", dest="embed_base_url", help="embedding endpoint base URL")
    parser.add_argument("--cache-dir", dest="cache_dir", help="taxonomy/categorization cache directory")
    parser.add_argument("--domain", help="domain label (defaults per dataset)")
    parser.add_argument("--max-workers", dest="max_workers", type=int, help="concurrent pipeline calls")
    parser.add_argument("--max-in-flight", dest="max_in_flight", type=int, help="HTTP requests in flight")
    parser.add_argument("--verbose", action="store_true", default=None, help="print extra detail")


def _add_dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--dataset", choices=["synthetic", "movielens", "bookcrossing"], help="item pool source"
    )
    parser.add_argument("--data-dir", dest="data_dir", help="dataset directory for real datasets")
    parser.add_argument("--n-items", dest="n_items", type=int, help="synthetic pool size")
    parser.add_argument("--n-users", dest="n_users", type=int, help="synthetic user count")
    parser.add_argument("--per-user", dest="per_user", type=int, help="synthetic interactions per user")
    parser.add_argument(
        "--concentration", type=float, help="synthetic preference concentration in [0,1]"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taxrec",
        description="Taxonomy-guided zero-shot recommendation pipeline",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p_tax = subparsers.add_parser("taxonomy", help="generate and persist the domain taxonomy")
    _add_common_flags(p_tax)
    _add_dataset_flags(p_tax)

    p_cat = subparsers.add_parser("categorize", help="categorize the item pool (resumable)")
    _add_common_flags(p_cat)
    _add_dataset_flags(p_cat)

    p_rec = subparsers.add_parser("recommend", help="recommend for a history of item ids")
    _add_common_flags(p_rec)
    _add_dataset_flags(p_rec)
    p_rec.add_argument("--ids", help="comma-separated history item ids")
    p_rec.add_argument("--ids-file", dest="ids_file", help="file with one history item id per line")
    p_rec.add_argument("--k", type=int, help="ranking depth")
    p_rec.add_argument("--matcher", choices=list(matchers.MATCHER_METHODS), help="ranking matcher")
    p_rec.add_argument(
        "--no-taxonomy", dest="no_taxonomy", action="store_true", default=None,
        help="skip the taxonomy: raw titles in, free-text matching out",
    )
    p_rec.add_argument("--feature-count", dest="feature_count", type=int, help="taxonomy features to keep")

    p_eval = subparsers.add_parser("evaluate", help="run the experiment harness")
    _add_common_flags(p_eval)
    _add_dataset_flags(p_eval)
    p_eval.add_argument("--n", type=int, help="number of evaluation instances to sample")
    p_eval.add_argument("--seed", type=int, help="sampling / synthetic generation seed")
    p_eval.add_argument("--repeats", type=int, help="experiment repetitions to average")
    p_eval.add_argument("--ks", help="comma-separated k values, e.g. 1,5,10")
    p_eval.add_argument("--k", type=int, help="ranking depth requested from methods")
    p_eval.add_argument("--methods", help="comma-separated: taxrec,direct,popularity,avgemb")
    p_eval.add_argument("--matcher", choices=list(matchers.MATCHER_METHODS), help="taxrec matcher")
    p_eval.add_argument("--feature-count", dest="feature_count", type=int, help="taxonomy features to keep")
    p_eval.add_argument(
        "--history-titles", dest="history_titles", action=argparse.BooleanOptionalAction,
        default=None, help="include titles in the categorized history",
    )
    p_eval.add_argument(
        "--rec-titles", dest="rec_titles", action=argparse.BooleanOptionalAction,
        default=None, help="parse titles out of recommendations",
    )
    p_eval.add_argument(
        "--sweep", choices=sorted(_SWEEP_AXES), help="sweep one axis instead of a single run"
    )
    p_eval.add_argument("--values", help="comma-separated sweep values (axis defaults otherwise)")
    p_eval.add_argument("--external", help="comma-separated external result files to merge")
    p_eval.add_argument("--out", help="report directory (default runs/<timestamp>-<label>)")
    p_eval.add_argument("--label", help="run label used in reports and default paths")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "taxonomy":
            return cmd_taxonomy(cfg)
        if args.command == "categorize":
            return cmd_categorize(cfg)
        if args.command == "recommend":
            return cmd_recommend(cfg, getattr(args, "ids", "") or "", getattr(args, "ids_file", "") or "")
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        parser.error(f"unknown command {args.command!r}")
    except (TaxRecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
