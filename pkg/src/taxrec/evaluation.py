"""Experimental protocol: sequence construction, metrics, runs, and sweeps.

Sequences are built per dataset convention (timestamp windows where
timestamps exist, seeded random sampling where they don't), short histories
are padded with the most recent interaction, and methods are compared on
Recall@k and NDCG@k averaged over instances and repeats.
"""
from __future__ import annotations

import json
import math
import random
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .catalog import Interaction, ItemPool
from .core import InteractionSequence, Item, RankedList
from .errors import TaxRecError

MethodFn = Callable[[InteractionSequence], RankedList]

DEFAULT_KS = (1, 5, 10)
DEFAULT_THRESHOLD = 10
DEFAULT_SAMPLE_N = 2000
DISPLAY_SCALE = 10.0

SWEEP_AXES = ("feature_count", "matcher", "prompt_variant", "component_ablation")

# The four prompt-variant cells: (history with titles, recommend with titles).
PROMPT_VARIANTS: dict[str, tuple[bool, bool]] = {
    "h+t/rec+t": (True, True),
    "h+t/rec-t": (True, False),
    "h-t/rec+t": (False, True),
    "h-t/rec-t": (False, False),
}

COMPONENT_ABLATIONS = ("full", "no_tax", "no_match")


def pad_history(history: Sequence[Item], threshold: int) -> list[Item]:
    """Pad a short history to the threshold by repeating its last element."""
    if not history:
        raise ValueError("history must be non-empty")
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    padded = list(history)
    while len(padded) < threshold:
        padded.append(padded[-1])
    return padded


def build_movie_sequences(
    interactions: Sequence[Interaction],
    pool: ItemPool,
    threshold: int = DEFAULT_THRESHOLD,
    sample_n: int = DEFAULT_SAMPLE_N,
    seed: int = 0,
) -> list[InteractionSequence]:
    """Timestamped protocol: history is the window immediately before the target.

    Eligible targets are positions with at least one preceding interaction;
    ``sample_n`` of them are drawn without replacement with the given seed.
    Short windows are padded.
    """
    by_user: dict[str, list[Interaction]] = defaultdict(list)
    for record in sorted(interactions, key=lambda r: (r.user_id, r.timestamp or 0, r.item_id)):
        by_user[record.user_id].append(record)

    eligible: list[tuple[str, int]] = []
    for user_id in sorted(by_user):
        records = by_user[user_id]
        for position in range(1, len(records)):
            target_id = records[position].item_id
            window = records[max(0, position - threshold) : position]
            if target_id not in pool.by_id:
                continue
            if any(r.item_id == target_id or r.item_id not in pool.by_id for r in window):
                continue
            eligible.append((user_id, position))

    if len(eligible) < sample_n:
        raise TaxRecError(
            f"only {len(eligible)} eligible targets; cannot sample {sample_n}"
        )
    rng = random.Random(seed)
    chosen = rng.sample(eligible, sample_n)

    sequences = []
    for user_id, position in chosen:
        records = by_user[user_id]
        window = records[max(0, position - threshold) : position]
        history = pad_history([pool.by_id[r.item_id] for r in window], threshold)
        target = pool.by_id[records[position].item_id]
        sequences.append(
            InteractionSequence(user_id=user_id, history=tuple(history), target=target)
        )
    return sequences


def build_book_sequences(
    interactions: Sequence[Interaction],
    pool: ItemPool,
    threshold: int = DEFAULT_THRESHOLD,
    sample_n: int = DEFAULT_SAMPLE_N,
    seed: int = 0,
) -> list[InteractionSequence]:
    """Timestamp-free protocol: random target, random distinct history items.

    Users with fewer than two distinct interacted items are skipped; it is
    an error if fewer than ``sample_n`` users remain.
    """
    by_user: dict[str, list[str]] = defaultdict(list)
    for record in sorted(interactions, key=lambda r: (r.user_id, r.item_id)):
        if record.item_id in pool.by_id and record.item_id not in by_user[record.user_id]:
            by_user[record.user_id].append(record.item_id)

    eligible_users = [user_id for user_id in sorted(by_user) if len(by_user[user_id]) >= 2]
    if len(eligible_users) < sample_n:
        raise TaxRecError(
            f"only {len(eligible_users)} users with >= 2 interactions; cannot sample {sample_n}"
        )
    rng = random.Random(seed)
    chosen_users = rng.sample(eligible_users, sample_n)

    sequences = []
    for user_id in chosen_users:
        item_ids = by_user[user_id]
        target_id = rng.choice(item_ids)
        others = [item_id for item_id in item_ids if item_id != target_id]
        if len(others) >= threshold:
            history_ids = rng.sample(others, threshold)
        else:
            history_ids = rng.sample(others, len(others))
        history = pad_history([pool.by_id[i] for i in history_ids], threshold)
        sequences.append(
            InteractionSequence(
                user_id=user_id, history=tuple(history), target=pool.by_id[target_id]
            )
        )
    return sequences


def recall_at_k(ranked: RankedList, target_id: str, k: int) -> float:
    """1.0 if the single target appears in the top k, else 0.0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rank = ranked.rank_of(target_id)
    return 1.0 if rank is not None and rank <= k else 0.0


def ndcg_at_k(ranked: RankedList, target_id: str, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(rank+1) within k, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rank = ranked.rank_of(target_id)
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


@dataclass(frozen=True)
class EvalInstance:
    """One evaluated sequence with every method's ranked output."""

    sequence: InteractionSequence
    method_outputs: Mapping[str, RankedList]


def run_instance(methods: Mapping[str, MethodFn], sequence: InteractionSequence) -> EvalInstance:
    """Run every method on one sequence; failures propagate to the caller."""
    return EvalInstance(
        sequence=sequence,
        method_outputs={name: method(sequence) for name, method in methods.items()},
    )


@dataclass
class MetricReport:
    """Per-method recall/ndcg metrics plus the per-instance audit log.

    Metrics are stored on [0, 1]; ``scale_factor`` is the display
    convention applied only when formatting tables.
    """

    per_method: dict[str, dict[str, float]]
    repeats: int
    scale_factor: float = DISPLAY_SCALE
    label: str = ""
    error: str | None = None
    instance_log: list[dict] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "label": self.label,
            "repeats": self.repeats,
            "scale_factor": self.scale_factor,
            "error": self.error,
            "per_method": self.per_method,
            "instance_log": self.instance_log,
        }


def _metric_keys(ks: Sequence[int]) -> list[str]:
    return [f"recall@{k}" for k in ks] + [f"ndcg@{k}" for k in ks]


def run_experiment(
    methods: Mapping[str, MethodFn],
    sequences: Sequence[InteractionSequence],
    *,
    repeats: int = 3,
    ks: Sequence[int] = DEFAULT_KS,
    max_workers: int = 4,
    failure_limit: float = 0.05,
    label: str = "",
) -> MetricReport:
    """Evaluate every method on every sequence, averaged over repeats.

    Instances are evaluated concurrently within a repeat; aggregation folds
    per-instance records in instance order, so results are independent of
    completion order. A method failing on an instance scores as a miss;
    the run fails if any method's failure fraction exceeds the limit.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not sequences:
        raise ValueError("no sequences to evaluate")
    max_k = max(ks)

    records: list[dict] = []
    failures: dict[str, int] = {name: 0 for name in methods}

    for repeat in range(repeats):
        def evaluate_instance(index_sequence: tuple[int, InteractionSequence]) -> list[dict]:
            index, sequence = index_sequence
            rows = []
            for name, method in methods.items():
                row = {
                    "repeat": repeat,
                    "instance": index,
                    "user_id": sequence.user_id,
                    "target_id": sequence.target.id,
                    "method": name,
                    "rank": None,
                    "failed": False,
                }
                try:
                    ranked = method(sequence)
                    if ranked.k < max_k:
                        raise TaxRecError(
                            f"method {name!r} ranked depth {ranked.k} < max evaluated k {max_k}"
                        )
                    row["rank"] = ranked.rank_of(sequence.target.id)
                except Exception as exc:
                    row["failed"] = True
                    row["error"] = str(exc)
                rows.append(row)
            return rows

        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as executor:
                batches = list(executor.map(evaluate_instance, enumerate(sequences)))
        else:
            batches = [evaluate_instance(pair) for pair in enumerate(sequences)]
        for batch in batches:
            records.extend(batch)

    records.sort(key=lambda r: (r["repeat"], r["instance"], r["method"]))

    totals: dict[str, dict[str, float]] = {
        name: {key: 0.0 for key in _metric_keys(ks)} for name in methods
    }
    for row in records:
        name = row["method"]
        if row["failed"]:
            failures[name] += 1
            continue  # a miss: contributes zero to every metric
        rank = row["rank"]
        for k in ks:
            hit = rank is not None and rank <= k
            totals[name][f"recall@{k}"] += 1.0 if hit else 0.0
            totals[name][f"ndcg@{k}"] += (1.0 / math.log2(rank + 1)) if hit else 0.0

    denominator = len(sequences) * repeats
    per_method = {
        name: {key: value / denominator for key, value in metric_totals.items()}
        for name, metric_totals in totals.items()
    }

    for name, count in failures.items():
        if count / denominator > failure_limit:
            raise TaxRecError(
                f"method {name!r} failed on {count} of {denominator} evaluations "
                f"(> {failure_limit:.0%})"
            )

    if repeats > 1:
        def outcome_signature(repeat: int) -> list[tuple]:
            return [
                (r["instance"], r["method"], r["rank"], r["failed"])
                for r in records
                if r["repeat"] == repeat
            ]

        if all(outcome_signature(r) == outcome_signature(0) for r in range(1, repeats)):
            warnings.warn(
                "all repeats produced identical outcomes; the provider appears "
                "deterministic, so repeats add no information",
                stacklevel=2,
            )

    return MetricReport(
        per_method=per_method, repeats=repeats, label=label, instance_log=records
    )


@dataclass
class SweepSetup:
    """Everything held fixed across sweep cells.

    ``make_method`` builds the system under test for one cell's
    recommendation config; extra fixed methods (baselines) ride along
    unchanged in every cell.
    """

    make_method: Callable[..., MethodFn]
    base_config: object
    sequences: Sequence[InteractionSequence]
    fixed_methods: Mapping[str, MethodFn] = field(default_factory=dict)
    repeats: int = 1
    ks: Sequence[int] = DEFAULT_KS
    max_workers: int = 4


def _sweep_config(axis: str, value, base_config):
    if axis == "feature_count":
        return base_config.with_overrides(taxonomy_feature_count=int(value))
    if axis == "matcher":
        return base_config.with_overrides(matcher=str(value))
    if axis == "prompt_variant":
        key = str(value)
        if key not in PROMPT_VARIANTS:
            raise ValueError(f"unknown prompt variant {key!r}; expected one of {sorted(PROMPT_VARIANTS)}")
        history_titles, recommend_titles = PROMPT_VARIANTS[key]
        return base_config.with_overrides(
            history_with_titles=history_titles, recommend_with_titles=recommend_titles
        )
    if axis == "component_ablation":
        key = str(value)
        if key == "full":
            return base_config.with_overrides(use_taxonomy=True, matcher="taxonomy")
        if key == "no_tax":
            return base_config.with_overrides(use_taxonomy=False, matcher="exact_title")
        if key == "no_match":
            return base_config.with_overrides(use_taxonomy=True, matcher="rouge")
        raise ValueError(f"unknown ablation {key!r}; expected one of {COMPONENT_ABLATIONS}")
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sweep(axis: str, values: Sequence, base: SweepSetup) -> list[MetricReport]:
    """One experiment per axis value, everything else held fixed.

    Failed cells are marked with their error and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    reports = []
    for value in values:
        label = f"{axis}={value}"
        try:
            config = _sweep_config(axis, value, base.base_config)
            methods = dict(base.fixed_methods)
            methods[label] = base.make_method(config)
            report = run_experiment(
                methods,
                base.sequences,
                repeats=base.repeats,
                ks=base.ks,
                max_workers=base.max_workers,
                label=label,
            )
        except Exception as exc:
            report = MetricReport(per_method={}, repeats=0, label=label, error=str(exc))
        reports.append(report)
    return reports


def load_external_results(path: Path) -> tuple[str, MethodFn]:
    """Load a pre-computed baseline's ranked lists as a pluggable method.

    The file holds ``{"method": name, "instances": [{"user_id",
    "target_id", "ranking": [[item_id, score], ...]}]}``; instances are
    matched to sequences by (user_id, target_id).
    """
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    name = payload["method"]
    table: dict[tuple[str, str], RankedList] = {}
    for instance in payload["instances"]:
        entries = tuple((str(item_id), float(score)) for item_id, score in instance["ranking"])
        table[(instance["user_id"], instance["target_id"])] = RankedList(
            entries=entries, k=max(len(entries), DEFAULT_KS[-1])
        )

    def method(sequence: InteractionSequence) -> RankedList:
        key = (sequence.user_id, sequence.target.id)
        if key not in table:
            raise TaxRecError(f"{name}: no external result for user {key[0]} target {key[1]}")
        return table[key]

    return name, method


def format_metric_table(reports: Sequence[MetricReport], ks: Sequence[int] = DEFAULT_KS) -> str:
    """Fixed-width grid of Recall/NDCG columns, scaled for display."""
    header = ["Run", "Method"] + [f"R@{k}" for k in ks] + [f"N@{k}" for k in ks]
    rows = [header]
    for report in reports:
        if report.error is not None:
            rows.append([report.label or "-", "(failed)", report.error] )
            continue
        for method in sorted(report.per_method):
            metrics = report.per_method[method]
            rows.append(
                [report.label or "-", method]
                + [f"{metrics[f'recall@{k}'] * report.scale_factor:.3f}" for k in ks]
                + [f"{metrics[f'ndcg@{k}'] * report.scale_factor:.3f}" for k in ks]
            )
    widths = [max(len(str(row[i])) for row in rows if i < len(row)) for i in range(len(header))]
    lines = []
    for row in rows:
        lines.append("  ".join(str(cell).ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines)


def write_report(
    run_dir: Path, config: Mapping, reports: Sequence[MetricReport], ks: Sequence[int] = DEFAULT_KS
) -> Path:
    """Write ``report.json`` and ``table.txt`` under the run directory.

    Output is byte-stable for identical inputs: keys sorted, no wall-clock
    content.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": dict(config),
        "reports": [report.to_payload() for report in reports],
    }
    report_path = run_dir / "report.json"
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (run_dir / "table.txt").write_text(format_metric_table(reports, ks) + "\n", encoding="utf-8")
    return report_path
