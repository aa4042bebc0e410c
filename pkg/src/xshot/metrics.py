"""Task metrics and aggregation over repeated runs."""

from __future__ import annotations

import math
import statistics
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Sequence

from xshot.errors import MetricError

GROUP_KEYS = ("task", "lang", "k", "resource_level")


def _aligned(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise MetricError("no predictions")


def accuracy(preds: Sequence[Hashable], golds: Sequence[Hashable]) -> float:
    _aligned(preds, golds)
    return sum(p == g for p, g in zip(preds, golds)) / len(golds)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    precision_undefined: bool = False
    recall_undefined: bool = False


def precision_recall(
    preds: Sequence[str], golds: Sequence[str], positive_label: str,
    labels: Sequence[str] | None = None,
) -> PrecisionRecall:
    """Binary precision and recall; a zero denominator yields 0 and sets its flag."""
    _aligned(preds, golds)
    labels = set(labels) if labels is not None else set(preds) | set(golds)
    if positive_label not in labels:
        raise MetricError(f"unknown positive label {positive_label!r}")
    if len(labels) > 2:
        raise MetricError(f"precision/recall needs binary labels, got {sorted(labels)}")
    tp = sum(p == positive_label and g == positive_label for p, g in zip(preds, golds))
    fp = sum(p == positive_label and g != positive_label for p, g in zip(preds, golds))
    fn = sum(p != positive_label and g == positive_label for p, g in zip(preds, golds))
    return PrecisionRecall(
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        precision_undefined=tp + fp == 0,
        recall_undefined=tp + fn == 0,
    )


def precision_at_1(preds: Sequence, golds: Sequence, relations: Sequence[Hashable]) -> float:
    """Per-relation accuracy of the top candidate, macro-averaged over relations."""
    _aligned(preds, golds)
    if len(relations) != len(golds):
        raise MetricError("relations not aligned with predictions")
    groups: dict[Hashable, list[bool]] = defaultdict(list)
    for p, g, r in zip(preds, golds, relations):
        groups[r].append(p == g)
    return math.fsum(sum(hits) / len(hits) for hits in groups.values()) / len(groups)


def _bleu_tokens(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).split()


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuStats:
    """Corpus-level clipped n-gram counts behind a BLEU score."""

    matches: tuple[int, ...]
    totals: tuple[int, ...]
    hyp_len: int
    ref_len: int

    @property
    def precisions(self) -> tuple[float, ...]:
        return tuple(m / t if t else 0.0 for m, t in zip(self.matches, self.totals))

    @property
    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        return 1.0 if self.hyp_len > self.ref_len else math.exp(1 - self.ref_len / self.hyp_len)


def bleu_stats(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> BleuStats:
    if len(hypotheses) != len(references):
        raise MetricError("hypotheses and references differ in length")
    if not hypotheses:
        raise MetricError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _bleu_tokens(hyp), _bleu_tokens(ref)
        if not r:
            raise MetricError("empty reference")
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            matches[n - 1] += sum((hc & _ngrams(r, n)).values())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return BleuStats(tuple(matches), tuple(totals), hyp_len, ref_len)


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    """Unsmoothed corpus BLEU on whitespace tokens, scaled to [0, 100] ("bleu-ws")."""
    stats = bleu_stats(hypotheses, references, max_n)
    if stats.hyp_len == 0 or any(m == 0 for m in stats.matches):
        return 0.0
    log_p = math.fsum(math.log(p) for p in stats.precisions) / max_n
    return 100.0 * stats.brevity_penalty * math.exp(log_p)


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one (task, lang, k, run) cell.

    ``items`` holds ``(example_id, gold, prediction)`` triples.
    """

    task: str
    lang: str
    k: int
    run_seed: int
    metric: str
    values: dict[str, float]
    items: tuple[tuple[str, Any, Any], ...] = ()
    resource_level: str = "unknown"

    @property
    def value(self) -> float:
        return self.values[self.metric if self.metric in self.values else next(iter(self.values))]


@dataclass(frozen=True)
class AggregateResult:
    key: tuple[tuple[str, Any], ...]
    mean: float
    sample_std: float
    n_runs: int
    metric: str = "value"

    def group(self) -> dict[str, Any]:
        return dict(self.key)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        raise MetricError("no values")
    mean = math.fsum(values) / len(values)
    return mean, statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate(
    records: Iterable[RunRecord],
    grouping: Sequence[str] = ("task", "lang", "k"),
    metric: str | None = None,
) -> list[AggregateResult]:
    """Mean and sample std over runs per group, sorted by group key.

    Grouping by ``resource_level`` without ``lang`` first averages the member
    languages within each run, then aggregates those per-run level values.
    """
    records = list(records)
    if not records:
        raise MetricError("nothing to aggregate")
    for g in grouping:
        if g not in GROUP_KEYS:
            raise MetricError(f"unknown grouping key {g!r}")

    def val(r: RunRecord) -> float:
        return r.values[metric] if metric else r.value

    per_run: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        key = tuple((g, getattr(r, g)) for g in grouping)
        per_run[key, r.run_seed].append(val(r))
    per_group: dict[tuple, list[float]] = defaultdict(list)
    for (key, _seed), vals in sorted(per_run.items()):
        per_group[key].append(math.fsum(vals) / len(vals))
    out = []
    for key in sorted(per_group):
        mean, std = mean_std(per_group[key])
        out.append(AggregateResult(key, mean, std, len(per_group[key]), metric or records[0].metric))
    return out
