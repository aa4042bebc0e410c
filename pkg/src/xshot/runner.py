"""Evaluation orchestration: configs, cells, persistence and reports.

An evaluation is a grid of cells ``(lang, k, run)``. Every cell samples its
demonstrations once (seed ``base_seed + run``), scores or generates for each
evaluated example and appends one :class:`ResultRecord` per example. A
failing cell becomes a single ``status="error"`` record; the other cells
still run. Reports are always recomputed from the persisted records.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from xshot.backends import Backend, CachedBackend, DiskCache, GenerationParams, make_backend, resolve_cache_dir
from xshot.backends.cache import request_key
from xshot.backends.remote import post_json
from xshot.errors import ProtocolError, TaskError, XshotError
from xshot.fewshot import (
    SeparatorSpec,
    ShotSpec,
    join_context,
    sample_demos,
    target_prompts,
    truncate_to_fit,
)
from xshot.metrics import (
    RunRecord,
    accuracy,
    aggregate,
    corpus_bleu,
    mean_std,
    precision_at_1,
    precision_recall,
)
from xshot.scoring import (
    DEFAULT_CONTENT_FREE,
    CalibrationSpec,
    ScoringFunction,
    average_probabilities,
    calibrate,
    normalize,
    score_candidates,
    select,
)
from xshot.tasks import (
    RESOURCE_LEVELS,
    Example,
    Task,
    canonical_json,
    demo_pool,
    downsample_candidates,
    load_task,
    stable_seed,
)
from xshot.templates import (
    PromptTemplate,
    TemplateMode,
    bind,
    instantiate_gold,
    load_templates,
    select_template,
)

log = logging.getLogger(__name__)

PRIMARY_VALUE = {
    "accuracy": "accuracy",
    "precision-recall": "accuracy",
    "precision-at-1": "precision@1",
    "corpus-bleu": "bleu-ws",
}
RECORDS_FILE = "records.jsonl"


@dataclass
class EvalConfig:
    task: str
    templates: str | list[str]
    backend: str = "uniform"
    scoring: str = "mean-skip-prefix"
    answer_context: str | None = None
    calibrate: bool = False
    content_free_inputs: list[str] = field(default_factory=lambda: list(DEFAULT_CONTENT_FREE))
    shots: list[int] = field(default_factory=lambda: [0])
    n_runs: int = 5
    base_seed: int = 0
    strategy: str = "random-total"
    per_example_resample: bool = False
    separator: str = "\n"
    eval_split: str = "test"
    languages: list[str] | None = None
    template_mode: str = "same"
    template_lang: str | None = None
    demo_lang: str | None = None
    translate_test: str | None = None
    probe_candidates: int | None = None
    max_new_tokens: int = 32
    stop: list[str] = field(default_factory=lambda: ["\n"])
    context_length: int | None = None
    cache_dir: str | None = None
    out: str = "results"
    workers: int = 1
    dump_prompts: bool = False

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise XshotError(f"unknown config keys {unknown}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "EvalConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if not self.shots or any(k < 0 for k in self.shots):
            raise XshotError("shot list must be non-empty and non-negative")
        if self.n_runs < 1:
            raise XshotError("n_runs must be at least 1")
        self.mode()

    def mode(self) -> TemplateMode:
        if self.template_mode in ("same", "same-language"):
            if self.template_lang:
                raise XshotError("template_lang only applies to source-language mode")
            return TemplateMode()
        if self.template_mode in ("source", "source-language"):
            if not self.template_lang:
                raise XshotError("source-language mode needs template_lang")
            return TemplateMode.source(self.template_lang)
        raise XshotError(f"unknown template mode {self.template_mode!r}")


@dataclass
class ResultRecord:
    """One evaluated example in one cell, or one failed cell (``status="error"``)."""

    task: str
    lang: str
    k: int
    run_seed: int
    example_id: str = ""
    status: str = "ok"
    metric: str = "accuracy"
    resource_level: str = "unknown"
    prediction: Any = None
    gold: Any = None
    pred_index: int | None = None
    gold_index: int | None = None
    correct: bool | None = None
    scores: list[float] = field(default_factory=list)
    calibrated: list[float] | None = None
    prompt_digests: list[str] = field(default_factory=list)
    kept_demos: int = 0
    dropped_demos: int = 0
    template_lang: str | None = None
    relation: str | None = None
    positive_label: str | None = None
    error: str | None = None

    def sort_key(self) -> tuple:
        return (self.lang, self.k, self.run_seed, self.example_id)

    def to_json(self) -> str:
        return canonical_json(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        return cls(**json.loads(line))


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class TranslatorClient:
    """Client for ``POST /v1/translate {"text","source","target"} -> {"text"}``."""

    def __init__(self, endpoint: str, target_lang: str = "en", timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.target_lang = target_lang
        self.timeout = timeout

    @property
    def id(self) -> str:
        return f"translator:{self.endpoint}"

    def translate(self, text: str, source: str, target: str) -> str:
        resp = post_json(f"{self.endpoint}/v1/translate",
                         {"text": text, "source": source, "target": target}, self.timeout)
        if not isinstance(resp, dict) or not isinstance(resp.get("text"), str):
            raise ProtocolError("/v1/translate: response lacks a text field")
        return resp["text"]


def translate_test_transform(
    examples: Sequence[Example], client, cache: DiskCache | None = None,
) -> list[Example]:
    """Translate example fields into ``client.target_lang``.

    Only field texts change; labels, choices and templates are untouched.
    The original language is kept in ``meta["source_lang"]`` for reporting.
    """
    target = getattr(client, "target_lang", "en")
    out = []
    for ex in examples:
        if ex.lang == target:
            out.append(ex)
            continue
        fields = {}
        for name in sorted(ex.fields):
            text = ex.fields[name]
            request = {"text": text, "source": ex.lang, "target": target}

            def compute(text=text):
                return {"text": client.translate(text, ex.lang, target)}

            try:
                if cache is None:
                    resp = compute()
                else:
                    resp = cache.fetch(request_key(client.id, "translate", request), compute)
            except XshotError as e:
                raise TaskError(f"{ex.id}: translation of field {name!r} failed: {e}") from e
            if not isinstance(resp, dict) or not isinstance(resp.get("text"), str):
                raise TaskError(f"{ex.id}: translation of field {name!r} returned no text")
            fields[name] = resp["text"]
        out.append(replace(ex, lang=target, fields=fields, meta={**ex.meta, "source_lang": ex.lang}))
    return out


@dataclass
class _Setup:
    config: EvalConfig
    task: Task
    templates: dict[str, PromptTemplate]
    backend: Backend
    mode: TemplateMode
    fn: ScoringFunction
    calibration: CalibrationSpec
    sep: SeparatorSpec
    prompts: dict[str, str] = field(default_factory=dict)


def _content_free_probs(s: _Setup, example: Example, template: PromptTemplate, demos) -> list[float]:
    rows = []
    for cf in s.calibration.content_free_inputs:
        cf_ex = replace(example, fields={name: cf for name in example.fields})
        targets = target_prompts(s.task, template, cf_ex)
        fit = truncate_to_fit(demos, targets, s.sep, s.backend)
        scores = score_candidates(s.backend, fit.render(targets), s.fn)
        rows.append(normalize([c.value for c in scores]))
    return average_probabilities(rows)


def _evaluate_example(s: _Setup, ex: Example, demos: Sequence[Example], base: ResultRecord) -> ResultRecord:
    cfg, task = s.config, s.task
    demo_prompts = [instantiate_gold(select_template(s.mode, s.templates, d.lang), d) for d in demos]
    template = select_template(s.mode, s.templates, ex.lang)
    rec = replace(base, example_id=ex.id, template_lang=template.lang, gold=ex.gold)

    if task.kind == "generation":
        [prefix] = target_prompts(task, template, ex)
        fit = truncate_to_fit(demo_prompts, [prefix], s.sep, s.backend, reserve=cfg.max_new_tokens)
        full = join_context(fit.demos, prefix, s.sep.separator)
        text = s.backend.greedy_generate(full, GenerationParams(cfg.max_new_tokens, tuple(cfg.stop)))
        s.prompts[digest(full)] = full
        return replace(rec, prediction=text, prompt_digests=[digest(full)],
                       kept_demos=fit.kept_count, dropped_demos=fit.dropped_count)

    targets = target_prompts(task, template, ex)
    fit = truncate_to_fit(demo_prompts, targets, s.sep, s.backend)
    prompts = fit.render(targets)
    scores = score_candidates(s.backend, prompts, s.fn)
    values = [c.value for c in scores]
    calibrated = None
    if s.calibration.enabled:
        calibrated = calibrate(normalize(values), s.calibration,
                               _content_free_probs(s, ex, template, fit.demos))
        pred = select(calibrated)
    else:
        pred = select(scores)
    gold = task.gold_index(ex)
    for p in prompts:
        s.prompts[digest(p.text)] = p.text
    return replace(
        rec,
        prediction=task.candidates(ex)[pred],
        pred_index=pred,
        gold_index=gold,
        correct=pred == gold,
        scores=values,
        calibrated=calibrated,
        prompt_digests=[digest(p.text) for p in prompts],
        kept_demos=fit.kept_count,
        dropped_demos=fit.dropped_count,
        relation=ex.meta.get("relation") if task.metric == "precision-at-1" else None,
    )


def _run_cell(s: _Setup, examples: Sequence[Example], pool: Sequence[Example],
              k: int, seed: int, base: ResultRecord) -> list[ResultRecord]:
    cfg = s.config
    label_space = s.task.label_space or None
    shared = sample_demos(pool, ShotSpec(k, cfg.strategy, seed), label_space=label_space) if k else []
    shared_ids = {d.id for d in shared}

    def demos_for(ex: Example) -> list[Example]:
        if not k:
            return []
        if cfg.per_example_resample:
            return sample_demos(pool, ShotSpec(k, cfg.strategy, stable_seed(seed, ex.id)),
                                exclude_id=ex.id, label_space=label_space)
        if ex.id in shared_ids:
            return sample_demos(pool, ShotSpec(k, cfg.strategy, seed), exclude_id=ex.id,
                                label_space=label_space)
        return shared

    def one(ex: Example) -> ResultRecord:
        return _evaluate_example(s, ex, demos_for(ex), base)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool_exec:
            return list(pool_exec.map(one, examples))
    return [one(ex) for ex in examples]


def cell_values(records: Sequence[ResultRecord]) -> dict[str, float]:
    """Metric values of one cell, recomputed from its records."""
    metric = records[0].metric
    if metric == "corpus-bleu":
        return {"bleu-ws": corpus_bleu([r.prediction for r in records], [r.gold for r in records])}
    preds = [r.pred_index for r in records]
    golds = [r.gold_index for r in records]
    values = {"accuracy": accuracy(preds, golds)}
    if metric == "precision-recall":
        pr = precision_recall([r.prediction for r in records], [r.gold for r in records],
                              records[0].positive_label)
        values.update(precision=pr.precision, recall=pr.recall)
    elif metric == "precision-at-1":
        values = {"precision@1": precision_at_1(preds, golds, [r.relation or "" for r in records])}
    return values


def run_records(records: Iterable[ResultRecord]) -> list[RunRecord]:
    cells: dict[tuple, list[ResultRecord]] = defaultdict(list)
    for r in records:
        if r.status == "ok":
            cells[r.task, r.lang, r.k, r.run_seed].append(r)
    out = []
    for (task, lang, k, seed), recs in sorted(cells.items()):
        out.append(RunRecord(
            task=task, lang=lang, k=k, run_seed=seed,
            metric=PRIMARY_VALUE[recs[0].metric], values=cell_values(recs),
            items=tuple((r.example_id, r.gold, r.prediction) for r in recs),
            resource_level=recs[0].resource_level,
        ))
    return out


def _prepare_examples(s: _Setup, lang: str, translator, cache: DiskCache | None):
    cfg, task = s.config, s.task
    examples = task.examples(cfg.eval_split, lang)
    if cfg.probe_candidates:
        examples = [downsample_candidates(ex, cfg.probe_candidates,
                                          stable_seed(cfg.base_seed, digest(ex.id)))
                    for ex in examples]
    pool: list[Example] = []
    if any(cfg.shots):
        pool = demo_pool(task, cfg.eval_split, cfg.demo_lang or lang)
    if translator is not None:
        examples = translate_test_transform(examples, translator, cache)
        pool = translate_test_transform(pool, translator, cache)
    return examples, pool


def run_eval(config: EvalConfig, backend: Backend | None = None, translator=None) -> dict[str, Path]:
    """Run every cell of ``config`` and write records, manifest and reports to ``config.out``."""
    config.validate()
    task = load_task(config.task)
    templates = load_templates(config.templates)
    for t in templates.values():
        bind(t, task)
    mode = config.mode()
    cache_dir = resolve_cache_dir(config.cache_dir)
    backend = backend or make_backend(config.backend, config.context_length)
    if cache_dir is not None:
        backend = CachedBackend(backend, cache_dir)
    if translator is None and config.translate_test:
        translator = TranslatorClient(config.translate_test)
    cache = DiskCache(cache_dir) if cache_dir is not None else None

    s = _Setup(config, task, templates, backend, mode,
               ScoringFunction.from_name(config.scoring, config.answer_context),
               CalibrationSpec(config.calibrate, tuple(config.content_free_inputs)),
               SeparatorSpec(config.separator))

    langs = config.languages or sorted({ex.lang for ex in task.examples(config.eval_split)})
    target_lang = getattr(translator, "target_lang", None) if translator is not None else None
    for lang in [*langs, *([config.demo_lang] if config.demo_lang else [])]:
        select_template(mode, templates, target_lang or lang)

    records: list[ResultRecord] = []
    for lang in langs:
        base = ResultRecord(task=task.name, lang=lang, k=0, run_seed=config.base_seed,
                            metric=task.metric, resource_level=task.resource_level(lang),
                            positive_label=task.positive_label)
        try:
            examples, pool = _prepare_examples(s, lang, translator, cache)
        except XshotError as e:
            log.error("%s/%s: preparation failed: %s", task.name, lang, e)
            records.append(replace(base, status="error", error=str(e)))
            continue
        for k in config.shots:
            for run in range(1 if k == 0 else config.n_runs):
                seed = config.base_seed + run
                cell = replace(base, k=k, run_seed=seed)
                try:
                    records.extend(_run_cell(s, examples, pool, k, seed, cell))
                except XshotError as e:
                    log.error("%s/%s k=%d run=%d failed: %s", task.name, lang, k, run, e)
                    records.append(replace(cell, status="error", error=str(e)))

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    records.sort(key=ResultRecord.sort_key)
    write_records(records, out / RECORDS_FILE)
    if config.dump_prompts:
        with (out / "prompts.jsonl").open("w", encoding="utf-8", newline="\n") as f:
            for d in sorted(s.prompts):
                f.write(canonical_json({"digest": d, "text": s.prompts[d]}) + "\n")
    manifest = {
        "config": config.to_dict(),
        "backend_id": backend.id,
        "task": task.name,
        "notes": (["translate-test: evaluated examples and demonstrations were both translated"]
                  if translator is not None else []),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                                       encoding="utf-8")
    paths = render_report(out / RECORDS_FILE, ("lang", "resource_level"), out)
    return {"records": out / RECORDS_FILE, "manifest": out / "manifest.json", **paths}


def write_records(records: Iterable[ResultRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def read_records(path: str | Path) -> list[ResultRecord]:
    with Path(path).open(encoding="utf-8") as f:
        return [ResultRecord.from_json(line) for line in f if line.strip()]


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.4f}"


def render_report(records_path: str | Path, group_by: Sequence[str] = ("lang",),
                  out_dir: str | Path | None = None) -> dict[str, Path]:
    """Write ``report.csv``, ``report.txt`` and ``aggregates.csv`` from persisted records.

    One row per (task, k, metric): a column per language (mean over runs),
    one per resource level when grouping by it (mean over member languages),
    and ``Avg.`` over all language columns.
    """
    records_path = Path(records_path)
    out_dir = Path(out_dir) if out_dir is not None else records_path.parent
    records = read_records(records_path)
    if not records:
        raise XshotError(f"{records_path}: no records")
    failures = [r for r in records if r.status != "ok"]
    runs = run_records(records)
    if not runs:
        raise XshotError(f"{records_path}: every cell failed")

    langs = sorted({r.lang for r in runs})
    lang_level = {r.lang: r.resource_level for r in runs}
    levels = ([lvl for lvl in RESOURCE_LEVELS if lvl in lang_level.values()]
              if "resource_level" in group_by else [])
    header = ["task", "k", "metric", *langs, *levels, "Avg."]

    table: list[list[str]] = []
    text_rows: list[list[str]] = []
    long_rows: list[list[str]] = []
    for task, k in sorted({(r.task, r.k) for r in runs}):
        cell_runs = [r for r in runs if r.task == task and r.k == k]
        for name in sorted({m for r in cell_runs for m in r.values}):
            by_lang = {}
            for agg in aggregate([r for r in cell_runs if name in r.values], ("lang",), name):
                lang = agg.group()["lang"]
                by_lang[lang] = agg
                long_rows.append([task, str(k), name, lang, _fmt(agg.mean), _fmt(agg.sample_std), str(agg.n_runs)])
            by_level = {}
            for lvl in levels:
                means = [by_lang[l].mean for l in langs if l in by_lang and lang_level[l] == lvl]
                if means:
                    by_level[lvl] = math.fsum(means) / len(means)
                    long_rows.append([task, str(k), name, f"level:{lvl}", _fmt(by_level[lvl]), "", ""])
            avg = mean_std([a.mean for a in by_lang.values()])[0]
            long_rows.append([task, str(k), name, "Avg.", _fmt(avg), "", ""])
            table.append([task, str(k), name, *(_fmt(by_lang[l].mean) if l in by_lang else "" for l in langs),
                          *(_fmt(by_level.get(lvl)) for lvl in levels), _fmt(avg)])
            text_rows.append([task, str(k), name,
                              *((f"{by_lang[l].mean:.4f}±{by_lang[l].sample_std:.4f}" if l in by_lang else "-")
                                for l in langs),
                              *(_fmt(by_level.get(lvl)) or "-" for lvl in levels), _fmt(avg)])

    paths = {"report_csv": out_dir / "report.csv", "report_txt": out_dir / "report.txt",
             "aggregates_csv": out_dir / "aggregates.csv"}
    with paths["report_csv"].open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(table)
    with paths["aggregates_csv"].open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["task", "k", "metric", "group", "mean", "std", "n_runs"])
        w.writerows(long_rows)
    widths = [max(len(row[i]) for row in [header, *text_rows]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip() for row in [header, *text_rows]]
    if failures:
        lines.append("")
        lines.append(f"{len(failures)} failed cell(s):")
        lines.extend(f"  {r.lang} k={r.k} run_seed={r.run_seed}: {r.error}" for r in failures)
    paths["report_txt"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths
