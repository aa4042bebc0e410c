"""Demonstration sampling, context composition and truncation."""

from __future__ import annotations

import csv
import random
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from xshot.backends.base import Backend
from xshot.errors import ContextLengthError, TaskError
from xshot.tasks import Example, Task, demo_pool
from xshot.templates import (
    InstantiatedPrompt,
    PromptTemplate,
    TemplateMode,
    instantiate,
    instantiate_gold,
    render_generation_query,
    select_template,
)

STRATEGIES = ("random-total", "per-class-uniform")


@dataclass(frozen=True)
class ShotSpec:
    k: int
    strategy: str = "random-total"
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise TaskError("k must be non-negative")
        if self.strategy not in STRATEGIES:
            raise TaskError(f"unknown sampling strategy {self.strategy!r}")


@dataclass(frozen=True)
class SeparatorSpec:
    separator: str = "\n"


@dataclass(frozen=True)
class CrossLingualSpec:
    demo_lang: str
    template_mode: TemplateMode = TemplateMode()


@dataclass(frozen=True)
class FewShotContext:
    demos: tuple[str, ...]
    separator: str
    kept_count: int
    dropped_count: int

    def render(self, targets: Sequence[InstantiatedPrompt]) -> list[InstantiatedPrompt]:
        return build_context(self.demos, targets, SeparatorSpec(self.separator))


def sample_demos(
    pool: Sequence[Example],
    spec: ShotSpec,
    exclude_id: str | None = None,
    label_space: Sequence[str] | None = None,
) -> list[Example]:
    """Draw demonstrations deterministically from ``(spec.seed, pool order)``.

    ``per-class-uniform`` draws ``k`` examples of every label in
    ``label_space`` and shuffles them together, so the result has
    ``k * len(label_space)`` items.
    """
    if spec.k == 0:
        return []
    rng = random.Random(spec.seed)
    eligible = [ex for ex in pool if ex.id != exclude_id]
    if spec.strategy == "random-total":
        if len(eligible) < spec.k:
            raise TaskError(f"pool of {len(eligible)} too small for k={spec.k}")
        return rng.sample(eligible, spec.k)

    if not label_space:
        raise TaskError("per-class-uniform sampling needs a classification label space")
    chosen: list[Example] = []
    for label in label_space:
        members = [ex for ex in eligible if ex.label == label]
        if not members:
            raise TaskError(f"class {label!r} absent from demonstration pool")
        if len(members) < spec.k:
            raise TaskError(f"class {label!r} has {len(members)} examples, need {spec.k}")
        chosen.extend(rng.sample(members, spec.k))
    rng.shuffle(chosen)
    return chosen


def _text(x: InstantiatedPrompt | str) -> str:
    return x if isinstance(x, str) else x.text


def build_context(
    demos: Sequence[InstantiatedPrompt | str],
    targets: Sequence[InstantiatedPrompt],
    sep: SeparatorSpec = SeparatorSpec(),
) -> list[InstantiatedPrompt]:
    """Prefix every candidate prompt with the joined demonstrations.

    With no demonstrations the targets come back unchanged.
    """
    if not demos:
        return list(targets)
    prefix = sep.separator.join(_text(d) for d in demos) + sep.separator
    return [t.shifted(prefix) for t in targets]


def join_context(demos: Sequence[InstantiatedPrompt | str], target: str, sep: str) -> str:
    return sep.join([*(_text(d) for d in demos), target])


def truncate_to_fit(
    demos: Sequence[InstantiatedPrompt | str],
    targets: Sequence[InstantiatedPrompt | str],
    sep: SeparatorSpec,
    backend: Backend,
    reserve: int = 0,
) -> FewShotContext:
    """Drop whole demonstrations, oldest first, until every candidate fits.

    ``reserve`` tokens are kept free (generation budget).
    """
    if demos and not sep.separator:
        raise TaskError("separator must be non-empty when demonstrations are used")
    budget = backend.descriptor.context_length - reserve
    texts = [_text(d) for d in demos]
    target_texts = [_text(t) for t in targets]
    if max(len(backend.tokenize(t)) for t in target_texts) > budget:
        raise ContextLengthError("target prompt alone exceeds the context length")
    for drop in range(len(texts) + 1):
        kept = texts[drop:]
        if all(len(backend.tokenize(join_context(kept, t, sep.separator))) <= budget
               for t in target_texts):
            return FewShotContext(tuple(kept), sep.separator, len(kept), drop)
    raise AssertionError("unreachable: the empty context always fits")


def max_fit(
    demos: Sequence[InstantiatedPrompt | str],
    targets: Sequence[InstantiatedPrompt | str],
    sep: str,
    backend: Backend,
    reserve: int = 0,
) -> int:
    """Largest k such that the first k demonstrations plus every target fit."""
    budget = backend.descriptor.context_length - reserve
    target_texts = [_text(t) for t in targets]
    k = 0
    while k < len(demos):
        kept = demos[: k + 1]
        if any(len(backend.tokenize(join_context(kept, t, sep))) > budget for t in target_texts):
            break
        k += 1
    return k


def target_prompts(task: Task, template: PromptTemplate, example: Example) -> list[InstantiatedPrompt | str]:
    """One prompt per candidate, or the generation prefix for generation tasks."""
    if task.kind == "generation":
        return [render_generation_query(template, example)]
    return [instantiate(template, example, c) for c in task.candidates(example)]


def max_fit_stats(
    task: Task,
    templates: Mapping[str, PromptTemplate],
    backend: Backend,
    sep: str = "\n",
    mode: TemplateMode = TemplateMode(),
    eval_split: str = "test",
    seed: int = 0,
    reserve: int = 0,
) -> list[dict]:
    """Mean maximal number of demonstrations that fit, per language.

    For every evaluated example the demonstration pool (minus the example)
    is put in a seeded random order and demonstrations are added until the
    next one would overflow the context.
    """
    rows = []
    for lang in sorted({ex.lang for ex in task.examples(eval_split)}):
        examples = task.examples(eval_split, lang)
        pool = demo_pool(task, eval_split, lang)
        tmpl = select_template(mode, templates, lang)
        rendered = {ex.id: instantiate_gold(select_template(mode, templates, ex.lang), ex) for ex in pool}
        fits = []
        for ex in examples:
            order = [rendered[d.id] for d in pool if d.id != ex.id]
            random.Random(f"{seed}:{ex.id}").shuffle(order)
            fits.append(max_fit(order, target_prompts(task, tmpl, ex), sep, backend, reserve))
        rows.append({"task": task.name, "lang": lang,
                     "mean_fit": statistics.fmean(fits) if fits else 0.0, "n_examples": len(fits)})
    return rows


def write_max_fit_csv(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["task", "lang", "mean_fit", "n_examples"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "mean_fit": f"{r['mean_fit']:.4f}"})
