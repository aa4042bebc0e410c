"""Tasks, examples and on-disk ingestion.

A task is described by a JSON manifest that points at one JSONL file per
split. Every string is NFC-normalized at load time so prompts, digests and
cache keys are stable regardless of how the source files were encoded.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from xshot.errors import TaskError

KINDS = ("classification", "multiple-choice", "generation", "cloze-probe")
METRICS = ("accuracy", "precision-recall", "precision-at-1", "corpus-bleu")
RESOURCE_LEVELS = ("high", "medium", "low", "extremely-low", "unknown")
DEFAULT_METRIC = {
    "classification": "accuracy",
    "multiple-choice": "accuracy",
    "generation": "corpus-bleu",
    "cloze-probe": "precision-at-1",
}

_CODE_RE = re.compile(r"[a-z]{2,3}")


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def canonical_json(obj: Any) -> str:
    """Sorted keys, no insignificant whitespace, raw UTF-8."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class LanguageCode:
    code: str
    resource_level: str = "unknown"

    def __post_init__(self):
        if not isinstance(self.code, str) or not _CODE_RE.fullmatch(self.code):
            raise TaskError(f"invalid language code {self.code!r}")
        if self.resource_level not in RESOURCE_LEVELS:
            raise TaskError(f"invalid resource level {self.resource_level!r} for {self.code}")

    def __str__(self) -> str:
        return self.code


@dataclass(frozen=True)
class Example:
    """One evaluation item.

    Exactly one payload is set: ``label`` (classification), ``choices`` plus
    ``answer_index`` (multiple-choice, cloze-probe) or ``reference``
    (generation). ``meta`` carries non-prompt annotations such as the
    relation id of a knowledge probe.
    """

    id: str
    lang: str
    fields: Mapping[str, str]
    label: str | None = None
    choices: tuple[str, ...] | None = None
    answer_index: int | None = None
    reference: str | None = None
    selector: str | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.choices is not None:
            if self.answer_index is None:
                raise TaskError(f"{self.id}: choices given without answer index")
            if not 0 <= self.answer_index < len(self.choices):
                raise TaskError(
                    f"{self.id}: answer index out of range "
                    f"({self.answer_index} not in [0, {len(self.choices)}))"
                )

    @property
    def gold(self) -> str:
        """Gold candidate: the label, the correct choice, or the reference."""
        if self.label is not None:
            return self.label
        if self.choices is not None:
            return self.choices[self.answer_index]
        if self.reference is not None:
            return self.reference
        raise TaskError(f"{self.id}: example has no gold payload")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"id": self.id, "lang": self.lang, "fields": dict(self.fields)}
        if self.label is not None:
            rec["label"] = self.label
        if self.choices is not None:
            rec["choices"] = list(self.choices)
            rec["answer"] = self.answer_index
        if self.reference is not None:
            rec["reference"] = self.reference
        if self.selector is not None:
            rec["selector"] = self.selector
        if self.meta:
            rec["meta"] = dict(self.meta)
        return rec


@dataclass(frozen=True)
class Task:
    name: str
    kind: str
    metric: str
    languages: Mapping[str, LanguageCode]
    splits: Mapping[str, tuple[Example, ...]]
    label_space: tuple[str, ...] = ()
    demo_split_policy: str = "auto"
    positive_label: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TaskError(f"unknown task kind {self.kind!r}")
        if self.metric not in METRICS:
            raise TaskError(f"unknown metric {self.metric!r}")
        if bool(self.label_space) != (self.kind == "classification"):
            raise TaskError("label_space must be non-empty exactly for classification tasks")
        if len(set(self.label_space)) != len(self.label_space):
            raise TaskError("label_space has duplicates")
        if self.metric == "precision-recall":
            if len(self.label_space) != 2 or self.positive_label not in self.label_space:
                raise TaskError("precision-recall needs a binary label_space and a positive_label in it")
        for split, examples in self.splits.items():
            seen: set[str] = set()
            for ex in examples:
                if ex.id in seen:
                    raise TaskError(f"duplicate id {ex.id!r} in split {split!r}")
                seen.add(ex.id)
                self._check_example(ex)

    def _check_example(self, ex: Example) -> None:
        if ex.lang not in self.languages:
            raise TaskError(f"{ex.id}: language {ex.lang!r} not declared by task {self.name!r}")
        if self.kind == "classification":
            if ex.label is None:
                raise TaskError(f"{ex.id}: classification example needs a label")
            if ex.label not in self.label_space:
                raise TaskError(f"{ex.id}: label {ex.label!r} not in label_space")
        elif self.kind in ("multiple-choice", "cloze-probe"):
            if ex.choices is None:
                raise TaskError(f"{ex.id}: {self.kind} example needs choices")
        elif ex.reference is None:
            raise TaskError(f"{ex.id}: generation example needs a reference")

    def examples(self, split: str, lang: str | None = None) -> list[Example]:
        if split not in self.splits:
            raise TaskError(f"task {self.name!r} has no split {split!r}")
        return [ex for ex in self.splits[split] if lang is None or ex.lang == lang]

    def candidates(self, example: Example) -> tuple[str, ...]:
        if self.kind == "classification":
            return self.label_space
        if example.choices is None:
            raise TaskError(f"{example.id}: {self.kind} examples have no closed candidate set")
        return example.choices

    def gold_index(self, example: Example) -> int:
        if self.kind == "classification":
            return self.label_space.index(example.label)
        return example.answer_index

    def resource_level(self, lang: str) -> str:
        return self.languages[lang].resource_level if lang in self.languages else "unknown"


def parse_example(rec: Mapping[str, Any], where: str = "<record>") -> Example:
    if not isinstance(rec, Mapping):
        raise TaskError(f"{where}: record is not a JSON object")
    try:
        ex_id = rec["id"]
        lang = rec["lang"]
        fields = rec["fields"]
    except KeyError as e:
        raise TaskError(f"{where}: malformed record, missing {e.args[0]!r}") from None
    if not isinstance(ex_id, str) or not isinstance(lang, str) or not isinstance(fields, Mapping):
        raise TaskError(f"{where}: malformed record (id/lang must be strings, fields an object)")
    if not all(isinstance(v, str) for v in fields.values()):
        raise TaskError(f"{where}: field values must be strings")
    payloads = [k for k in ("label", "choices", "reference") if k in rec]
    if len(payloads) != 1:
        raise TaskError(f"{where}: record needs exactly one of label/choices/reference")
    choices = answer = None
    if "choices" in rec:
        if not isinstance(rec["choices"], list) or not all(isinstance(c, str) for c in rec["choices"]):
            raise TaskError(f"{where}: choices must be a list of strings")
        if not isinstance(rec.get("answer"), int) or isinstance(rec.get("answer"), bool):
            raise TaskError(f"{where}: choices need an integer answer index")
        choices = tuple(nfc(c) for c in rec["choices"])
        answer = rec["answer"]
    return Example(
        id=nfc(ex_id),
        lang=lang,
        fields={nfc(k): nfc(v) for k, v in fields.items()},
        label=nfc(rec["label"]) if "label" in rec else None,
        choices=choices,
        answer_index=answer,
        reference=nfc(rec["reference"]) if "reference" in rec else None,
        selector=rec.get("selector"),
        meta=dict(rec.get("meta", {})),
    )


def read_jsonl(path: str | Path) -> list[Example]:
    path = Path(path)
    if not path.is_file():
        raise TaskError(f"missing file {path}")
    out = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TaskError(f"{where}: malformed record ({e.msg})") from None
            out.append(parse_example(rec, where))
    return out


def write_jsonl(examples: Iterable[Example], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(canonical_json(ex.to_record()) + "\n")


def load_task(path: str | Path) -> Task:
    """Load and validate a task manifest plus its JSONL splits."""
    path = Path(path)
    if not path.is_file():
        raise TaskError(f"missing file {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise TaskError(f"{path}: malformed manifest ({e.msg})") from None
    for key in ("name", "kind", "languages", "splits"):
        if key not in manifest:
            raise TaskError(f"{path}: manifest missing {key!r}")

    languages = {}
    for entry in manifest["languages"]:
        if isinstance(entry, str):
            entry = {"code": entry}
        lc = LanguageCode(entry["code"], entry.get("resource_level", "unknown"))
        languages[lc.code] = lc

    splits = {}
    for split, rel in manifest["splits"].items():
        splits[split] = tuple(read_jsonl(path.parent / rel))

    kind = manifest["kind"]
    return Task(
        name=manifest["name"],
        kind=kind,
        metric=manifest.get("metric", DEFAULT_METRIC.get(kind, "accuracy")),
        languages=languages,
        splits=splits,
        label_space=tuple(nfc(l) for l in manifest.get("label_space", ())),
        demo_split_policy=manifest.get("demo_split_policy", "auto"),
        positive_label=manifest.get("positive_label"),
    )


def demo_split(task: Task, eval_split: str) -> str:
    """Name of the split that supplies demonstrations when evaluating ``eval_split``."""
    if eval_split not in task.splits:
        raise TaskError(f"task {task.name!r} has no split {eval_split!r}")
    policy = task.demo_split_policy
    if policy != "auto":
        if policy not in task.splits:
            raise TaskError(f"demo_split_policy names unknown split {policy!r}")
        return policy
    if "train" in task.splits:
        return "train"
    if eval_split == "test" and "dev" in task.splits:
        return "dev"
    if eval_split == "dev" and "test" in task.splits:
        return "test"
    raise TaskError(f"no admissible demonstration split for {task.name!r}/{eval_split}")


def demo_pool(task: Task, eval_split: str, lang: str) -> list[Example]:
    """Demonstration candidates in ``lang``.

    Per-example exclusion of the evaluated id happens at sampling time, so a
    pool drawn from the evaluated split itself is legal.
    """
    pool = task.examples(demo_split(task, eval_split), lang)
    if not pool:
        raise TaskError(f"empty demonstration pool for {task.name!r}/{lang}")
    return pool


def downsample_candidates(example: Example, n_keep: int, rng_seed: int) -> Example:
    """Keep the ground truth plus ``n_keep - 1`` uniformly drawn distractors."""
    if n_keep < 2:
        raise TaskError("n_keep must be at least 2")
    if example.choices is None:
        raise TaskError(f"{example.id}: no candidates to down-sample")
    if len(example.choices) < n_keep:
        raise TaskError(f"{example.id}: only {len(example.choices)} candidates, need {n_keep}")
    rng = random.Random(rng_seed)
    others = [i for i in range(len(example.choices)) if i != example.answer_index]
    kept = [example.answer_index] + rng.sample(others, n_keep - 1)
    rng.shuffle(kept)
    return replace(
        example,
        choices=tuple(example.choices[i] for i in kept),
        answer_index=kept.index(example.answer_index),
    )


def stable_seed(*parts: Any) -> int:
    """64-bit seed derived from a digest of the parts; independent of PYTHONHASHSEED."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

