"""Cloze templates, verbalizers and cross-lingual template selection.

Pattern syntax:

* ``{field}`` is replaced by the example's field text;
* ``{field:before}`` / ``{field:after}`` take the text before / after the
  first ``_`` blank of the field (Winograd-style sentences);
* ``[Mask]`` marks where the verbalized candidate goes, exactly once;
* ``{{``, ``}}`` and ``[[Mask]]`` produce literal ``{``, ``}`` and ``[Mask]``.

Patterns are inserted verbatim; no spacing is added around the mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from xshot.errors import TemplateError
from xshot.tasks import Example, LanguageCode, Task, nfc

MASK = "[Mask]"
BLANK = "_"
DEFAULT_SELECTOR = "*"
_MODIFIERS = ("before", "after")

# segments: ("text", s) | ("field", name, modifier-or-None) | ("mask",)
Segment = tuple


@dataclass(frozen=True)
class Verbalizer:
    kind: str = "identity"
    mapping: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("identity", "map"):
            raise TemplateError(f"unknown verbalizer kind {self.kind!r}")
        if self.kind == "map":
            if not self.mapping:
                raise TemplateError("map verbalizer needs a non-empty mapping")
            if len(set(self.mapping.values())) != len(self.mapping):
                raise TemplateError("verbalizer is not injective")

    @classmethod
    def from_descriptor(cls, desc: str | Mapping[str, str] | None) -> "Verbalizer":
        if desc is None or desc == "identity":
            return cls()
        if isinstance(desc, Mapping):
            return cls("map", {nfc(k): nfc(v) for k, v in desc.items()})
        raise TemplateError(f"bad verbalizer descriptor {desc!r}")

    def __call__(self, candidate: str) -> str:
        if self.kind == "identity":
            return candidate
        try:
            return self.mapping[candidate]
        except KeyError:
            raise TemplateError(f"candidate {candidate!r} not in verbalizer domain") from None

    def check_covers(self, labels: Iterable[str]) -> None:
        if self.kind == "map":
            missing = [l for l in labels if l not in self.mapping]
            if missing:
                raise TemplateError(f"verbalizer does not cover labels {missing}")


def _parse_pattern(pattern: str) -> tuple[Segment, ...]:
    if not pattern:
        raise TemplateError("empty pattern")
    segs: list[Segment] = []
    buf: list[str] = []

    def flush():
        if buf:
            segs.append(("text", "".join(buf)))
            buf.clear()

    i, n = 0, len(pattern)
    while i < n:
        if pattern.startswith("{{", i):
            buf.append("{")
            i += 2
        elif pattern.startswith("}}", i):
            buf.append("}")
            i += 2
        elif pattern[i] == "{":
            close = pattern.find("}", i + 1)
            inner = pattern[i + 1 : close] if close != -1 else ""
            if close == -1 or "{" in inner:
                raise TemplateError(f"unbalanced braces in {pattern!r}")
            name, _, mod = inner.partition(":")
            if not name or (mod and mod not in _MODIFIERS):
                raise TemplateError(f"bad placeholder {{{inner}}} in {pattern!r}")
            flush()
            segs.append(("field", name, mod or None))
            i = close + 1
        elif pattern[i] == "}":
            raise TemplateError(f"unbalanced braces in {pattern!r}")
        elif pattern.startswith("[[Mask]]", i):
            buf.append(MASK)
            i += len("[[Mask]]")
        elif pattern.startswith(MASK, i):
            flush()
            segs.append(("mask",))
            i += len(MASK)
        else:
            buf.append(pattern[i])
            i += 1
    flush()
    n_masks = sum(1 for s in segs if s[0] == "mask")
    if n_masks != 1:
        raise TemplateError(f"pattern must contain exactly one {MASK}, found {n_masks}: {pattern!r}")
    return tuple(segs)


@dataclass(frozen=True)
class PromptTemplate:
    task: str
    lang: str
    patterns: Mapping[str, str]
    verbalizer: Verbalizer = field(default_factory=Verbalizer)
    segments: Mapping[str, tuple[Segment, ...]] = field(default_factory=dict, compare=False, repr=False)

    @property
    def fields(self) -> frozenset[str]:
        return frozenset(s[1] for segs in self.segments.values() for s in segs if s[0] == "field")

    def segments_for(self, selector: str | None) -> tuple[Segment, ...]:
        if selector is not None and selector in self.segments:
            return self.segments[selector]
        if DEFAULT_SELECTOR in self.segments:
            return self.segments[DEFAULT_SELECTOR]
        raise TemplateError(f"unknown selector {selector!r} for template {self.task}/{self.lang}")


def parse_template(descriptor: Mapping[str, Any]) -> PromptTemplate:
    """Build a template from its JSON descriptor.

    >>> t = parse_template({"task": "xnli", "language": "en",
    ...     "patterns": {"*": "{sentence1}, right? [Mask], {sentence2}"}})
    >>> sorted(t.fields)
    ['sentence1', 'sentence2']
    """
    try:
        task = descriptor["task"]
        lang = descriptor["language"]
        patterns = descriptor["patterns"]
    except KeyError as e:
        raise TemplateError(f"template descriptor missing {e.args[0]!r}") from None
    LanguageCode(lang)
    if isinstance(patterns, str):
        patterns = {DEFAULT_SELECTOR: patterns}
    if not patterns:
        raise TemplateError("template has no patterns")
    patterns = {sel: nfc(p) for sel, p in patterns.items()}
    return PromptTemplate(
        task=task,
        lang=lang,
        patterns=patterns,
        verbalizer=Verbalizer.from_descriptor(descriptor.get("verbalizer")),
        segments={sel: _parse_pattern(p) for sel, p in patterns.items()},
    )


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    if not path.is_file():
        raise TemplateError(f"missing template file {path}")
    try:
        return parse_template(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise TemplateError(f"{path}: malformed template ({e.msg})") from None


def load_templates(paths: str | Path | Iterable[str | Path]) -> dict[str, PromptTemplate]:
    """Load template descriptors from a directory (``*.json``) or a list of files, keyed by language."""
    if isinstance(paths, (str, Path)):
        p = Path(paths)
        paths = sorted(p.glob("*.json")) if p.is_dir() else [p]
    out: dict[str, PromptTemplate] = {}
    for p in paths:
        t = load_template(p)
        if t.lang in out:
            raise TemplateError(f"two templates for language {t.lang!r}")
        out[t.lang] = t
    if not out:
        raise TemplateError("no templates found")
    return out


def bind(template: PromptTemplate, task: Task) -> None:
    """Check that ``template`` can render every example of ``task``."""
    if task.kind == "classification":
        template.verbalizer.check_covers(task.label_space)
    for examples in task.splits.values():
        for ex in examples:
            for seg in template.segments_for(ex.selector):
                if seg[0] == "field" and seg[1] not in ex.fields:
                    raise TemplateError(f"{ex.id}: template field {seg[1]!r} missing from example")


@dataclass(frozen=True)
class InstantiatedPrompt:
    text: str
    mask_span: tuple[int, int]
    template_lang: str
    example_id: str

    @property
    def context(self) -> str:
        return self.text[: self.mask_span[0]]

    @property
    def completion(self) -> str:
        return self.text[self.mask_span[0] : self.mask_span[1]]

    def unfilled(self) -> str:
        """The template text with the mask put back."""
        s, e = self.mask_span
        return self.text[:s] + MASK + self.text[e:]

    def shifted(self, prefix: str) -> "InstantiatedPrompt":
        s, e = self.mask_span
        return InstantiatedPrompt(prefix + self.text, (s + len(prefix), e + len(prefix)),
                                  self.template_lang, self.example_id)


def _field_text(example: Example, name: str, modifier: str | None) -> str:
    try:
        value = example.fields[name]
    except KeyError:
        raise TemplateError(f"{example.id}: missing field {name!r}") from None
    if modifier is None:
        return value
    if BLANK not in value:
        raise TemplateError(f"{example.id}: field {name!r} has no {BLANK!r} blank")
    before, _, after = value.partition(BLANK)
    return before if modifier == "before" else after


def instantiate(
    template: PromptTemplate,
    example: Example,
    candidate: str,
    verbalizer: Verbalizer | None = None,
) -> InstantiatedPrompt:
    """Render the template for ``example`` with ``v(candidate)`` in the mask slot."""
    verbalizer = verbalizer or template.verbalizer
    filler = verbalizer(candidate)
    parts: list[str] = []
    pos = 0
    span = (0, 0)
    for seg in template.segments_for(example.selector):
        if seg[0] == "text":
            piece = seg[1]
        elif seg[0] == "field":
            piece = _field_text(example, seg[1], seg[2])
        else:
            piece = filler
            span = (pos, pos + len(filler))
        parts.append(piece)
        pos += len(piece)
    return InstantiatedPrompt("".join(parts), span, template.lang, example.id)


def instantiate_gold(template: PromptTemplate, example: Example) -> InstantiatedPrompt:
    """P(x, y) with the example's gold label or answer, as used for demonstrations."""
    return instantiate(template, example, example.gold)


def render_generation_query(template: PromptTemplate, example: Example) -> str:
    """Prompt text up to the (terminal) mask, from which generation continues."""
    segs = template.segments_for(example.selector)
    at = next(i for i, s in enumerate(segs) if s[0] == "mask")
    if any(s[0] != "text" or s[1].strip() for s in segs[at + 1 :]):
        raise TemplateError("generation requires terminal mask")
    return "".join(s[1] if s[0] == "text" else _field_text(example, s[1], s[2]) for s in segs[:at])


@dataclass(frozen=True)
class TemplateMode:
    mode: str = "same-language"
    source_lang: str | None = None

    def __post_init__(self):
        if self.mode not in ("same-language", "source-language"):
            raise TemplateError(f"unknown template mode {self.mode!r}")
        if (self.source_lang is not None) != (self.mode == "source-language"):
            raise TemplateError("source_lang must be set exactly for source-language mode")

    @classmethod
    def source(cls, lang: str) -> "TemplateMode":
        return cls("source-language", lang)


def select_template(
    mode: TemplateMode, templates: Mapping[str, PromptTemplate], example_lang: str
) -> PromptTemplate:
    lang = mode.source_lang if mode.mode == "source-language" else example_lang
    try:
        return templates[lang]
    except KeyError:
        raise TemplateError(f"no template for language {lang!r}") from None
