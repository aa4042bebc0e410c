"""Fixture builders and independent oracles shared by the test modules.

The oracles here never call into ``xshot``'s scoring code: n-gram
probabilities are recounted by scanning the raw corpus, and candidate
selection is redone from those probabilities.
"""

from __future__ import annotations

import json
import math
import os
import random
from functools import lru_cache
from pathlib import Path

XNLI_EN = "{sentence1}, right? [Mask], {sentence2}"
XNLI_VERBALIZER = {"entailment": "Yes", "neutral": "Also", "contradiction": "No"}


def write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def write_task(root: Path, name: str, kind: str, splits: dict[str, list[dict]], languages,
               **manifest) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for split, recs in splits.items():
        write_jsonl(root / f"{name}.{split}.jsonl", recs)
    doc = {
        "name": name,
        "kind": kind,
        "languages": [l if isinstance(l, dict) else {"code": l} for l in languages],
        "splits": {split: f"{name}.{split}.jsonl" for split in splits},
        **manifest,
    }
    path = root / f"{name}.task.json"
    path.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
    return path


def write_template(root: Path, task: str, lang: str, patterns, verbalizer="identity") -> Path:
    root.mkdir(parents=True, exist_ok=True)
    if isinstance(patterns, str):
        patterns = {"*": patterns}
    path = root / f"{task}.{lang}.json"
    path.write_text(json.dumps({"task": task, "language": lang, "patterns": patterns,
                                "verbalizer": verbalizer}, ensure_ascii=False), encoding="utf-8")
    return path


def count_overlapping(haystack: bytes, needle: bytes) -> int:
    n, start = 0, 0
    while True:
        i = haystack.find(needle, start)
        if i == -1:
            return n
        n += 1
        start = i + 1


class BruteNGram:
    """Add-k byte n-gram recomputed from raw corpus scans (no count tables)."""

    def __init__(self, corpus: bytes, order: int, add_k: float):
        self.corpus = corpus
        self.order = order
        self.k = add_k
        self._prob = lru_cache(maxsize=None)(self._prob_uncached)

    def ctx_count(self, ctx: bytes) -> int:
        # occurrences of ctx that are followed by at least one byte
        return count_overlapping(self.corpus[:-1], ctx) if ctx else len(self.corpus)

    def _prob_uncached(self, history: bytes, b: int) -> float:
        ctx = history[max(0, len(history) - (self.order - 1)):] if self.order > 1 else b""
        while ctx and self.ctx_count(ctx) == 0:
            ctx = ctx[1:]
        num = count_overlapping(self.corpus, ctx + bytes([b]))
        return (num + self.k) / (self.ctx_count(ctx) + self.k * 256)

    def logprobs(self, text: str) -> list[float]:
        data = text.encode("utf-8")
        return [math.log(self._prob(data[max(0, i - self.order + 1):i], data[i])) for i in range(len(data))]


def brute_select_skip_prefix(lm: BruteNGram, candidate_texts: list[str]) -> int:
    """Argmax of mean logprob after the shared byte prefix; ties to the lowest index."""
    encoded = [t.encode("utf-8") for t in candidate_texts]
    prefix = len(os.path.commonprefix(encoded))
    best, best_v = 0, None
    for i, t in enumerate(candidate_texts):
        lps = lm.logprobs(t)[prefix:]
        v = sum(lps) / len(lps)
        if best_v is None or v > best_v:
            best, best_v = i, v
    return best


XNLI_LABELS = ["entailment", "neutral", "contradiction"]
XNLI_TEMPLATES = {
    "en": (XNLI_EN, XNLI_VERBALIZER),
    "zh": ("{sentence1}，对吗？[Mask]，{sentence2}", {"entailment": "是的", "neutral": "而且", "contradiction": "不是"}),
    "sw": ("{sentence1}, sivyo? [Mask], {sentence2}", {"entailment": "Ndio", "neutral": "Pia", "contradiction": "Hapana"}),
}
_WORDS = {
    "en": "man woman dog cat runs sleeps eats reads house park".split(),
    "zh": "男人 女人 狗 猫 跑 睡觉 吃 读 房子 公园".split(),
    "sw": "mtu mwanamke mbwa paka anakimbia analala anakula anasoma nyumba bustani".split(),
}


def xnli_records(lang: str, split: str, n: int, seed: int = 0) -> list[dict]:
    rng = random.Random(f"{lang}:{split}:{seed}")
    words = _WORDS[lang]
    sep = "" if lang == "zh" else " "
    out = []
    for i in range(n):
        out.append({
            "id": f"{lang}-{split}-{i}",
            "lang": lang,
            "fields": {"sentence1": sep.join(rng.choices(words, k=4)) + f"{sep}{i}",
                       "sentence2": sep.join(rng.choices(words, k=3))},
            "label": XNLI_LABELS[i % 3],
        })
    return out


def make_xnli(root: Path, langs=("en", "zh", "sw"), n_dev=9, n_test=6, levels=None) -> tuple[Path, Path]:
    """XNLI-shaped fixture: dev+test splits (demos come from dev) and one template per language."""
    levels = levels or {"en": "high", "zh": "high", "sw": "low"}
    splits = {"dev": [], "test": []}
    for lang in langs:
        splits["dev"] += xnli_records(lang, "dev", n_dev)
        splits["test"] += xnli_records(lang, "test", n_test)
    task = write_task(root / "task", "xnli", "classification", splits,
                      [{"code": l, "resource_level": levels.get(l, "unknown")} for l in langs],
                      label_space=XNLI_LABELS)
    for lang in langs:
        pattern, verb = XNLI_TEMPLATES[lang]
        write_template(root / "templates", "xnli", lang, pattern, verb)
    return task, root / "templates"
