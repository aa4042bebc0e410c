"""Candidate scoring functions and the argmax selection rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from xshot.backends.base import Backend, ScoredTokens
from xshot.errors import ScoringError
from xshot.templates import InstantiatedPrompt

KINDS = (
    "sum-logprob",
    "mean-logprob",
    "mean-skip-common-prefix",
    "common-suffix-logprob",
    "uncond-normalized",
    "char-normalized",
)
SHORT_NAMES = {
    "sum": "sum-logprob",
    "mean": "mean-logprob",
    "mean-skip-prefix": "mean-skip-common-prefix",
    "suffix": "common-suffix-logprob",
    "uncond": "uncond-normalized",
    "char": "char-normalized",
}
DEFAULT_ANSWER_CONTEXT = "Answer: "
DEFAULT_CONTENT_FREE = ("N/A", "", "[MASK]")


@dataclass(frozen=True)
class ScoringFunction:
    kind: str = "mean-skip-common-prefix"
    answer_context: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScoringError(f"unknown scoring function {self.kind!r}")
        if self.kind == "uncond-normalized":
            if self.answer_context is None:
                object.__setattr__(self, "answer_context", DEFAULT_ANSWER_CONTEXT)
        elif self.answer_context is not None:
            raise ScoringError("answer_context only applies to uncond-normalized")

    @classmethod
    def from_name(cls, name: str, answer_context: str | None = None) -> "ScoringFunction":
        return cls(SHORT_NAMES.get(name, name), answer_context)


@dataclass(frozen=True)
class CalibrationSpec:
    enabled: bool = False
    content_free_inputs: tuple[str, ...] = DEFAULT_CONTENT_FREE

    def __post_init__(self):
        if self.enabled and not self.content_free_inputs:
            raise ScoringError("calibration needs at least one content-free input")


@dataclass(frozen=True)
class CandidateScore:
    candidate_index: int
    value: float
    token_count: int
    char_count: int

    def __post_init__(self):
        if self.token_count <= 0:
            raise ScoringError(f"candidate {self.candidate_index}: empty scored region")


def common_token_prefix(sequences: Sequence[Sequence[int]]) -> int:
    if len(sequences) < 2:
        raise ScoringError("common prefix needs at least two sequences")
    n = 0
    for column in zip(*sequences):
        if any(t != column[0] for t in column):
            break
        n += 1
    return n


def common_token_suffix(sequences: Sequence[Sequence[int]]) -> int:
    if len(sequences) < 2:
        raise ScoringError("common suffix needs at least two sequences")
    return common_token_prefix([list(reversed(s)) for s in sequences])


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def score_candidates(
    backend: Backend, prompts: Sequence[InstantiatedPrompt], fn: ScoringFunction
) -> list[CandidateScore]:
    """Score one instantiated prompt per candidate under ``fn``.

    Whole-sequence kinds score ``prompt.text``; ``uncond-normalized`` and
    ``char-normalized`` score only the mask span given the text before it.
    """
    if len(prompts) < 2:
        raise ScoringError("need at least two candidates")
    kind = fn.kind

    if kind in ("uncond-normalized", "char-normalized"):
        out = []
        for i, p in enumerate(prompts):
            completion = p.completion
            if not completion:
                raise ScoringError(f"candidate {i}: empty mask span")
            cond = backend.conditional_score(p.context, completion)
            if kind == "uncond-normalized":
                uncond = backend.conditional_score(fn.answer_context, completion)
                value = cond.total() - uncond.total()
            else:
                value = cond.total() / len(completion)
            out.append(CandidateScore(i, value, len(cond), len(completion)))
        return out

    scored: list[ScoredTokens] = [backend.score(p.text) for p in prompts]
    if kind == "sum-logprob":
        return [CandidateScore(i, st.total(), len(st), len(p.completion))
                for i, (p, st) in enumerate(zip(prompts, scored))]
    if kind == "mean-logprob":
        return [CandidateScore(i, st.total() / len(st) if len(st) else 0.0, len(st), len(p.completion))
                for i, (p, st) in enumerate(zip(prompts, scored))]

    token_seqs = [st.tokens for st in scored]
    if kind == "mean-skip-common-prefix":
        skip = common_token_prefix(token_seqs)
        out = []
        for i, (p, st) in enumerate(zip(prompts, scored)):
            region = st.logprobs[skip:]
            if not region:
                raise ScoringError(f"candidate {i}: no tokens after the common prefix")
            out.append(CandidateScore(i, _mean(region), len(region), len(p.completion)))
        return out

    # common-suffix-logprob
    keep = common_token_suffix(token_seqs)
    if keep == 0:
        raise ScoringError("candidates share no common suffix")
    return [CandidateScore(i, math.fsum(st.logprobs[-keep:]), keep, len(p.completion))
            for i, (p, st) in enumerate(zip(prompts, scored))]


def select(scores: Sequence[CandidateScore | float]) -> int:
    """Index of the highest score; exact ties go to the lowest index."""
    if not scores:
        raise ScoringError("nothing to select from")
    best_i, best_v = -1, -math.inf
    for pos, s in enumerate(scores):
        v = s.value if isinstance(s, CandidateScore) else float(s)
        if math.isnan(v):
            raise ScoringError("NaN score")
        if best_i < 0 or v > best_v:
            best_i, best_v = pos, v
    s = scores[best_i]
    return s.candidate_index if isinstance(s, CandidateScore) else best_i


def normalize(values: Sequence[float]) -> list[float]:
    """Softmax of per-candidate log scores: probabilities over the candidate set."""
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    z = math.fsum(exps)
    return [e / z for e in exps]


def average_probabilities(rows: Sequence[Sequence[float]]) -> list[float]:
    if not rows:
        raise ScoringError("no content-free scores to average")
    return [math.fsum(col) / len(rows) for col in zip(*rows)]


def calibrate(raw: Sequence[float], spec: CalibrationSpec, cf_scores: Sequence[float]) -> list[float]:
    """Diagonal reweighting of candidate probabilities by content-free estimates."""
    if not spec.enabled:
        return list(raw)
    if len(raw) != len(cf_scores):
        raise ScoringError("raw and content-free scores differ in arity")
    if any(not c > 0 for c in cf_scores):
        raise ScoringError("zero content-free probability")
    return [r / c for r, c in zip(raw, cf_scores)]
