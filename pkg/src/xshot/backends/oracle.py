"""Exactly computable byte-level language models used as test oracles.

All three models tokenize text into its UTF-8 bytes (vocabulary of 256) and
define position 0 as conditioned on the empty context.
"""

from __future__ import annotations

import hashlib
import math
import re
from abc import abstractmethod
from collections import Counter, defaultdict
from pathlib import Path

from xshot.backends.base import Backend, GenerationParams, LmDescriptor, ScoredTokens, cut_at_stop
from xshot.errors import BackendError, ModelFormatError

BYTE_VOCAB = 256
DEFAULT_CONTEXT_LENGTH = 2048
_HEADER_RE = re.compile(r"NGRAM v1 order=(\d+) addk=(\S+) vocab=byte")


class ByteBackend(Backend):
    def tokenize(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    @staticmethod
    def detokenize(tokens) -> str:
        return bytes(tokens).decode("utf-8", errors="replace")

    @abstractmethod
    def _logprobs(self, data: bytes, start: int) -> list[float]:
        """Natural-log probabilities of ``data[i]`` given ``data[:i]`` for ``i >= start``."""

    @abstractmethod
    def next_distribution(self, history: bytes) -> list[float]:
        """P(b | history) for all 256 byte values."""

    def conditional_score(self, context: str, continuation: str) -> ScoredTokens:
        ctx = context.encode("utf-8")
        data = ctx + continuation.encode("utf-8")
        self.check_length(len(data))
        return ScoredTokens(tuple(data[len(ctx):]), tuple(self._logprobs(data, len(ctx))))

    def greedy_generate(self, context: str, params: GenerationParams) -> str:
        data = bytearray(context.encode("utf-8"))
        self.check_length(len(data) + params.max_new_tokens)
        out = bytearray()
        for _ in range(params.max_new_tokens):
            dist = self.next_distribution(bytes(data))
            # max() keeps the first maximum, so ties go to the lowest byte value
            best = max(range(BYTE_VOCAB), key=dist.__getitem__)
            data.append(best)
            out.append(best)
            text, stopped = cut_at_stop(self.detokenize(out), params.stop_sequences)
            if stopped:
                return text
        return self.detokenize(out)


class UniformBackend(ByteBackend):
    """Every token has probability 1/V."""

    def __init__(self, vocab_size: int = BYTE_VOCAB, context_length: int = DEFAULT_CONTEXT_LENGTH):
        if vocab_size < BYTE_VOCAB:
            raise BackendError("byte tokenization needs vocab_size >= 256")
        self.descriptor = LmDescriptor(f"uniform-v{vocab_size}", vocab_size, context_length)
        self._lp = -math.log(vocab_size)

    def _logprobs(self, data, start):
        return [self._lp] * (len(data) - start)

    def next_distribution(self, history):
        return [1.0 / self.descriptor.vocab_size] * BYTE_VOCAB


def _backoff_context(totals: dict[bytes, int], data: bytes, i: int, max_ctx: int) -> bytes:
    """Longest suffix of ``data[:i]`` (up to ``max_ctx`` bytes) with a non-zero count."""
    for m in range(min(max_ctx, i), 0, -1):
        ctx = data[i - m : i]
        if totals.get(ctx):
            return ctx
    return b""


class NGramModel(ByteBackend):
    """Add-k smoothed byte n-gram with shortest-context backoff.

    P(b | ctx) = (count(ctx b) + k) / (count(ctx) + k V), where ctx is the
    longest suffix of the history (at most ``order - 1`` bytes) seen in the
    training corpus.
    """

    def __init__(self, order: int, add_k: float, counts: dict[bytes, dict[int, int]],
                 context_length: int = DEFAULT_CONTEXT_LENGTH):
        if order < 1:
            raise BackendError("order must be at least 1")
        if not add_k > 0:
            raise BackendError("add_k must be positive")
        self.order = order
        self.add_k = float(add_k)
        self.counts = counts
        self.totals = {ctx: sum(nxt.values()) for ctx, nxt in counts.items()}
        if not self.totals.get(b""):
            raise BackendError("model has no unigram counts")
        digest = hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:12]
        self.descriptor = LmDescriptor(f"ngram-o{order}-{digest}", BYTE_VOCAB, context_length)

    @classmethod
    def from_bytes(cls, corpus: bytes, order: int, add_k: float, **kw) -> "NGramModel":
        if not corpus:
            raise BackendError("empty corpus")
        if order < 1:
            raise BackendError("order must be at least 1")
        counts: dict[bytes, Counter] = defaultdict(Counter)
        for i, b in enumerate(corpus):
            for m in range(min(order - 1, i) + 1):
                counts[corpus[i - m : i]][b] += 1
        return cls(order, add_k, {ctx: dict(c) for ctx, c in counts.items()}, **kw)

    def prob(self, history: bytes, byte: int) -> float:
        return self.prob_at(history, len(history), byte)

    def prob_at(self, data: bytes, i: int, byte: int) -> float:
        """P(byte | data[:i]) without slicing ``data``."""
        ctx = _backoff_context(self.totals, data, i, self.order - 1)
        return (self.counts[ctx].get(byte, 0) + self.add_k) / (self.totals[ctx] + self.add_k * BYTE_VOCAB)

    def _logprobs(self, data, start):
        k, kv, out = self.add_k, self.add_k * BYTE_VOCAB, []
        for i in range(start, len(data)):
            ctx = _backoff_context(self.totals, data, i, self.order - 1)
            out.append(math.log((self.counts[ctx].get(data[i], 0) + k) / (self.totals[ctx] + kv)))
        return out

    def next_distribution(self, history):
        ctx = _backoff_context(self.totals, history, len(history), self.order - 1)
        nxt, denom = self.counts[ctx], self.totals[ctx] + self.add_k * BYTE_VOCAB
        return [(nxt.get(b, 0) + self.add_k) / denom for b in range(BYTE_VOCAB)]

    def dumps(self) -> str:
        lines = [f"NGRAM v1 order={self.order} addk={self.add_k!r} vocab=byte"]
        for ctx in sorted(self.counts):
            nxt = self.counts[ctx]
            lines.extend(f"{ctx.hex()}\t{b:02x}\t{nxt[b]}" for b in sorted(nxt))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")

    @classmethod
    def loads(cls, text: str, **kw) -> "NGramModel":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise ModelFormatError("empty model file")
        m = _HEADER_RE.fullmatch(lines[0])
        if not m:
            raise ModelFormatError(f"bad header {lines[0]!r}")
        order = int(m.group(1))
        try:
            add_k = float(m.group(2))
        except ValueError:
            raise ModelFormatError(f"bad addk {m.group(2)!r}") from None
        counts: dict[bytes, dict[int, int]] = {}
        prev = None
        for lineno, line in enumerate(lines[1:], 2):
            parts = line.split("\t")
            try:
                ctx_hex, b_hex, n = parts
                if len(b_hex) != 2 or ctx_hex != ctx_hex.lower() or b_hex != b_hex.lower():
                    raise ValueError
                ctx, b, n = bytes.fromhex(ctx_hex), int(b_hex, 16), int(n)
            except ValueError:
                raise ModelFormatError(f"line {lineno}: malformed entry {line!r}") from None
            if n <= 0 or len(ctx) >= order:
                raise ModelFormatError(f"line {lineno}: invalid count or context length")
            key = (ctx_hex, b_hex)
            if prev is not None and key <= prev:
                raise ModelFormatError(f"line {lineno}: entries not sorted")
            prev = key
            counts.setdefault(ctx, {})[b] = n
        return cls(order, add_k, counts, **kw)

    @classmethod
    def load(cls, path: str | Path, **kw) -> "NGramModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"), **kw)


def train_ngram(corpus: str | Path, order: int, add_k: float, **kw) -> NGramModel:
    """Count byte n-grams of every order up to ``order`` in a UTF-8 corpus file."""
    data = Path(corpus).read_bytes()
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        raise BackendError(f"{corpus}: corpus is not valid UTF-8") from None
    return NGramModel.from_bytes(data, order, add_k, **kw)


class ContextCacheBackend(ByteBackend):
    """Corpus n-gram interpolated with an n-gram counted over the current sequence.

    P(b | h) = lam * P_context(b | h) + (1 - lam) * P_corpus(b | h), where
    P_context uses the same add-k/backoff rule over counts of ``h`` itself
    (uniform while ``h`` is empty). Repeated demonstration text therefore
    raises the probability of what followed it before, which makes label
    imbalance in the demonstrations visible in predictions.
    """

    def __init__(self, corpus_model: NGramModel, lam: float = 0.5, order: int | None = None,
                 context_length: int | None = None):
        if not 0.0 <= lam <= 1.0:
            raise BackendError("lam must lie in [0, 1]")
        self.base = corpus_model
        self.lam = lam
        self.order = order or corpus_model.order
        n_ctx = context_length or corpus_model.descriptor.context_length
        self.descriptor = LmDescriptor(
            f"ctxcache-l{lam!r}-o{self.order}-{corpus_model.id}", BYTE_VOCAB, n_ctx
        )

    def _cache_prob(self, counts, totals, data, i, b) -> float:
        ctx = _backoff_context(totals, data, i, self.order - 1)
        k = self.base.add_k
        return (counts[ctx].get(b, 0) + k) / (totals.get(ctx, 0) + k * BYTE_VOCAB)

    @staticmethod
    def _add(counts, totals, data: bytes, i: int, order: int) -> None:
        b = data[i]
        for m in range(min(order - 1, i) + 1):
            ctx = data[i - m : i]
            counts[ctx][b] += 1
            totals[ctx] += 1

    def _logprobs(self, data, start):
        counts: dict[bytes, Counter] = defaultdict(Counter)
        totals: Counter[bytes] = Counter()
        lam, out = self.lam, []
        for i in range(len(data)):
            if i >= start:
                p = lam * self._cache_prob(counts, totals, data, i, data[i])
                p += (1 - lam) * self.base.prob_at(data, i, data[i])
                out.append(math.log(p))
            self._add(counts, totals, data, i, self.order)
        return out

    def next_distribution(self, history):
        counts: dict[bytes, Counter] = defaultdict(Counter)
        totals: Counter[bytes] = Counter()
        for i in range(len(history)):
            self._add(counts, totals, history, i, self.order)
        ctx = _backoff_context(totals, history, len(history), self.order - 1)
        k = self.base.add_k
        denom = totals.get(ctx, 0) + k * BYTE_VOCAB
        base = self.base.next_distribution(history)
        return [self.lam * (counts[ctx].get(b, 0) + k) / denom + (1 - self.lam) * base[b]
                for b in range(BYTE_VOCAB)]
