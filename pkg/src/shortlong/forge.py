"""Haystack synthesis and preference-pair curation.

Pipeline per source: embed the supporting documents among randomly drawn
distractors at two target lengths (short and long), sample candidate responses
from a pluggable generator conditioned on the short context, split them by
substring exact match against the gold answer, and draw one chosen and one
rejected response. Sources where every candidate lands on one side are
discarded. The whole pipeline is a pure function of (inputs, seed).
"""

from __future__ import annotations

import json
import logging
import string
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import SourceSample
from .policy import SEP

__all__ = [
    "HaystackConfig",
    "ForgedSample",
    "ForgeStats",
    "InsufficientPoolError",
    "token_count",
    "synthesize_context",
    "sub_em",
    "curate_pair",
    "forge_dataset",
    "read_source_jsonl",
    "write_forged_jsonl",
    "read_forged_jsonl",
]

log = logging.getLogger(__name__)

ANSWER_MARKER = "the answer is:"
_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


class InsufficientPoolError(RuntimeError):
    """The distractor pool ran out before the target length was reached."""


@dataclass
class HaystackConfig:
    """Target context lengths (whitespace tokens) and reproducibility seed."""

    target_short_tokens: int = 1100
    target_long_tokens: int = 7500
    tolerance_frac: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.target_short_tokens <= 0 or self.target_long_tokens <= 0:
            raise ValueError("token targets must be positive")
        if self.target_short_tokens >= self.target_long_tokens:
            raise ValueError("short target must be below the long target")

    @property
    def target_compression(self) -> float:
        return self.target_short_tokens / self.target_long_tokens


@dataclass
class ForgedSample:
    """One emitted training record."""

    question: str
    answer: str
    x_short: str
    x_long: str
    y_w: str
    y_l: str

    def check_invariants(self, cfg: HaystackConfig,
                         supporting_docs: Sequence[str] | None = None) -> None:
        """Raise if any emission invariant is broken."""
        for target, text, name in ((cfg.target_short_tokens, self.x_short, "x_short"),
                                   (cfg.target_long_tokens, self.x_long, "x_long")):
            count = token_count(text)
            if not (target * (1 - cfg.tolerance_frac) - 1e-9 <= count
                    <= target * (1 + cfg.tolerance_frac) + 1e-9):
                raise ValueError(f"{name} has {count} tokens, outside tolerance of {target}")
            if supporting_docs is not None:
                for doc in supporting_docs:
                    if doc not in text:
                        raise ValueError(f"supporting document missing from {name}: {doc!r}")
        if not sub_em(self.y_w, self.answer):
            raise ValueError("chosen response fails substring exact match")
        if sub_em(self.y_l, self.answer):
            raise ValueError("rejected response passes substring exact match")


def token_count(text: str) -> int:
    """Whitespace token count — the unit all length targets are stated in."""
    return len(text.split())


def synthesize_context(src: SourceSample, distractors: Sequence[str],
                       target_tokens: int, rng: np.random.Generator, *,
                       tolerance_frac: float = 0.05, sep: str = SEP) -> str:
    """Supporting docs plus sampled distractors, shuffled and joined by ``sep``.

    Distractors are drawn without replacement in a seeded random order until
    the joined length enters the tolerance band; docs that would overshoot the
    band are skipped. Raises :class:`InsufficientPoolError` if the pool runs
    out first.
    """
    sep_cost = token_count(sep)
    docs = list(src.supporting_docs)
    total = sum(token_count(d) for d in docs) + sep_cost * (len(docs) - 1)
    lower = target_tokens * (1 - tolerance_frac)
    upper = target_tokens * (1 + tolerance_frac)
    if total > upper + 1e-9:
        raise ValueError("supporting documents alone exceed the target length")
    for idx in rng.permutation(len(distractors)):
        if total >= lower:
            break
        cost = token_count(distractors[idx]) + sep_cost
        if total + cost <= upper + 1e-9:
            docs.append(distractors[idx])
            total += cost
    if total < lower - 1e-9:
        raise InsufficientPoolError(
            f"pool exhausted at {total} tokens; target band [{lower:.0f}, {upper:.0f}]")
    order = rng.permutation(len(docs))
    return f" {sep} ".join(docs[i] for i in order)


def _normalize(text: str) -> str:
    words = text.lower().translate(_PUNCT_TABLE).split()
    return " ".join(w for w in words if w not in _ARTICLES)


def sub_em(prediction: str, gold: str) -> bool:
    """Substring exact match on the prediction's answer span.

    The answer span is the text after the last ``"The answer is:"`` marker
    (case-insensitive) when present, else the whole prediction. Both sides are
    normalized: lowercase, punctuation stripped, whitespace collapsed,
    articles dropped.
    """
    lowered = prediction.lower()
    pos = lowered.rfind(ANSWER_MARKER)
    span = prediction[pos + len(ANSWER_MARKER):] if pos >= 0 else prediction
    return _normalize(gold) in _normalize(span)


def _partition(candidates: Sequence[str], gold: str) -> tuple[list[str], list[str]]:
    correct, incorrect = [], []
    for c in candidates:
        (correct if sub_em(c, gold) else incorrect).append(c)
    return correct, incorrect


def _draw_pair(correct: Sequence[str], incorrect: Sequence[str],
               rng: np.random.Generator) -> tuple[str, str]:
    return (correct[int(rng.integers(len(correct)))],
            incorrect[int(rng.integers(len(incorrect)))])


def curate_pair(candidates: Sequence[str], gold: str,
                rng: np.random.Generator) -> tuple[str, str] | None:
    """One uniform (chosen, rejected) draw, or None if either side is empty."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    correct, incorrect = _partition(candidates, gold)
    if not correct or not incorrect:
        return None
    return _draw_pair(correct, incorrect, rng)


@dataclass
class ForgeStats:
    """Sidecar statistics for one forge run."""

    sources_seen: int = 0
    emitted: int = 0
    discarded_all_correct: int = 0
    discarded_all_incorrect: int = 0
    discarded_intersection: int = 0
    generator_failures: int = 0
    mean_short_tokens: float = 0.0
    mean_long_tokens: float = 0.0
    achieved_compression: float = 0.0
    target_compression: float = 0.0
    discard_rate: float = 0.0

    def finalize(self, short_counts: list[int], long_counts: list[int],
                 cfg: HaystackConfig) -> None:
        if short_counts:
            self.mean_short_tokens = float(np.mean(short_counts))
            self.mean_long_tokens = float(np.mean(long_counts))
            self.achieved_compression = self.mean_short_tokens / self.mean_long_tokens
        self.target_compression = cfg.target_compression
        if self.sources_seen:
            self.discard_rate = 1.0 - self.emitted / self.sources_seen

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _conflict_free_pool(pool: Sequence[str], src: SourceSample) -> list[str]:
    # A haystack doc opening with a supporting doc's subject could contradict
    # the needle; skip those.
    heads = {d.split()[0] for d in src.supporting_docs}
    return [d for d in pool if d.split()[0] not in heads]


Generator = Callable[[str, SourceSample, np.random.Generator], list[str]]


def forge_dataset(sources: Sequence[SourceSample], pool: Sequence[str],
                  generator: Generator, cfg: HaystackConfig,
                  n_target: int | None = None, *,
                  condition_on: str = "short",
                  intersection: bool = False) -> tuple[list[ForgedSample], ForgeStats]:
    """Run the full pipeline; deterministic given (inputs, cfg.seed).

    ``condition_on`` selects which context variant the generator sees for the
    emitted pair ("short" or "long"); ``intersection`` additionally requires
    that the other variant also yields a valid pair.
    """
    if condition_on not in ("short", "long"):
        raise ValueError("condition_on must be 'short' or 'long'")
    stats = ForgeStats()
    samples: list[ForgedSample] = []
    short_counts: list[int] = []
    long_counts: list[int] = []
    for idx, src in enumerate(sources):
        if n_target is not None and len(samples) >= n_target:
            break
        stats.sources_seen += 1
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(idx,)))
        local_pool = _conflict_free_pool(pool, src)
        x_short = synthesize_context(src, local_pool, cfg.target_short_tokens, rng,
                                     tolerance_frac=cfg.tolerance_frac)
        x_long = synthesize_context(src, local_pool, cfg.target_long_tokens, rng,
                                    tolerance_frac=cfg.tolerance_frac)
        primary_ctx = x_short if condition_on == "short" else x_long
        try:
            candidates = generator(primary_ctx, src, rng)
        except Exception:
            log.warning("candidate generation failed for source %d", idx, exc_info=True)
            stats.generator_failures += 1
            continue
        correct, incorrect = _partition(candidates, src.answer)
        if not incorrect:
            stats.discarded_all_correct += 1
            continue
        if not correct:
            stats.discarded_all_incorrect += 1
            continue
        y_w, y_l = _draw_pair(correct, incorrect, rng)
        if intersection:
            other_ctx = x_long if condition_on == "short" else x_short
            try:
                other = generator(other_ctx, src, rng)
            except Exception:
                log.warning("candidate generation failed for source %d", idx, exc_info=True)
                stats.generator_failures += 1
                continue
            o_correct, o_incorrect = _partition(other, src.answer)
            if not o_correct or not o_incorrect:
                stats.discarded_intersection += 1
                continue
        sample = ForgedSample(question=src.question, answer=src.answer,
                              x_short=x_short, x_long=x_long, y_w=y_w, y_l=y_l)
        sample.check_invariants(cfg, supporting_docs=src.supporting_docs)
        samples.append(sample)
        stats.emitted += 1
        short_counts.append(token_count(x_short))
        long_counts.append(token_count(x_long))
    stats.finalize(short_counts, long_counts, cfg)
    return samples, stats


def read_source_jsonl(path: str | Path) -> list[SourceSample]:
    """Load SourceSample records; malformed lines report their line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(SourceSample(question=obj["question"], answer=obj["answer"],
                                        supporting_docs=tuple(obj["supporting_docs"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: {exc}") from exc
    return out


_FORGED_FIELDS = ("question", "answer", "x_short", "x_long", "y_w", "y_l")


def write_forged_jsonl(samples: Iterable[ForgedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({k: getattr(s, k) for k in _FORGED_FIELDS},
                                sort_keys=True))
            fh.write("\n")


def read_forged_jsonl(path: str | Path) -> list[ForgedSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(ForgedSample(**{k: obj[k] for k in _FORGED_FIELDS}))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: {exc}") from exc
    return out
