"""Bundled synthetic corpora and candidate generators.

The corpus is built from two-hop entity-relation chains: each source asks for
the value at the end of a chain (``A --rel_a--> B --rel_b--> value``) and ships
the two chain documents as supporting evidence. The distractor pool holds only
first-hop style documents (entity -> entity), so the value token of a source
is unique inside any haystack built around it.

Two profiles of the same generator:

* ``word_profile`` — open vocabulary, word-like identifiers, used for
  forge-contract runs at realistic token lengths;
* ``needle_profile`` — a closed vocabulary small enough for the toy scorer,
  used by the end-to-end training experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import BOS, EOS, SEP, Vocab

__all__ = [
    "SourceSample",
    "ChainCorpusProfile",
    "word_profile",
    "needle_profile",
    "needle_vocab",
    "value_token",
    "build_chain_corpus",
    "StubGenerator",
    "PrefixedStubGenerator",
    "PolicyCandidateGenerator",
]

NO_ANSWER = "noanswer"


@dataclass(frozen=True)
class SourceSample:
    """One raw QA record: question, gold answer, supporting documents."""

    question: str
    answer: str
    supporting_docs: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.answer:
            raise ValueError("answer must be non-empty")
        if not self.supporting_docs:
            raise ValueError("at least one supporting document is required")
        object.__setattr__(self, "supporting_docs", tuple(self.supporting_docs))


@dataclass(frozen=True)
class ChainCorpusProfile:
    """Naming scheme and sizes for the chain generator."""

    n_entities: int
    n_values: int
    entity_fmt: str
    value_fmt: str
    relation_a: str
    relation_b: str
    question_fmt: str  # receives {a}

    def entity(self, i: int) -> str:
        return self.entity_fmt.format(i)

    def value(self, i: int) -> str:
        return self.value_fmt.format(i)


def word_profile() -> ChainCorpusProfile:
    return ChainCorpusProfile(
        n_entities=300, n_values=240,
        entity_fmt="org{:03d}", value_fmt="{}",
        relation_a="acquired", relation_b="established",
        question_fmt="which year was the partner of {a} established ?",
    )


def needle_profile() -> ChainCorpusProfile:
    return ChainCorpusProfile(
        n_entities=20, n_values=20,
        entity_fmt="e{:02d}", value_fmt="v{:02d}",
        relation_a="owns", relation_b="founded",
        question_fmt="? founded {a}",
    )


def needle_vocab(profile: ChainCorpusProfile | None = None) -> Vocab:
    """Closed vocabulary covering everything the needle profile can emit."""
    p = profile or needle_profile()
    tokens = [BOS, EOS, SEP, "?", p.relation_a, p.relation_b, NO_ANSWER]
    tokens += [p.entity(i) for i in range(p.n_entities)]
    tokens += [p.value(i) for i in range(p.n_values)]
    return Vocab(tuple(tokens))


def value_token(profile: ChainCorpusProfile, i: int) -> str:
    # Word profile renders values as distinct equal-length years.
    if profile.value_fmt == "{}":
        return str(1800 + i)
    return profile.value(i)


def build_chain_corpus(n_sources: int, pool_size: int, seed: int,
                       profile: ChainCorpusProfile | None = None
                       ) -> tuple[list[SourceSample], list[str]]:
    """Generate sources and a shared distractor pool.

    Pool documents are distinct ordered entity pairs rendered through
    ``relation_a``; sources draw their own chain head, bridge and value.
    """
    p = profile or word_profile()
    rng = np.random.default_rng(seed)
    sources = []
    for _ in range(n_sources):
        a, b = (p.entity(int(i)) for i in rng.choice(p.n_entities, size=2, replace=False))
        v = value_token(p, int(rng.integers(p.n_values)))
        docs = (f"{a} {p.relation_a} {b}", f"{b} {p.relation_b} {v}")
        sources.append(SourceSample(question=p.question_fmt.format(a=a),
                                    answer=v, supporting_docs=docs))
    max_pairs = p.n_entities * (p.n_entities - 1)
    if pool_size > max_pairs:
        raise ValueError(f"pool_size {pool_size} exceeds the {max_pairs} distinct entity pairs")
    flat = rng.choice(max_pairs, size=pool_size, replace=False)
    pool = []
    for code in flat:
        x = int(code) // (p.n_entities - 1)
        rem = int(code) % (p.n_entities - 1)
        y = rem if rem < x else rem + 1
        pool.append(f"{p.entity(x)} {p.relation_a} {p.entity(y)}")
    return sources, pool


@dataclass
class StubGenerator:
    """Test/experiment candidate generator with a controlled accuracy rate.

    Each of the ``n`` candidates is the gold answer with probability
    ``p_correct``, otherwise a draw from ``wrong_answers`` (which must not
    contain the gold answer as a substring).
    """

    p_correct: float
    n: int = 32
    wrong_answers: tuple[str, ...] = (NO_ANSWER,)

    def __call__(self, context: str, source: SourceSample,
                 rng: np.random.Generator) -> list[str]:
        out = []
        for _ in range(self.n):
            if rng.uniform() < self.p_correct:
                out.append(source.answer)
            else:
                pool = [w for w in self.wrong_answers if source.answer not in w]
                if not pool:
                    pool = [NO_ANSWER]
                out.append(pool[int(rng.integers(len(pool)))])
        return out


@dataclass
class PrefixedStubGenerator:
    """Stub emitting 'prefix verdict' candidates.

    The prefix is a uniformly random token (modeling the lead-in diversity of
    temperature-sampled reasoning traces); the verdict is the gold answer with
    probability ``p_correct``, else a wrong value or an abstention. The random
    prefix keeps a trained scorer's per-token probability of any chosen
    response bounded away from 1, so odds-based rewards stay well-conditioned.
    """

    p_correct: float
    n: int
    values: tuple[str, ...]
    prefixes: tuple[str, ...]

    def __call__(self, context: str, source: SourceSample,
                 rng: np.random.Generator) -> list[str]:
        out = []
        for _ in range(self.n):
            prefix = self.prefixes[int(rng.integers(len(self.prefixes)))]
            if rng.uniform() < self.p_correct:
                out.append(f"{prefix} {source.answer}")
            else:
                wrongs = [v for v in self.values if source.answer not in v]
                wrongs.append(NO_ANSWER)
                out.append(f"{prefix} {wrongs[int(rng.integers(len(wrongs)))]}")
        return out


@dataclass
class PolicyCandidateGenerator:
    """Samples candidate responses from a toy policy conditioned on the context."""

    model: "ToyLM"  # noqa: F821 - forward ref, imported lazily below
    n: int = 32
    temperature: float = 0.85
    max_len: int = 6

    def __call__(self, context: str, source: SourceSample,
                 rng: np.random.Generator) -> list[str]:
        from .policy import sample

        prompt = context.split() + [SEP] + source.question.split()
        scored = sample(self.model, prompt, self.n, self.temperature, self.max_len, rng)
        return [s.text for s in scored]
