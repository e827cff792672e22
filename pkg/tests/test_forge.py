"""Haystack synthesis, substring matching, curation, and the full pipeline."""

import json

import numpy as np
import pytest

from shortlong.corpus import (PrefixedStubGenerator, SourceSample, StubGenerator,
                              build_chain_corpus, needle_profile, needle_vocab,
                              value_token, word_profile)
from shortlong.forge import (ForgedSample, HaystackConfig, InsufficientPoolError,
                             curate_pair, forge_dataset, read_forged_jsonl,
                             read_source_jsonl, sub_em, synthesize_context,
                             token_count, write_forged_jsonl)


@pytest.fixture
def src():
    return SourceSample(question="? founded e01",
                        answer="v05",
                        supporting_docs=("e01 owns e02", "e02 founded v05"))


def make_pool(n):
    return [f"e{i:02d} owns e{(i + 3) % 60:02d}" for i in range(10, 10 + n)]


class TestSynthesizeContext:
    def test_supporting_only_when_target_matches(self, src):
        target = sum(token_count(d) for d in src.supporting_docs) + 1  # one separator
        rng = np.random.default_rng(0)
        ctx = synthesize_context(src, make_pool(50), target, rng, tolerance_frac=0.0)
        assert sorted(ctx.split(" <sep> ")) == sorted(src.supporting_docs)

    def test_target_reached_with_supporting_present(self, src):
        rng = np.random.default_rng(1)
        ctx = synthesize_context(src, make_pool(200), 400, rng)
        assert abs(token_count(ctx) - 400) <= 0.05 * 400
        for doc in src.supporting_docs:
            assert doc in ctx

    def test_same_seed_same_bytes(self, src):
        pool = make_pool(100)
        a = synthesize_context(src, pool, 200, np.random.default_rng(7))
        b = synthesize_context(src, pool, 200, np.random.default_rng(7))
        assert a == b

    def test_pool_exhaustion(self, src):
        with pytest.raises(InsufficientPoolError):
            synthesize_context(src, make_pool(3), 500, np.random.default_rng(0))

    def test_supporting_docs_always_present_under_any_seed(self, src):
        pool = make_pool(100)
        for seed in range(20):
            ctx = synthesize_context(src, pool, 120, np.random.default_rng(seed))
            for doc in src.supporting_docs:
                assert doc in ctx


class TestSubEm:
    def test_marker_span_hit(self):
        assert sub_em("reasoning ... The answer is: 1960", "1960")

    def test_marker_span_miss(self):
        assert not sub_em("The answer is: No answer.", "1960")

    def test_normalization(self):
        assert sub_em("THE ANSWER IS:  the 1960.", "1960")

    def test_last_marker_wins(self):
        assert not sub_em("The answer is: 1960. Wait. The answer is: 1850", "1960")
        assert sub_em("The answer is: 1850. Wait. The answer is: 1960", "1960")

    def test_whole_text_without_marker(self):
        assert sub_em("probably 42, give or take", "42")
        assert not sub_em("probably 43", "42")

    def test_article_and_punct_stripping(self):
        assert sub_em("An Owl!", "owl")


class TestCuratePair:
    def test_all_correct_discarded(self):
        rng = np.random.default_rng(0)
        assert curate_pair(["x 1960", "y 1960"], "1960", rng) is None

    def test_all_incorrect_discarded(self):
        rng = np.random.default_rng(0)
        assert curate_pair(["no", "nah"], "1960", rng) is None

    def test_single_pair(self):
        rng = np.random.default_rng(0)
        assert curate_pair(["1960", "no"], "1960", rng) == ("1960", "no")

    def test_seeded_draw_reproducible(self):
        cands = [f"cand {i} 1960" for i in range(8)] + [f"cand {i} miss" for i in range(8)]
        a = curate_pair(cands, "1960", np.random.default_rng(3))
        b = curate_pair(cands, "1960", np.random.default_rng(3))
        assert a == b

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            curate_pair([], "1960", np.random.default_rng(0))


class TestChainCorpus:
    def test_needle_vocab_is_closed_and_small(self):
        profile = needle_profile()
        vocab = needle_vocab(profile)
        assert vocab.size <= 64
        sources, pool = build_chain_corpus(50, 300, seed=0, profile=profile)
        for s in sources:
            for text in (s.question, s.answer, *s.supporting_docs):
                vocab.encode(text.split())
        for doc in pool:
            vocab.encode(doc.split())

    def test_pool_documents_carry_no_values(self):
        profile = needle_profile()
        values = {value_token(profile, i) for i in range(profile.n_values)}
        _, pool = build_chain_corpus(10, 300, seed=1, profile=profile)
        for doc in pool:
            assert not values & set(doc.split())

    def test_pool_entries_distinct(self):
        _, pool = build_chain_corpus(5, 350, seed=2, profile=needle_profile())
        assert len(set(pool)) == len(pool)

    def test_word_profile_scales(self):
        sources, pool = build_chain_corpus(20, 2200, seed=3, profile=word_profile())
        assert len(pool) == 2200
        assert all(len(s.supporting_docs) == 2 for s in sources)


class TestForgeDataset:
    def setup_method(self):
        self.profile = needle_profile()
        self.sources, self.pool = build_chain_corpus(80, 360, seed=5, profile=self.profile)
        self.wrong = tuple(value_token(self.profile, i)
                           for i in range(self.profile.n_values))
        self.cfg = HaystackConfig(target_short_tokens=64, target_long_tokens=256, seed=9)

    def test_gold_only_generator_discards_everything(self):
        gen = StubGenerator(p_correct=1.0, n=8, wrong_answers=self.wrong)
        samples, stats = forge_dataset(self.sources[:20], self.pool, gen, self.cfg)
        assert samples == []
        assert stats.discarded_all_correct == 20
        assert stats.discard_rate == 1.0

    def test_half_correct_generator_rarely_discards(self):
        # P(one-sided over 32 draws) = 2 * 2^-32 per source; over 80 sources
        # the expected discard count is ~4e-8, so exactly zero here.
        gen = StubGenerator(p_correct=0.5, n=32, wrong_answers=self.wrong)
        samples, stats = forge_dataset(self.sources, self.pool, gen, self.cfg)
        assert stats.discarded_all_correct == 0
        assert stats.discarded_all_incorrect == 0
        assert stats.emitted == len(self.sources)
        assert samples

    def test_invariants_and_compression(self):
        gen = PrefixedStubGenerator(
            p_correct=0.5, n=16, values=self.wrong,
            prefixes=tuple(self.profile.entity(i) for i in range(self.profile.n_entities)))
        samples, stats = forge_dataset(self.sources, self.pool, gen, self.cfg,
                                       n_target=40)
        assert stats.emitted == 40
        for s in samples:
            s.check_invariants(self.cfg)
        assert stats.achieved_compression == pytest.approx(
            self.cfg.target_compression, rel=0.10)

    def test_rerun_byte_identical(self, tmp_path):
        gen = StubGenerator(p_correct=0.5, n=16, wrong_answers=self.wrong)
        out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (out_a, out_b):
            samples, _ = forge_dataset(self.sources, self.pool, gen, self.cfg,
                                       n_target=25)
            write_forged_jsonl(samples, out)
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_generator_failure_logged_not_fatal(self):
        calls = {"n": 0}

        def flaky(context, source, rng):
            calls["n"] += 1
            if calls["n"] % 3 == 0:
                raise RuntimeError("backend hiccup")
            return StubGenerator(0.5, 16, self.wrong)(context, source, rng)

        samples, stats = forge_dataset(self.sources[:12], self.pool, flaky, self.cfg)
        assert stats.generator_failures == 4
        assert stats.emitted == 8

    def test_long_conditioning_flag(self):
        seen = {}

        def spy(context, source, rng):
            seen[source.question] = token_count(context)
            return StubGenerator(0.5, 16, self.wrong)(context, source, rng)

        forge_dataset(self.sources[:5], self.pool, spy, self.cfg, condition_on="long")
        assert all(abs(n - 256) <= 13 for n in seen.values())

    def test_intersection_mode_requires_both_sides(self):
        def short_only(context, source, rng):
            # succeeds on short contexts, one-sided on long ones
            if token_count(context) > 128:
                return [source.answer] * 4
            return StubGenerator(0.5, 16, self.wrong)(context, source, rng)

        samples, stats = forge_dataset(self.sources[:10], self.pool, short_only,
                                       self.cfg, intersection=True)
        assert samples == []
        assert stats.discarded_intersection == 10

    def test_policy_generator_end_to_end(self):
        from shortlong.corpus import PolicyCandidateGenerator
        from shortlong.policy import ToyLM

        vocab = needle_vocab(self.profile)
        model = ToyLM(vocab, hidden_dim=8, seed=0)
        gen = PolicyCandidateGenerator(model, n=32, temperature=0.85, max_len=4)
        samples, stats = forge_dataset(self.sources[:6], self.pool, gen, self.cfg)
        # near-uniform sampling yields both sides almost surely at N=32
        assert stats.emitted >= 4
        for s in samples:
            s.check_invariants(self.cfg)


class TestJsonlIO:
    def test_round_trip(self, tmp_path):
        s = ForgedSample(question="q", answer="a", x_short="s one",
                         x_long="l two", y_w="a", y_l="b")
        path = tmp_path / "f.jsonl"
        write_forged_jsonl([s], path)
        assert read_forged_jsonl(path) == [s]

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"question": "q", "answer": "a", "supporting_docs": ["d"]}\n'
                        "{oops}\n")
        with pytest.raises(ValueError, match="line 2"):
            read_source_jsonl(path)

    def test_source_round_trip(self, tmp_path):
        path = tmp_path / "src.jsonl"
        path.write_text(json.dumps({"question": "q", "answer": "a",
                                    "supporting_docs": ["d1", "d2"]}) + "\n")
        [src] = read_source_jsonl(path)
        assert src.supporting_docs == ("d1", "d2")
