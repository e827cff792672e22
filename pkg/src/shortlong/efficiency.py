"""Analytic training-cost model and the speedup/crossover analysis.

Cost abstraction: one forward/backward over a length-n sequence costs n^2
units (quadratic attention), reference-model passes excluded. Vanilla
preference training processes the long context twice (chosen and rejected);
the decomposed objective processes the short context twice plus the long
context once for the chosen-side alignment term.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .losses import RAMode

__all__ = [
    "CostModel",
    "CROSSOVER_COMPRESSION",
    "flops",
    "speedup",
    "report_rows",
    "write_report_csv",
    "measure_step_times",
]

CROSSOVER_COMPRESSION = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class CostModel:
    """Long-context length in tokens and the short/long compression rate."""

    long_tokens: float
    compression: float
    ra_mode: RAMode = RAMode.CHOSEN_ONLY

    def __post_init__(self) -> None:
        if self.long_tokens <= 0:
            raise ValueError("long_tokens must be positive")
        if not 0.0 < self.compression <= 1.0:
            raise ValueError("compression must lie in (0, 1]")


def flops(model: CostModel, variant: str) -> float:
    """Cost units for one training pass.

    vanilla -> 2 N^2; decomposed chosen-only -> (2 c^2 + 1) N^2; decomposed
    both-sides -> (2 c^2 + 2) N^2 (the rejected response scores the long
    context a second time — an extension beyond the chosen-only accounting).
    """
    n2 = model.long_tokens * model.long_tokens
    c2 = model.compression * model.compression
    if variant == "vanilla":
        return 2.0 * n2
    if variant == "solo":
        long_passes = 1.0 if model.ra_mode is RAMode.CHOSEN_ONLY else 2.0
        return (2.0 * c2 + long_passes) * n2
    raise ValueError("variant must be 'vanilla' or 'solo'")


def speedup(c: float) -> float:
    """Vanilla-to-decomposed cost ratio 2 / (2 c^2 + 1); exceeds 1 iff c < 1/sqrt(2)."""
    if not 0.0 < c <= 1.0:
        raise ValueError("compression must lie in (0, 1]")
    return 2.0 / (2.0 * c * c + 1.0)


def report_rows(models: Sequence[CostModel]) -> list[dict]:
    rows = []
    for m in models:
        rows.append({
            "long_tokens": m.long_tokens,
            "compression": m.compression,
            "flops_vanilla": flops(m, "vanilla"),
            "flops_solo": flops(m, "solo"),
            "speedup": speedup(m.compression),
            "crossover": m.compression < CROSSOVER_COMPRESSION,
        })
    return rows


def write_report_csv(models: Sequence[CostModel], path: str | Path) -> None:
    rows = report_rows(models)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def measure_step_times(c_values: Sequence[float] = (0.125, 0.25, 0.5, 1.0),
                       long_tokens: int = 512, n_samples: int = 16,
                       steps: int = 4, seed: int = 0) -> dict:
    """Wall-clock ordering hook: time toy-trainer steps across compressions.

    Report-only — the toy scorer is linear in context length, so only the
    ordering (faster at smaller c) is expected to agree with the quadratic
    model, not the magnitudes.
    """
    from .corpus import StubGenerator, build_chain_corpus, needle_profile, needle_vocab
    from .forge import HaystackConfig, forge_dataset
    from .losses import Method, MethodConfig
    from .policy import ToyLM
    from .training import TrainConfig, train

    profile = needle_profile()
    vocab = needle_vocab(profile)
    rows = []
    for c in c_values:
        short_target = max(8, int(round(c * long_tokens)))
        cfg = HaystackConfig(target_short_tokens=short_target,
                             target_long_tokens=long_tokens + 1 if short_target == long_tokens else long_tokens,
                             tolerance_frac=0.05, seed=seed)
        sources, pool = build_chain_corpus(n_samples * 2, 360, seed, profile)
        wrong = tuple(profile.value(i) for i in range(profile.n_values))
        gen = StubGenerator(p_correct=0.5, n=8, wrong_answers=wrong)
        data, _ = forge_dataset(sources, pool, gen, cfg, n_target=n_samples)
        timings = {}
        for variant, tcfg in (
            ("vanilla", TrainConfig(MethodConfig(Method.ORPO, alpha=0.0), po_context="long",
                                    telemetry=False, batch_size=max(1, n_samples // steps), seed=seed)),
            ("solo", TrainConfig(MethodConfig(Method.ORPO, alpha=1.0), po_context="short",
                                 telemetry=False, batch_size=max(1, n_samples // steps), seed=seed)),
        ):
            model = ToyLM(vocab, hidden_dim=16, seed=seed)
            begin = time.perf_counter()
            train(model, data, tcfg, vocab)
            timings[variant] = time.perf_counter() - begin
        rows.append({"compression": c,
                     "measured_vanilla_s": timings["vanilla"],
                     "measured_solo_s": timings["solo"],
                     "measured_ratio": timings["vanilla"] / timings["solo"],
                     "model_speedup": speedup(min(c, 1.0))})
    measured = [r["measured_ratio"] for r in rows]
    modeled = [r["model_speedup"] for r in rows]
    ordering = sorted(range(len(rows)), key=lambda i: -measured[i])
    expected = sorted(range(len(rows)), key=lambda i: -modeled[i])
    return {"rows": rows, "ordering_consistent": ordering == expected}
