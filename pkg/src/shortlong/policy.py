"""A tiny differentiable autoregressive scorer over a closed vocabulary.

Architecture: the context is mean-pooled through an embedding table, passed
through one tanh layer, and added to the previous response token's embedding
to produce per-step logits (a conditional bigram model with a context summary).
Small enough that haystack dilution measurably hurts it, which is the point.

Checkpoint format (JSON, ``format_version`` 1): ``tokens`` (vocabulary, in
order), ``hidden_dim``, ``seed``, and ``arrays`` holding base64-encoded raw
little-endian float64 bytes for ``emb`` (V x d, row-major), ``ctx_w`` (d x d)
and ``out_w`` (d x V).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Vocab",
    "ToyLM",
    "ScoredSequence",
    "logprob",
    "sample",
    "greedy_decode",
    "logprob_with_grad",
    "param_grad",
    "freeze",
    "save_model",
    "load_model",
]

BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"


@dataclass(frozen=True)
class Vocab:
    """Ordered token set; must contain the three specials and >= 8 entries."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if len(self.tokens) < 8:
            raise ValueError("vocabulary must hold at least 8 tokens")
        for special in (BOS, EOS, SEP):
            if special not in self.tokens:
                raise ValueError(f"vocabulary must contain {special}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return self._index[BOS]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def sep_id(self) -> int:
        return self._index[SEP]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self._index[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"token not in vocabulary: {exc.args[0]!r}") from None

    def encode_text(self, text: str) -> np.ndarray:
        return self.encode(text.split())

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


class ToyLM:
    """Mean-pooled-context conditional bigram scorer with float64 parameters."""

    def __init__(self, vocab: Vocab, hidden_dim: int = 16, seed: int = 0,
                 _params: dict[str, np.ndarray] | None = None):
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.seed = seed
        self.frozen = False
        if _params is not None:
            self.params = _params
        else:
            rng = np.random.default_rng(seed)
            v, d = vocab.size, hidden_dim
            # Xavier-style scales, shrunk 10x so the model starts near-uniform.
            self.params = {
                "emb": rng.normal(0.0, 0.1 * np.sqrt(2.0 / (v + d)), (v, d)),
                "ctx_w": rng.normal(0.0, 0.1 * np.sqrt(1.0 / d), (d, d)),
                "out_w": rng.normal(0.0, 0.1 * np.sqrt(2.0 / (d + v)), (d, v)),
            }

    def context_hidden(self, context_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(pooled context embedding, tanh hidden state)."""
        if len(context_ids):
            pooled = self.params["emb"][context_ids].mean(axis=0)
        else:
            pooled = np.zeros(self.hidden_dim)
        return pooled, np.tanh(self.params["ctx_w"] @ pooled)

    def step_logits(self, hidden: np.ndarray, prev_id: int) -> np.ndarray:
        state = hidden + self.params["emb"][prev_id]
        return state @ self.params["out_w"]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def clone(self) -> "ToyLM":
        return ToyLM(self.vocab, self.hidden_dim, self.seed,
                     _params={k: v.copy() for k, v in self.params.items()})


@dataclass
class ScoredSequence:
    """A response with its exact sequence log-probability."""

    tokens: tuple[str, ...]
    total_logprob: float
    per_token_logprobs: tuple[float, ...]

    @property
    def text(self) -> str:
        return " ".join(t for t in self.tokens if t != EOS)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def logprob(model: ToyLM, context: Sequence[str], response: Sequence[str]) -> ScoredSequence:
    """Teacher-forced log-probability of ``response`` given ``context``."""
    if not len(response):
        raise ValueError("response must be non-empty")
    ctx_ids = model.vocab.encode(context)
    resp_ids = model.vocab.encode(response)
    _, hidden = model.context_hidden(ctx_ids)
    prev = model.vocab.bos_id
    per_token = []
    for tok in resp_ids:
        logp = _log_softmax(model.step_logits(hidden, prev))
        per_token.append(float(logp[tok]))
        prev = int(tok)
    return ScoredSequence(tokens=tuple(response), total_logprob=float(sum(per_token)),
                          per_token_logprobs=tuple(per_token))


def sample(model: ToyLM, context: Sequence[str], n: int, temperature: float,
           max_len: int, rng: np.random.Generator) -> list[ScoredSequence]:
    """Ancestral samples at the given temperature; 0 means greedy.

    Sequences stop at EOS or ``max_len``. The recorded log-probabilities are
    the model's own (temperature 1) scores of the sampled tokens.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    ctx_ids = model.vocab.encode(context)
    _, hidden = model.context_hidden(ctx_ids)
    eos = model.vocab.eos_id
    out: list[ScoredSequence] = []
    for _ in range(n):
        prev = model.vocab.bos_id
        ids: list[int] = []
        per_token: list[float] = []
        for _ in range(max_len):
            logits = model.step_logits(hidden, prev)
            logp = _log_softmax(logits)
            if temperature == 0.0:
                tok = int(np.argmax(logits))
            else:
                probs = np.exp(_log_softmax(logits / temperature))
                probs = probs / probs.sum()
                tok = int(rng.choice(model.vocab.size, p=probs))
            ids.append(tok)
            per_token.append(float(logp[tok]))
            prev = tok
            if tok == eos:
                break
        out.append(ScoredSequence(tokens=tuple(model.vocab.decode(ids)),
                                  total_logprob=float(sum(per_token)),
                                  per_token_logprobs=tuple(per_token)))
    return out


def greedy_decode(model: ToyLM, context: Sequence[str], max_len: int = 4) -> ScoredSequence:
    return sample(model, context, 1, 0.0, max_len, np.random.default_rng(0))[0]


def logprob_with_grad(model: ToyLM, context: Sequence[str], response: Sequence[str],
                      upstream: float = 1.0,
                      grads: dict[str, np.ndarray] | None = None
                      ) -> tuple[ScoredSequence, dict[str, np.ndarray]]:
    """Score a response and accumulate ``upstream * d logprob / d params``."""
    if not len(response):
        raise ValueError("response must be non-empty")
    ctx_ids = model.vocab.encode(context)
    resp_ids = model.vocab.encode(response)
    emb, ctx_w, out_w = model.params["emb"], model.params["ctx_w"], model.params["out_w"]
    pooled, hidden = model.context_hidden(ctx_ids)
    if grads is None:
        grads = model.zero_grads()

    prev = model.vocab.bos_id
    per_token = []
    d_hidden = np.zeros_like(hidden)
    for tok in resp_ids:
        state = hidden + emb[prev]
        logits = state @ out_w
        logp = _log_softmax(logits)
        per_token.append(float(logp[tok]))
        # d logprob_t / d logits = onehot - softmax
        d_logits = -np.exp(logp)
        d_logits[tok] += 1.0
        d_logits *= upstream
        grads["out_w"] += np.outer(state, d_logits)
        d_state = out_w @ d_logits
        grads["emb"][prev] += d_state
        d_hidden += d_state
        prev = int(tok)

    # hidden = tanh(ctx_w @ pooled)
    d_pre = (1.0 - hidden * hidden) * d_hidden
    grads["ctx_w"] += np.outer(d_pre, pooled)
    if len(ctx_ids):
        d_pooled = ctx_w.T @ d_pre
        np.add.at(grads["emb"], ctx_ids, d_pooled / len(ctx_ids))

    scored = ScoredSequence(tokens=tuple(response), total_logprob=float(sum(per_token)),
                            per_token_logprobs=tuple(per_token))
    return scored, grads


def param_grad(model: ToyLM,
               items: Sequence[tuple[Sequence[str], Sequence[str]]],
               loss: Callable[[np.ndarray], tuple[float, np.ndarray]]
               ) -> tuple[float, dict[str, np.ndarray]]:
    """Backpropagate a loss over the scored log-probabilities of ``items``.

    ``loss`` maps the vector of per-item log-probabilities to
    ``(value, d value / d logprobs)``. Returns the loss value and parameter
    gradients. Raises on a non-finite loss.
    """
    lps = np.array([logprob(model, ctx, resp).total_logprob for ctx, resp in items])
    value, d_lps = loss(lps)
    if not np.isfinite(value):
        raise ValueError("loss is not finite")
    grads = model.zero_grads()
    for (ctx, resp), weight in zip(items, d_lps):
        if weight != 0.0:
            logprob_with_grad(model, ctx, resp, upstream=float(weight), grads=grads)
    return float(value), grads


def freeze(model: ToyLM) -> ToyLM:
    """Deep, immutable snapshot for use as a reference policy."""
    snapshot = model.clone()
    for arr in snapshot.params.values():
        arr.setflags(write=False)
    snapshot.frozen = True
    return snapshot


def save_model(model: ToyLM, path: str | Path) -> None:
    arrays = {k: base64.b64encode(np.ascontiguousarray(v, dtype="<f8").tobytes()).decode("ascii")
              for k, v in model.params.items()}
    payload = {
        "format_version": 1,
        "tokens": list(model.vocab.tokens),
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
        "arrays": arrays,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path: str | Path) -> ToyLM:
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version: {payload.get('format_version')!r}")
    vocab = Vocab(tuple(payload["tokens"]))
    d = int(payload["hidden_dim"])
    v = vocab.size
    shapes = {"emb": (v, d), "ctx_w": (d, d), "out_w": (d, v)}
    params = {}
    for name, shape in shapes.items():
        raw = base64.b64decode(payload["arrays"][name])
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return ToyLM(vocab, d, int(payload["seed"]), _params=params)
