"""Central-finite-difference validation of every analytic gradient path."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .links import ConvexLink
from .losses import (GRAD_FIELDS, LogProbBundle, Method, MethodConfig, RAMode,
                     grad_solopo, solopo_loss)
from .policy import ToyLM, Vocab, param_grad

__all__ = ["relative_error", "random_bundle", "check_loss_gradients",
           "check_policy_gradients"]

_KINK_MARGIN = 1e-3


def relative_error(analytic: float, numeric: float) -> float:
    """|a - f| scaled by max(1, |a|, |f|); tolerant of true-zero components."""
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def _kink_distances(cfg: MethodConfig, b: LogProbBundle) -> list[float]:
    """Distances to the nearest non-differentiable point of the total loss."""
    from .losses import _alignment_gap, _short_margin_arg  # internal on purpose

    dists = []
    if cfg.link is ConvexLink.HINGE:
        dists.append(abs(_short_margin_arg(cfg, b)))
    if cfg.alpha > 0 and cfg.link is not ConvexLink.SQUARE:
        if cfg.ra_mode is RAMode.KL_APPROX:
            dists.append(abs(b.lp_w_short - b.lp_w_long))
        else:
            dists.append(abs(_alignment_gap(cfg, b.lp_w_short, b.lp_w_long,
                                            b.ref_lp_w_short, b.ref_lp_w_long, b.len_w)))
            if cfg.ra_mode is RAMode.BOTH:
                dists.append(abs(_alignment_gap(cfg, b.lp_l_short, b.lp_l_long,
                                                b.ref_lp_l_short, b.ref_lp_l_long, b.len_l)))
    return dists


def random_bundle(rng: np.random.Generator, cfg: MethodConfig,
                  kink_margin: float = _KINK_MARGIN) -> LogProbBundle:
    """A random valid bundle whose loss is smooth in a ``kink_margin`` ball."""
    while True:
        refs = {}
        if cfg.needs_reference:
            refs = {name: float(rng.uniform(-12.0, -0.5))
                    for name in ("ref_lp_w_short", "ref_lp_l_short",
                                 "ref_lp_w_long", "ref_lp_l_long")}
        b = LogProbBundle(
            lp_w_short=float(rng.uniform(-12.0, -0.5)),
            lp_l_short=float(rng.uniform(-12.0, -0.5)),
            lp_w_long=float(rng.uniform(-12.0, -0.5)),
            lp_l_long=float(rng.uniform(-12.0, -0.5)),
            len_w=int(rng.integers(1, 9)), len_l=int(rng.integers(1, 9)), **refs)
        if all(d > kink_margin for d in _kink_distances(cfg, b)):
            return b


def fd_gradient(cfg: MethodConfig, b: LogProbBundle, h: float = 1e-5) -> dict[str, float]:
    """Independent numerical gradient of the total loss over the lp fields."""
    grads = {}
    for name in GRAD_FIELDS:
        base = getattr(b, name)
        if base is None:
            grads[name] = 0.0
            continue
        up = solopo_loss(cfg, replace(b, **{name: base + h})).total
        down = solopo_loss(cfg, replace(b, **{name: base - h})).total
        grads[name] = (up - down) / (2.0 * h)
    return grads


def check_loss_gradients(n_points: int, seed: int, *, h: float = 1e-5,
                         methods: Sequence[Method] = tuple(Method),
                         modes: Sequence[RAMode] = tuple(RAMode)) -> dict:
    """Max relative error of grad_solopo vs finite differences per combo."""
    report = {"h": h, "points_per_combo": n_points, "combos": {}, "max_relative_error": 0.0}
    for method in methods:
        for mode in modes:
            rng = np.random.default_rng([seed, list(Method).index(method),
                                         list(RAMode).index(mode)])
            cfg = MethodConfig(method, ra_mode=mode,
                               alpha=float(rng.uniform(0.2, 4.0)),
                               gamma=float(rng.uniform(-1.0, 1.0)),
                               eta=float(rng.uniform(0.5, 3.0)))
            worst = 0.0
            for _ in range(n_points):
                b = random_bundle(rng, cfg)
                analytic = grad_solopo(cfg, b)
                numeric = fd_gradient(cfg, b, h)
                err = max(relative_error(analytic[k], numeric[k]) for k in GRAD_FIELDS)
                worst = max(worst, err)
            key = f"{method.value}/{mode.value}"
            report["combos"][key] = worst
            report["max_relative_error"] = max(report["max_relative_error"], worst)
    return report


def _tiny_world(seed: int) -> tuple[ToyLM, list[tuple[list[str], list[str]]]]:
    from .policy import BOS, EOS, SEP

    vocab = Vocab((BOS, EOS, SEP, "t0", "t1", "t2", "t3", "t4", "t5", "t6"))
    model = ToyLM(vocab, hidden_dim=8, seed=seed)
    rng = np.random.default_rng(seed)
    words = ["t0", "t1", "t2", "t3", "t4", "t5", "t6"]
    items = []
    for _ in range(4):
        ctx = [words[int(i)] for i in rng.integers(0, len(words), 6)]
        resp = [words[int(i)] for i in rng.integers(0, len(words), 3)] + [EOS]
        items.append((ctx, resp))
    return model, items


def check_policy_gradients(seed: int, *, h: float = 1e-5) -> dict:
    """FD-validate backprop through the scorer composed with the loss."""
    model, items = _tiny_world(seed)
    cfg = MethodConfig(Method.ORPO, alpha=1.0)

    def loss(lps: np.ndarray) -> tuple[float, np.ndarray]:
        b = LogProbBundle(lp_w_short=lps[0], lp_l_short=lps[1],
                          lp_w_long=lps[2], lp_l_long=lps[3],
                          len_w=len(items[0][1]), len_l=len(items[1][1]))
        grad = grad_solopo(cfg, b)
        return (solopo_loss(cfg, b).total,
                np.array([grad["lp_w_short"], grad["lp_l_short"],
                          grad["lp_w_long"], grad["lp_l_long"]]))

    _, analytic = param_grad(model, items, loss)

    def full_loss() -> float:
        from .policy import logprob

        lps = np.array([logprob(model, ctx, resp).total_logprob for ctx, resp in items])
        return loss(lps)[0]

    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = full_loss()
            flat[i] = keep - h
            down = full_loss()
            flat[i] = keep
            worst = max(worst, relative_error(float(analytic[name].ravel()[i]),
                                              (up - down) / (2.0 * h)))
    return {"h": h, "max_relative_error": worst}
