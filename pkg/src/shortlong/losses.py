"""Preference-optimization losses with a short-to-long reward-consistency term.

The objective is ``f(eta * (r(x_short, y_w) - r(x_short, y_l) - gamma))`` plus
``alpha`` times a penalty on the gap between the reward a response earns under
the short context and under the long context. Everything here is a pure
function of a :class:`LogProbBundle`; analytic gradients with respect to every
log-probability field are provided for the trainer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .links import ConvexLink, eval_link, link_deriv

__all__ = [
    "Method",
    "RAMode",
    "MethodConfig",
    "LogProbBundle",
    "LossBreakdown",
    "method_link",
    "reward",
    "po_loss",
    "solo_ra_term",
    "solopo_loss",
    "grad_solopo",
    "GRAD_FIELDS",
]


class Method(enum.Enum):
    DPO = "dpo"
    SIMPO = "simpo"
    ORPO = "orpo"
    IPO = "ipo"
    SLIC = "slic"


class RAMode(enum.Enum):
    CHOSEN_ONLY = "chosen_only"
    BOTH = "both"
    KL_APPROX = "kl_approx"


_METHOD_LINK = {
    Method.DPO: ConvexLink.LOGISTIC,
    Method.SIMPO: ConvexLink.LOGISTIC,
    Method.ORPO: ConvexLink.LOGISTIC,
    Method.IPO: ConvexLink.SQUARE,
    Method.SLIC: ConvexLink.HINGE,
}

_DEFAULT_BETA = {Method.DPO: 0.1, Method.SIMPO: 2.0, Method.ORPO: 0.1,
                 Method.IPO: 1.0, Method.SLIC: 1.0}
_DEFAULT_GAMMA = {Method.SIMPO: 1.4}
_DEFAULT_ALPHA = {Method.DPO: 3.0, Method.SIMPO: 1.0, Method.ORPO: 1.0}

_NEEDS_REF = frozenset({Method.DPO, Method.IPO})


def method_link(method: Method) -> ConvexLink:
    """The convex link each algorithm optimizes through."""
    return _METHOD_LINK[method]


@dataclass
class MethodConfig:
    """Algorithm choice plus its hyperparameters.

    ``None`` hyperparameters are filled with the per-method defaults
    (DPO/ORPO beta=0.1, SimPO beta=2.0 gamma=1.4; alpha 3/1/1 for
    DPO/SimPO/ORPO and 1 otherwise; NLL term on for ORPO).
    """

    method: Method
    beta: float | None = None
    gamma: float | None = None
    eta: float = 1.0
    alpha: float | None = None
    ra_mode: RAMode = RAMode.CHOSEN_ONLY
    include_nll: bool | None = None

    def __post_init__(self) -> None:
        if self.beta is None:
            self.beta = _DEFAULT_BETA[self.method]
        if self.gamma is None:
            self.gamma = _DEFAULT_GAMMA.get(self.method, 0.0)
        if self.alpha is None:
            self.alpha = _DEFAULT_ALPHA.get(self.method, 1.0)
        if self.include_nll is None:
            self.include_nll = self.method is Method.ORPO
        if self.include_nll and self.method is not Method.ORPO:
            raise ValueError("include_nll is only meaningful for ORPO")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    @property
    def link(self) -> ConvexLink:
        return method_link(self.method)

    @property
    def needs_reference(self) -> bool:
        return self.method in _NEEDS_REF


@dataclass
class LogProbBundle:
    """Sequence log-probabilities (nats) for one preference record.

    ``w``/``l`` are the chosen/rejected responses, ``short``/``long`` the two
    context variants. Reference-policy fields are required exactly for the
    methods that use a reference (DPO, IPO). Lengths are response token counts.
    """

    lp_w_short: float
    lp_l_short: float
    lp_w_long: float
    lp_l_long: float
    len_w: int
    len_l: int
    ref_lp_w_short: float | None = None
    ref_lp_l_short: float | None = None
    ref_lp_w_long: float | None = None
    ref_lp_l_long: float | None = None

    def __post_init__(self) -> None:
        if self.len_w < 1 or self.len_l < 1:
            raise ValueError("response lengths must be >= 1")
        for name in ("lp_w_short", "lp_l_short", "lp_w_long", "lp_l_long"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")

    def has_reference(self) -> bool:
        return None not in (self.ref_lp_w_short, self.ref_lp_l_short,
                            self.ref_lp_w_long, self.ref_lp_l_long)


GRAD_FIELDS = (
    "lp_w_short", "lp_l_short", "lp_w_long", "lp_l_long",
    "ref_lp_w_short", "ref_lp_l_short", "ref_lp_w_long", "ref_lp_l_long",
)


@dataclass
class LossBreakdown:
    """total = po_term + alpha * ra_term + nll_term."""

    total: float
    po_term: float
    ra_term: float
    nll_term: float = 0.0


def _require_reference(cfg: MethodConfig, bundle: LogProbBundle) -> None:
    if cfg.needs_reference and not bundle.has_reference():
        raise ValueError(f"{cfg.method.value} requires reference log-probs")


def reward(cfg: MethodConfig, lp: float, ref_lp: float | None, length: int) -> float:
    """Method-specific reward of one response under one context.

    DPO: beta * (lp - ref_lp); SimPO: (beta / len) * lp; ORPO: log-odds of the
    length-normalized sequence probability p = exp(lp / len); IPO: lp - ref_lp;
    SLiC: lp. The DPO partition-function offset cancels in every margin and is
    dropped.
    """
    m = cfg.method
    if m is Method.DPO:
        if ref_lp is None:
            raise ValueError("dpo reward requires ref_lp")
        return cfg.beta * (lp - ref_lp)
    if m is Method.SIMPO:
        return cfg.beta / length * lp
    if m is Method.ORPO:
        return _log_odds(lp / length)
    if m is Method.IPO:
        if ref_lp is None:
            raise ValueError("ipo reward requires ref_lp")
        return lp - ref_lp
    if m is Method.SLIC:
        return lp
    raise ValueError(f"unknown method {m!r}")  # pragma: no cover


def _log_odds(t: float) -> float:
    """log(p / (1 - p)) for p = e^t, t <= 0, without forming p - 1 directly."""
    if t >= 0.0:
        raise ValueError("log-odds singularity: per-token log-prob >= 0 (p >= 1)")
    # log(1 - e^t): use expm1 near zero, log1p(-exp) otherwise.
    if t > -0.6931471805599453:
        log1m = math.log(-math.expm1(t))
    else:
        log1m = math.log1p(-math.exp(t))
    return t - log1m


def _log_odds_deriv(t: float) -> float:
    """d/dt log-odds(e^t) = 1 / (1 - e^t)."""
    if t >= 0.0:
        raise ValueError("log-odds singularity: per-token log-prob >= 0 (p >= 1)")
    return 1.0 / -math.expm1(t)


def _reward_deriv(cfg: MethodConfig, lp: float, length: int) -> tuple[float, float]:
    """(d reward / d lp, d reward / d ref_lp)."""
    m = cfg.method
    if m is Method.DPO:
        return cfg.beta, -cfg.beta
    if m is Method.SIMPO:
        return cfg.beta / length, 0.0
    if m is Method.ORPO:
        return _log_odds_deriv(lp / length) / length, 0.0
    if m is Method.IPO:
        return 1.0, -1.0
    if m is Method.SLIC:
        return 1.0, 0.0
    raise ValueError(f"unknown method {m!r}")  # pragma: no cover


def _short_margin_arg(cfg: MethodConfig, b: LogProbBundle) -> float:
    r_w = reward(cfg, b.lp_w_short, b.ref_lp_w_short, b.len_w)
    r_l = reward(cfg, b.lp_l_short, b.ref_lp_l_short, b.len_l)
    return cfg.eta * (r_w - r_l - cfg.gamma)


def po_loss(cfg: MethodConfig, b: LogProbBundle) -> float:
    """Short-context preference loss f(eta * (r_w - r_l - gamma)) (+ ORPO NLL)."""
    _require_reference(cfg, b)
    value = eval_link(cfg.link, _short_margin_arg(cfg, b))
    if cfg.method is Method.ORPO and cfg.include_nll:
        value += -b.lp_w_short / b.len_w
    return value


def _alignment_gap(cfg: MethodConfig, lp_short: float, lp_long: float,
                   ref_short: float | None, ref_long: float | None,
                   length: int) -> float:
    """r(x_short, y) - r(x_long, y) for one response.

    DPO intentionally drops the reference here (only the policy term is
    aligned); IPO keeps it.
    """
    if cfg.method is Method.DPO:
        return cfg.beta * (lp_short - lp_long)
    if cfg.method is Method.IPO:
        return (lp_short - ref_short) - (lp_long - ref_long)
    return (reward(cfg, lp_short, ref_short, length)
            - reward(cfg, lp_long, ref_long, length))


def _gap_penalty(cfg: MethodConfig, gap: float) -> float:
    # Square-link methods penalize the squared gap (shape of their envelope);
    # everything else uses the absolute gap.
    if cfg.link in (ConvexLink.SQUARE, ConvexLink.SQUARED_HINGE):
        return gap * gap
    return abs(gap)


def solo_ra_term(cfg: MethodConfig, b: LogProbBundle) -> float:
    """Short-to-long reward alignment penalty (unweighted by alpha).

    chosen_only: penalty on the chosen response's reward gap; both: mean of
    the chosen and rejected gaps; kl_approx: raw |lp_w_short - lp_w_long|.
    """
    _require_reference(cfg, b)
    mode = cfg.ra_mode
    if mode is RAMode.KL_APPROX:
        return abs(b.lp_w_short - b.lp_w_long)
    gap_w = _alignment_gap(cfg, b.lp_w_short, b.lp_w_long,
                           b.ref_lp_w_short, b.ref_lp_w_long, b.len_w)
    if mode is RAMode.CHOSEN_ONLY:
        return _gap_penalty(cfg, gap_w)
    gap_l = _alignment_gap(cfg, b.lp_l_short, b.lp_l_long,
                           b.ref_lp_l_short, b.ref_lp_l_long, b.len_l)
    return 0.5 * (_gap_penalty(cfg, gap_w) + _gap_penalty(cfg, gap_l))


def solopo_loss(cfg: MethodConfig, b: LogProbBundle) -> LossBreakdown:
    """Full objective, with components reported separately."""
    _require_reference(cfg, b)
    po = eval_link(cfg.link, _short_margin_arg(cfg, b))
    nll = -b.lp_w_short / b.len_w if (cfg.method is Method.ORPO and cfg.include_nll) else 0.0
    ra = solo_ra_term(cfg, b)
    return LossBreakdown(total=po + cfg.alpha * ra + nll,
                         po_term=po, ra_term=ra, nll_term=nll)


def _sign0(x: float) -> float:
    # Subgradient convention: 0 at the kink.
    return 0.0 if x == 0.0 else math.copysign(1.0, x)


def grad_solopo(cfg: MethodConfig, b: LogProbBundle) -> dict[str, float]:
    """Partial derivatives of the total loss w.r.t. all eight log-prob fields.

    Keys follow :data:`GRAD_FIELDS`; reference entries are zero unless the
    method differentiates through them (they never do — references are frozen
    inputs — but DPO/IPO rewards still carry the analytic -beta/-1 terms so
    finite differences over the raw fields agree).
    """
    _require_reference(cfg, b)
    g = {name: 0.0 for name in GRAD_FIELDS}

    # Preference term.
    z = _short_margin_arg(cfg, b)
    fz = link_deriv(cfg.link, z) * cfg.eta
    dw, dw_ref = _reward_deriv(cfg, b.lp_w_short, b.len_w)
    dl, dl_ref = _reward_deriv(cfg, b.lp_l_short, b.len_l)
    g["lp_w_short"] += fz * dw
    g["lp_l_short"] += -fz * dl
    g["ref_lp_w_short"] += fz * dw_ref
    g["ref_lp_l_short"] += -fz * dl_ref

    if cfg.method is Method.ORPO and cfg.include_nll:
        g["lp_w_short"] += -1.0 / b.len_w

    # Alignment term.
    a = cfg.alpha
    if a != 0.0:
        if cfg.ra_mode is RAMode.KL_APPROX:
            sgn = _sign0(b.lp_w_short - b.lp_w_long)
            g["lp_w_short"] += a * sgn
            g["lp_w_long"] += -a * sgn
        else:
            sides = [("w", b.lp_w_short, b.lp_w_long, b.len_w)]
            if cfg.ra_mode is RAMode.BOTH:
                sides.append(("l", b.lp_l_short, b.lp_l_long, b.len_l))
            weight = a if cfg.ra_mode is RAMode.CHOSEN_ONLY else 0.5 * a
            for tag, lp_s, lp_l, length in sides:
                ref_s = getattr(b, f"ref_lp_{tag}_short")
                ref_l = getattr(b, f"ref_lp_{tag}_long")
                gap = _alignment_gap(cfg, lp_s, lp_l, ref_s, ref_l, length)
                if cfg.link in (ConvexLink.SQUARE, ConvexLink.SQUARED_HINGE):
                    outer = 2.0 * gap
                else:
                    outer = _sign0(gap)
                ds, ds_ref = _gap_derivs(cfg, lp_s, length)
                dlng, dlng_ref = _gap_derivs(cfg, lp_l, length)
                g[f"lp_{tag}_short"] += weight * outer * ds
                g[f"lp_{tag}_long"] += -weight * outer * dlng
                g[f"ref_lp_{tag}_short"] += weight * outer * ds_ref
                g[f"ref_lp_{tag}_long"] += -weight * outer * dlng_ref
    return g


def _gap_derivs(cfg: MethodConfig, lp: float, length: int) -> tuple[float, float]:
    """(d gap-side / d lp, d gap-side / d ref_lp) for one context's reward."""
    if cfg.method is Method.DPO:
        return cfg.beta, 0.0  # reference dropped from the alignment gap
    return _reward_deriv(cfg, lp, length)
