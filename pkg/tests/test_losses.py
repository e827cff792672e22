"""Rewards, preference losses, alignment terms, and their gradients."""

import math
from dataclasses import replace

import numpy as np
import pytest

from shortlong.gradcheck import fd_gradient, random_bundle, relative_error
from shortlong.losses import (GRAD_FIELDS, LogProbBundle, Method, MethodConfig,
                              RAMode, grad_solopo, po_loss, reward, solo_ra_term,
                              solopo_loss)

ALL_METHODS = list(Method)
ALL_MODES = list(RAMode)


def make_bundle(rng, method):
    return random_bundle(rng, MethodConfig(method))


def full_bundle(**over):
    base = dict(lp_w_short=-3.0, lp_l_short=-5.0, lp_w_long=-4.0, lp_l_long=-6.0,
                len_w=2, len_l=3)
    base.update(over)
    return LogProbBundle(**base)


class TestDefaults:
    def test_per_method_defaults(self):
        assert MethodConfig(Method.DPO).beta == 0.1
        assert MethodConfig(Method.ORPO).beta == 0.1
        simpo = MethodConfig(Method.SIMPO)
        assert (simpo.beta, simpo.gamma) == (2.0, 1.4)
        assert MethodConfig(Method.DPO).alpha == 3.0
        assert MethodConfig(Method.SIMPO).alpha == 1.0
        assert MethodConfig(Method.ORPO).alpha == 1.0
        assert MethodConfig(Method.ORPO).include_nll is True
        assert MethodConfig(Method.DPO).include_nll is False

    def test_validation(self):
        with pytest.raises(ValueError):
            MethodConfig(Method.DPO, eta=0.0)
        with pytest.raises(ValueError):
            MethodConfig(Method.DPO, alpha=-1.0)
        with pytest.raises(ValueError):
            MethodConfig(Method.DPO, include_nll=True)


class TestReward:
    def test_simpo_length_normalized(self):
        cfg = MethodConfig(Method.SIMPO)  # beta 2.0
        assert reward(cfg, -10.0, None, 5) == pytest.approx(-4.0)

    def test_dpo_log_ratio(self):
        cfg = MethodConfig(Method.DPO)  # beta 0.1
        assert reward(cfg, -8.0, -10.0, 1) == pytest.approx(0.2)

    def test_orpo_even_odds(self):
        cfg = MethodConfig(Method.ORPO)
        assert reward(cfg, -math.log(2.0), None, 1) == pytest.approx(0.0, abs=1e-12)

    def test_orpo_singularity(self):
        cfg = MethodConfig(Method.ORPO)
        with pytest.raises(ValueError, match="singularity"):
            reward(cfg, 0.0, None, 4)

    def test_slic_and_ipo(self):
        assert reward(MethodConfig(Method.SLIC), -7.0, None, 3) == -7.0
        assert reward(MethodConfig(Method.IPO), -7.0, -9.0, 3) == 2.0

    def test_missing_reference(self):
        with pytest.raises(ValueError):
            reward(MethodConfig(Method.DPO), -7.0, None, 3)


class TestPoLoss:
    def test_policy_equals_reference_gives_log2(self):
        cfg = MethodConfig(Method.DPO, gamma=0.0, eta=1.0)
        b = full_bundle(ref_lp_w_short=-3.0, ref_lp_l_short=-5.0,
                        ref_lp_w_long=-4.0, ref_lp_l_long=-6.0)
        assert po_loss(cfg, b) == pytest.approx(math.log(2), abs=1e-12)

    def test_square_link_zero_at_margin(self):
        # margin exactly gamma -> link argument 0 -> loss 0
        cfg = MethodConfig(Method.IPO, gamma=2.0, eta=7.3)
        b = full_bundle(lp_w_short=-3.0, lp_l_short=-5.0,
                        ref_lp_w_short=-3.0, ref_lp_l_short=-3.0,
                        ref_lp_w_long=-3.0, ref_lp_l_long=-3.0)
        # reward margin = (lp_w - ref_w) - (lp_l - ref_l) = 0 - (-2) = 2 = gamma
        assert po_loss(cfg, b) == pytest.approx(0.0, abs=1e-12)

    def test_simpo_frozen_oracle_value(self):
        # -log sigmoid(2*(-2/2) - 2*(-6/2) - 1.4) = log1p(exp(-2.6)),
        # evaluated independently with the high-precision stdlib path.
        cfg = MethodConfig(Method.SIMPO, eta=1.0)
        b = full_bundle(lp_w_short=-2.0, lp_l_short=-6.0, len_w=2, len_l=2)
        assert po_loss(cfg, b) == pytest.approx(0.0716446919676698, abs=1e-12)

    def test_orpo_nll_term_included(self):
        cfg = MethodConfig(Method.ORPO)
        cfg_no = MethodConfig(Method.ORPO, include_nll=False)
        b = full_bundle()
        assert po_loss(cfg, b) - po_loss(cfg_no, b) == pytest.approx(3.0 / 2.0)


class TestAlignmentTerm:
    def test_zero_gap(self):
        for method in ALL_METHODS:
            cfg = MethodConfig(method)
            refs = {}
            if cfg.needs_reference:
                refs = dict(ref_lp_w_short=-1.0, ref_lp_l_short=-2.0,
                            ref_lp_w_long=-1.0, ref_lp_l_long=-2.0)
            b = full_bundle(lp_w_long=-3.0, lp_l_long=-5.0, **refs)
            assert solo_ra_term(cfg, b) == pytest.approx(0.0, abs=1e-15)

    def test_dpo_chosen_only_value(self):
        cfg = MethodConfig(Method.DPO)  # beta 0.1
        b = full_bundle(lp_w_short=-5.0, lp_w_long=-9.0,
                        ref_lp_w_short=-1.0, ref_lp_l_short=-1.0,
                        ref_lp_w_long=-1.0, ref_lp_l_long=-1.0)
        assert solo_ra_term(cfg, b) == pytest.approx(0.4, abs=1e-12)

    def test_dpo_kl_identity(self):
        """Chosen-only term is exactly beta times the raw log-prob gap."""
        rng = np.random.default_rng(0)
        cfg = MethodConfig(Method.DPO)
        kl_cfg = MethodConfig(Method.DPO, ra_mode=RAMode.KL_APPROX)
        for _ in range(2000):
            b = make_bundle(rng, Method.DPO)
            assert solo_ra_term(cfg, b) == pytest.approx(
                cfg.beta * solo_ra_term(kl_cfg, b), abs=1e-12)

    def test_simpo_kl_identity(self):
        rng = np.random.default_rng(1)
        cfg = MethodConfig(Method.SIMPO)
        kl_cfg = MethodConfig(Method.SIMPO, ra_mode=RAMode.KL_APPROX)
        for _ in range(2000):
            b = make_bundle(rng, Method.SIMPO)
            assert solo_ra_term(cfg, b) == pytest.approx(
                (cfg.beta / b.len_w) * solo_ra_term(kl_cfg, b), abs=1e-12)

    def test_both_mode_averages(self):
        cfg_b = MethodConfig(Method.SLIC, ra_mode=RAMode.BOTH)
        b = full_bundle()
        gap_w = abs(b.lp_w_short - b.lp_w_long)
        gap_l = abs(b.lp_l_short - b.lp_l_long)
        assert solo_ra_term(cfg_b, b) == pytest.approx(0.5 * (gap_w + gap_l))

    def test_square_link_squares_the_gap(self):
        cfg = MethodConfig(Method.IPO)
        b = full_bundle(ref_lp_w_short=-1.0, ref_lp_l_short=-1.0,
                        ref_lp_w_long=-2.0, ref_lp_l_long=-2.0)
        gap = (b.lp_w_short - (-1.0)) - (b.lp_w_long - (-2.0))
        assert solo_ra_term(cfg, b) == pytest.approx(gap * gap)


class TestTotalLoss:
    @pytest.mark.parametrize("method", ALL_METHODS)
    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_degeneration_long_equals_short(self, method, mode):
        """Copying short fields into long collapses the total to the plain loss."""
        rng = np.random.default_rng(11)
        for alpha in (0.0, 1.0, 3.7):
            cfg = MethodConfig(method, ra_mode=mode, alpha=alpha)
            b = make_bundle(rng, method)
            b = replace(b, lp_w_long=b.lp_w_short, lp_l_long=b.lp_l_short,
                        ref_lp_w_long=b.ref_lp_w_short, ref_lp_l_long=b.ref_lp_l_short)
            breakdown = solopo_loss(cfg, b)
            assert breakdown.ra_term == 0.0
            assert breakdown.total == pytest.approx(po_loss(cfg, b), abs=1e-12)

    def test_alpha_zero_equals_po(self):
        rng = np.random.default_rng(12)
        for method in ALL_METHODS:
            cfg = MethodConfig(method, alpha=0.0)
            b = make_bundle(rng, method)
            assert solopo_loss(cfg, b).total == pytest.approx(po_loss(cfg, b), abs=1e-15)

    def test_orpo_componentwise_recomposition(self):
        cfg = MethodConfig(Method.ORPO, alpha=1.0)
        b = full_bundle()
        bd = solopo_loss(cfg, b)
        po_only = po_loss(MethodConfig(Method.ORPO, include_nll=False), b)
        nll = -b.lp_w_short / b.len_w
        ra = solo_ra_term(cfg, b)
        assert bd.po_term == pytest.approx(po_only, abs=1e-15)
        assert bd.nll_term == pytest.approx(nll, abs=1e-15)
        assert bd.ra_term == pytest.approx(ra, abs=1e-15)
        assert bd.total == pytest.approx(po_only + ra + nll, abs=1e-12)

    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_recomposition_identity(self, method):
        rng = np.random.default_rng(13)
        for mode in ALL_MODES:
            cfg = MethodConfig(method, ra_mode=mode)
            b = make_bundle(rng, method)
            bd = solopo_loss(cfg, b)
            assert bd.total == pytest.approx(
                bd.po_term + cfg.alpha * bd.ra_term + bd.nll_term, abs=1e-12)

    def test_reference_required(self):
        b = full_bundle()
        with pytest.raises(ValueError, match="reference"):
            solopo_loss(MethodConfig(Method.DPO), b)


class TestGradients:
    def test_alpha_zero_long_grads_vanish(self):
        rng = np.random.default_rng(21)
        for method in ALL_METHODS:
            cfg = MethodConfig(method, alpha=0.0)
            g = grad_solopo(cfg, make_bundle(rng, method))
            assert g["lp_w_long"] == 0.0
            assert g["lp_l_long"] == 0.0

    def test_dpo_chosen_only_long_grad_constant(self):
        # When the chosen short reward exceeds the long one, the alignment
        # derivative w.r.t. the long log-prob is exactly -alpha * beta.
        cfg = MethodConfig(Method.DPO, alpha=2.0)
        b = full_bundle(lp_w_short=-3.0, lp_w_long=-9.0,
                        ref_lp_w_short=-1.0, ref_lp_l_short=-1.0,
                        ref_lp_w_long=-1.0, ref_lp_l_long=-1.0)
        g = grad_solopo(cfg, b)
        assert g["lp_w_long"] == pytest.approx(-cfg.alpha * cfg.beta, abs=1e-15)

    @pytest.mark.parametrize("method", ALL_METHODS)
    @pytest.mark.parametrize("mode", ALL_MODES)
    def test_matches_finite_differences(self, method, mode):
        rng = np.random.default_rng(31)
        cfg = MethodConfig(method, ra_mode=mode)
        worst = 0.0
        for _ in range(200):
            b = random_bundle(rng, cfg)
            analytic = grad_solopo(cfg, b)
            numeric = fd_gradient(cfg, b, h=1e-5)
            worst = max(worst, max(relative_error(analytic[k], numeric[k])
                                   for k in GRAD_FIELDS))
        assert worst < 1e-5

    def test_singularity_propagates(self):
        cfg = MethodConfig(Method.ORPO)
        b = full_bundle(lp_w_short=0.0)
        with pytest.raises(ValueError, match="singularity"):
            grad_solopo(cfg, b)


class TestBundleValidation:
    def test_lengths_positive(self):
        with pytest.raises(ValueError):
            full_bundle(len_w=0)

    def test_finite_required(self):
        with pytest.raises(ValueError):
            full_bundle(lp_w_short=float("nan"))
