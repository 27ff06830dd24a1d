import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betadarts.autograd import Graph, Parameter, finite_difference, sigmoid, stable_softmax
from betadarts.regularize import (Family, adaptive_first_step, beta_decay_loss, beta_global_loss, beta_zero_loss,
                                  decay_map, predicted_beta_ratio, reg_loss_node, simulate_ratio, theta_factors)
from betadarts.search import AdamState, adaptive_alpha_step


def autodiff(family, alpha, printed=False):
    p = Parameter(alpha)
    g = Graph()
    root = reg_loss_node(g, g.param(p), family, printed)
    value = float(g.forward(root=root))
    g.backward(root)
    return value, p.grad


def random_instance(rng, ops=None):
    ops = ops or rng.integers(2, 7)
    return (rng.normal(scale=rng.uniform(0.1, 4), size=ops), rng.normal(size=ops),
            rng.uniform(1e-3, 1.0), rng.uniform(0.0, 10.0))


class TestLosses:
    def test_beta_decay_equal(self):
        assert beta_decay_loss([[0, 0, 0]]) == pytest.approx(math.log(3), abs=1e-12)

    def test_beta_decay_direct(self):
        assert beta_decay_loss([[1.0, 0.0]]) == pytest.approx(math.log(1 + math.e), abs=1e-12)
        assert beta_decay_loss([[1.0, 0.0]]) == pytest.approx(1.3132617, abs=1e-7)

    def test_beta_decay_mean(self):
        assert beta_decay_loss(np.zeros((2, 3))) == pytest.approx(math.log(3), abs=1e-12)

    def test_beta_global(self):
        assert beta_global_loss(np.zeros((2, 3))) == pytest.approx(math.log(6), abs=1e-12)
        assert beta_global_loss(np.zeros((2, 3))) == pytest.approx(1.7917595, abs=1e-7)
        row = np.array([[0.3, -1.0, 2.0]])
        assert beta_global_loss(row) == pytest.approx(beta_decay_loss(row), abs=1e-14)

    def test_beta_zero(self):
        assert beta_zero_loss([[0.0]]) == pytest.approx(math.log(2), abs=1e-12)
        assert beta_zero_loss([[-30.0]]) < 1e-12

    def test_beta_zero_printed(self):
        assert beta_zero_loss([[0.0]], printed=True) == pytest.approx(-math.log(2), abs=1e-12)

    def test_non_finite(self):
        for fn in (beta_decay_loss, beta_global_loss, beta_zero_loss):
            with pytest.raises(ValueError):
                fn([[np.nan, 0.0]])

    def test_graph_values_agree(self, rng):
        a = rng.normal(size=(3, 4))
        assert autodiff(Family.BETA_DECAY, a)[0] == pytest.approx(beta_decay_loss(a), abs=1e-14)
        assert autodiff(Family.BETA_GLOBAL, a)[0] == pytest.approx(beta_global_loss(a), abs=1e-14)
        assert autodiff(Family.BETA_ZERO, a)[0] == pytest.approx(beta_zero_loss(a), abs=1e-14)
        assert autodiff(Family.BETA_ZERO, a, True)[0] == pytest.approx(beta_zero_loss(a, True), abs=1e-14)

    def test_no_loss_for_other_families(self):
        g = Graph()
        a = g.constant(np.zeros((2, 2)))
        for fam in (Family.NONE, Family.L2, Family.WEIGHT_DECAY):
            assert reg_loss_node(g, a, fam) is None


class TestGradients:
    def test_beta_decay_gradient_is_softmax_over_edges(self, rng):
        for _ in range(200):
            a = rng.normal(scale=3, size=(rng.integers(1, 6), rng.integers(2, 6)))
            _, grad = autodiff(Family.BETA_DECAY, a)
            np.testing.assert_allclose(grad, stable_softmax(a) / a.shape[0], atol=1e-10, rtol=0)

    def test_beta_global_gradient_sums_to_one(self, rng):
        a = rng.normal(size=(3, 4))
        _, grad = autodiff(Family.BETA_GLOBAL, a)
        assert grad.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(grad, decay_map(Family.BETA_GLOBAL, a), atol=1e-14)

    def test_beta_zero_gradient_sigmoid(self, rng):
        a = rng.normal(size=(2, 3))
        a[0, 0] = 0.0
        _, grad = autodiff(Family.BETA_ZERO, a)
        np.testing.assert_allclose(grad * a.size, sigmoid(a), atol=1e-14)
        assert grad[0, 0] * a.size == pytest.approx(0.5)
        _, grad = autodiff(Family.BETA_ZERO, a, printed=True)
        np.testing.assert_allclose(grad * a.size, sigmoid(-a), atol=1e-14)

    @pytest.mark.parametrize("family", [Family.BETA_DECAY, Family.BETA_GLOBAL, Family.BETA_ZERO])
    def test_losses_match_fd(self, rng, family):
        fns = {Family.BETA_DECAY: beta_decay_loss, Family.BETA_GLOBAL: beta_global_loss,
               Family.BETA_ZERO: beta_zero_loss}
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            _, grad = autodiff(family, a)
            np.testing.assert_allclose(grad, finite_difference(fns[family], a.copy()), rtol=1e-6, atol=1e-9)


class TestRatio:
    FAMILIES = [Family.NONE, Family.L2, Family.WEIGHT_DECAY, Family.BETA_DECAY, Family.BETA_GLOBAL,
                Family.BETA_ZERO]

    @pytest.mark.parametrize("family", FAMILIES)
    def test_lambda_zero_is_identity(self, rng, family):
        a, g, eta, _ = random_instance(rng)
        np.testing.assert_allclose(predicted_beta_ratio(a, g, eta, 0.0, family), 1.0, atol=1e-12)
        np.testing.assert_allclose(simulate_ratio(a, g, eta, 0.0, family), 1.0, atol=1e-12)

    def test_equal_alpha_beta_decay(self, rng):
        np.testing.assert_allclose(predicted_beta_ratio(np.full(4, 1.7), rng.normal(size=4), 0.3, 5.0,
                                                        Family.BETA_DECAY), 1.0, atol=1e-12)

    def test_worked_example(self):
        a, g = np.array([1.0, 0.0]), np.zeros(2)
        pred = predicted_beta_ratio(a, g, 0.1, 1.0, Family.BETA_DECAY)
        sim = simulate_ratio(a, g, 0.1, 1.0, Family.BETA_DECAY)
        np.testing.assert_allclose(pred, sim, rtol=1e-10)
        assert pred[0] < 1 < pred[1]

    def test_weight_decay_equal_alpha(self, rng):
        for c in (-3.0, 0.0, 4.2):
            np.testing.assert_allclose(simulate_ratio([c, c], rng.normal(size=2), 0.5, 3.0, Family.WEIGHT_DECAY),
                                       [1, 1], atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_oracle_equivalence(self, rng, family):
        for _ in range(1000):
            a, g, eta, lam = random_instance(rng)
            pred = predicted_beta_ratio(a, g, eta, lam, family)
            sim = simulate_ratio(a, g, eta, lam, family)
            np.testing.assert_allclose(pred, sim, rtol=1e-8)

    def test_oracle_equivalence_tables(self, rng):
        for family in (Family.BETA_DECAY, Family.BETA_GLOBAL):
            a, g = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
            np.testing.assert_allclose(predicted_beta_ratio(a, g, 0.2, 4.0, family),
                                       simulate_ratio(a, g, 0.2, 4.0, family), rtol=1e-8)

    def test_printed_beta_zero_equivalence(self, rng):
        a, g, eta, lam = random_instance(rng)
        np.testing.assert_allclose(predicted_beta_ratio(a, g, eta, lam, Family.BETA_ZERO, printed_zero=True),
                                   simulate_ratio(a, g, eta, lam, Family.BETA_ZERO, printed_zero=True), rtol=1e-8)

    def test_l2_matches_optimizer(self, rng):
        # the L2 simulation must be the optimizer's actual first step
        a, g = rng.normal(size=4), rng.normal(size=4)
        reg = adaptive_alpha_step(a, AdamState.like(a), g, 0.05, family=Family.L2, lam=2.0)
        plain = adaptive_alpha_step(a, AdamState.like(a), g, 0.05)
        np.testing.assert_allclose(a - adaptive_first_step(g + 2.0 * a, 0.05), reg, atol=1e-15)
        np.testing.assert_allclose(simulate_ratio(a, g, 0.05, 2.0, Family.L2),
                                   stable_softmax(reg) / stable_softmax(plain), rtol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
    @settings(max_examples=200, deadline=None)
    def test_beta_decay_shift_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        a, g, eta, lam = random_instance(rng)
        base = predicted_beta_ratio(a, g, eta, lam, Family.BETA_DECAY)
        np.testing.assert_allclose(predicted_beta_ratio(a + c, g, eta, lam, Family.BETA_DECAY), base,
                                   atol=1e-10, rtol=0)
        np.testing.assert_allclose(theta_factors(a + c, g, eta, lam).theta, theta_factors(a, g, eta, lam).theta,
                                   atol=1e-10, rtol=0)

    @given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
    @settings(max_examples=200, deadline=None)
    def test_weight_decay_depends_on_differences(self, seed, c):
        rng = np.random.default_rng(seed)
        a, g, eta, lam = random_instance(rng)
        # shifting alpha shifts every F equally, which cancels in F_k - F_k'
        np.testing.assert_allclose(predicted_beta_ratio(a + c, g, eta, lam, Family.WEIGHT_DECAY),
                                   predicted_beta_ratio(a, g, eta, lam, Family.WEIGHT_DECAY), rtol=1e-9)

    def test_no_closed_form_for_l2_mapping(self):
        with pytest.raises(ValueError):
            decay_map(Family.L2, [0.0, 1.0])


class TestTheta:
    def test_equal_alpha(self, rng):
        rep = theta_factors(np.full((2, 4), -0.7), rng.normal(size=(2, 4)), 0.1, 5.0)
        np.testing.assert_allclose(rep.theta, 1.0, atol=1e-12)

    def test_ordering_example(self):
        a = np.array([2.0, 0.0, -2.0])
        theta = theta_factors(a, np.zeros(3), 0.1, 5.0).theta[0]
        assert theta[0] < theta[1] < theta[2]
        assert theta[0] < 1 < theta[2]
        np.testing.assert_allclose(theta, simulate_ratio(a, np.zeros(3), 0.1, 5.0, Family.BETA_DECAY), rtol=1e-10)

    def test_laws_random(self, rng):
        for _ in range(1000):
            a, g, eta, lam = random_instance(rng)
            lam = max(lam, 1e-2)
            theta = theta_factors(a, g, eta, lam).theta[0]
            order = np.argsort(-a, kind="stable")
            assert theta[order[0]] < 1 < theta[order[-1]]
            ranked = theta[order]
            assert np.all(np.diff(ranked) >= -1e-15)

    def test_report_metadata(self):
        rep = theta_factors(np.zeros(3), np.zeros(3), 0.1, 2.0, step=7)
        assert (rep.lam, rep.eta, rep.step) == (2.0, 0.1, 7)
        assert np.all(rep.theta > 0)


class TestContraction:
    def test_pure_decay_step_contracts(self, rng):
        for _ in range(1000):
            a = rng.normal(scale=rng.uniform(0.1, 4), size=rng.integers(2, 7))
            if np.ptp(a) < 1e-6:
                continue
            eta, lam = rng.uniform(1e-3, 0.1), rng.uniform(1e-2, 10)
            b0 = stable_softmax(a)
            b1 = stable_softmax(a - eta * lam * decay_map(Family.BETA_DECAY, a))
            assert b1.var() < b0.var()
            assert b1.max() < b0.max()
            assert np.linalg.norm(b1) < np.linalg.norm(b0)
