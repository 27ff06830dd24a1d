import csv
import io
import json

import numpy as np
import pytest

from betadarts.autograd import Parameter
from betadarts.datasets import SPLITS, SyntheticDataset, make_dataset
from betadarts.regularize import Family
from betadarts.search import (CSV_COLUMNS, AdamState, DivergenceError, SearchConfig, adaptive_alpha_step,
                              momentum_w_step, plain_alpha_step, search)
from betadarts.space import build_space, discretize
from betadarts.supernet import beta_from_alpha

OPS = ["zero", "skip", "meanpool", "linrelu"]


@pytest.fixture(scope="module")
def space():
    return build_space(3, OPS, 4)


@pytest.fixture(scope="module")
def rings():
    return make_dataset("rings", 256, 4, 2, 0.2, 0)


def constant_dataset(n=256, width=4):
    """All-zero features: every op outputs zero, so the alpha loss gradient vanishes."""
    splits = {k: np.arange(i, n, 4) for i, k in enumerate(SPLITS)}
    return SyntheticDataset(np.zeros((n, width)), np.arange(n) % 2, splits, {"classes": 2})


@pytest.fixture(scope="module")
def alpha0():
    return np.random.default_rng(0).normal(scale=1.5, size=(3, 4))


def quick(**kw):
    base = dict(epochs=3, batch_size=16, alpha_lr=3e-3)
    base.update(kw)
    return SearchConfig(**base)


class TestAdaptiveStep:
    def test_zero_grads_unchanged(self, rng):
        a = rng.normal(size=(3, 4))
        assert np.array_equal(adaptive_alpha_step(a, AdamState.like(a), np.zeros_like(a), 0.1), a)

    def test_first_step_by_hand(self):
        a = np.array([[0.5, -1.0, 2.0]])
        g = np.array([[0.3, -2.0, 1e-3]])
        eta, eps = 0.01, 1e-8
        # bias correction makes m_hat = g and v_hat = g**2 on step one
        want = a - eta * g / (np.abs(g) + eps)
        got = adaptive_alpha_step(a, AdamState.like(a), g, eta, 0.5, 0.999, eps)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
        np.testing.assert_allclose(got, [[0.49, -0.99, 1.99]], atol=1e-7)

    def test_second_step_by_hand(self):
        a, g1, g2 = np.zeros(1), np.array([1.0]), np.array([3.0])
        st = AdamState.like(a)
        a1 = adaptive_alpha_step(a, st, g1, 0.1)
        a2 = adaptive_alpha_step(a1, st, g2, 0.1)
        m = (0.5 * 0.5 * 1.0 + 0.5 * 3.0) / (1 - 0.25)
        v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1 - 0.999 ** 2)
        assert a2[0] == pytest.approx(-0.1 / (1 + 1e-8) - 0.1 * m / (np.sqrt(v) + 1e-8), abs=1e-14)
        assert st.t == 2

    def test_weight_decay_closed_form(self, rng):
        a = rng.normal(size=(3, 4))
        got = adaptive_alpha_step(a, AdamState.like(a), np.zeros_like(a), 0.01, family=Family.WEIGHT_DECAY, lam=3.0)
        np.testing.assert_allclose(got, a * (1 - 0.03), rtol=0, atol=1e-15)

    def test_l2_enters_moments(self):
        a = np.array([2.0, -4.0])
        got = adaptive_alpha_step(a, AdamState.like(a), np.zeros(2), 0.1, family=Family.L2, lam=0.5)
        np.testing.assert_allclose(got, a - 0.1 * np.sign(a), atol=1e-8)

    def test_plain_step(self, rng):
        a, g = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        np.testing.assert_allclose(plain_alpha_step(a, g, 0.1), a - 0.1 * g, atol=1e-15)
        np.testing.assert_allclose(plain_alpha_step(a, 0 * g, 0.1, Family.WEIGHT_DECAY, 2.0), a * 0.8, atol=1e-15)


class TestMomentum:
    def test_mu_zero_is_sgd(self, rng):
        p = Parameter(rng.normal(size=3))
        p.grad = np.array([1.0, -2.0, 0.5])
        w0 = p.value.copy()
        momentum_w_step([p], [np.zeros(3)], 0.1, 0.0)
        np.testing.assert_allclose(p.value, w0 - 0.1 * p.grad, atol=1e-15)

    def test_zero_grad_zero_velocity(self, rng):
        p = Parameter(rng.normal(size=3))
        w0 = p.value.copy()
        momentum_w_step([p], [np.zeros(3)], 0.1, 0.9)
        assert np.array_equal(p.value, w0)

    def test_two_steps(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([1.0, -2.0])
        vel = [np.zeros(2)]
        momentum_w_step([p], vel, 0.1, 0.9)
        momentum_w_step([p], vel, 0.1, 0.9)
        np.testing.assert_allclose(p.value, -0.1 * (1 + 1.9) * p.grad, atol=1e-15)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(alpha_lr=-1), dict(w_lr=-0.1),
                                    dict(alpha_beta1=1.0), dict(lam=-1), dict(reg="dropout"),
                                    dict(schedule="cosine"), dict(alpha_optimizer="rmsprop")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SearchConfig(**kw)

    def test_lambda_dispatch(self):
        assert SearchConfig(reg="none", lam=5).lambda_for(3) == 0
        assert SearchConfig(reg="weight_decay", lam=3e-3).lambda_for(3) == 3e-3
        assert SearchConfig(reg="beta_decay", epochs=11, lambda_end=50).lambda_for(6) == 25

    def test_to_dict_round_trip(self):
        c = SearchConfig(reg="beta_decay", lambda_end=7.0)
        assert SearchConfig(**c.to_dict()) == c


class TestSearch:
    def test_noop(self, space, rings):
        tr = search(space, rings, SearchConfig(epochs=1, alpha_lr=0.0, w_lr=0.0))
        assert np.array_equal(tr.final_alpha, tr.initial_alpha)
        assert tr.final_genotype.choices == (0, 0, 0)

    def test_record_count_and_genotypes(self, space, rings):
        tr = search(space, rings, quick(epochs=4))
        assert [r.epoch for r in tr.records] == [1, 2, 3, 4]
        for rec, snap in zip(tr.records, tr.alphas):
            assert rec.genotype == discretize(snap, space)

    def test_deterministic(self, space, rings):
        cfg = quick(reg="beta_decay", lambda_end=5.0)
        a, b = search(space, rings, cfg), search(space, rings, cfg)
        assert a.to_csv() == b.to_csv()
        assert a.alphas_jsonl() == b.alphas_jsonl()

    def test_seed_matters(self, space, rings):
        assert search(space, rings, quick(seed=0)).to_csv() != search(space, rings, quick(seed=1)).to_csv()

    def test_zero_lambda_beta_decay_is_no_decay(self, space, rings):
        nd = search(space, rings, quick(reg="none"))
        bd = search(space, rings, quick(reg="beta_decay", lambda_end=0.0))
        for x, y in zip(nd.alphas, bd.alphas):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
        assert nd.to_csv() == bd.to_csv()

    def test_data_hygiene(self, space, rings):
        tr = search(space, rings, quick(epochs=2))
        half = len(rings.splits["search_val"])
        assert tr.data_access == {"alpha": {"search_val": 2 * half}, "w": {"search_train": 2 * half}}

    def test_csv_layout(self, space, rings):
        tr = search(space, rings, quick(epochs=2, reg="beta_decay"))
        rows = list(csv.reader(io.StringIO(tr.to_csv())))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == 3
        assert float(rows[2][1]) == 5e1

    def test_alpha_sidecar(self, space, rings):
        tr = search(space, rings, quick(epochs=2))
        lines = [json.loads(s) for s in tr.alphas_jsonl().splitlines()]
        assert [d["epoch"] for d in lines] == [0, 1, 2]
        assert np.array_equal(np.array(lines[-1]["alpha"]), tr.final_alpha)

    def test_reg_loss_recorded_scaled(self, space, rings):
        tr = search(space, rings, quick(epochs=1, reg="beta_decay", schedule="constant", lambda_end=2.0))
        assert tr.records[0].reg_loss > 0
        assert tr.records[0].lam == 2.0

    def test_divergence_reports_epoch(self, space, rings):
        with pytest.raises(DivergenceError, match="epoch 1"):
            search(space, rings, quick(w_lr=1e6, w_momentum=0.0))

    def test_width_mismatch(self, rings):
        with pytest.raises(ValueError, match="width"):
            search(build_space(3, OPS, 5), rings, quick())

    def test_weight_decay_family_runs(self, space, rings):
        tr = search(space, rings, quick(reg="weight_decay", lam=3e-3))
        assert tr.config.family is Family.WEIGHT_DECAY and len(tr.records) == 3


class TestGradFreeProbe:
    """With a constant dataset only the decay term moves alpha."""

    def test_beta_decay_variance_shrinks(self, space, alpha0):
        tr = search(space, constant_dataset(), SearchConfig(epochs=50, reg="beta_decay", lambda_end=50), alpha0)
        before = beta_from_alpha(alpha0).var(axis=1)
        after = beta_from_alpha(tr.final_alpha).var(axis=1)
        assert np.all(after < before)

    def test_adaptive_step_only_shifts(self, space, alpha0):
        # Adam normalizes each coordinate, so a pure-decay step moves every
        # alpha by nearly the same amount and beta barely changes
        tr = search(space, constant_dataset(), SearchConfig(epochs=50, reg="beta_decay"), alpha0)
        shift = tr.final_alpha - alpha0
        assert np.ptp(shift) < 1e-8
        rel = 1 - beta_from_alpha(tr.final_alpha).var(axis=1) / beta_from_alpha(alpha0).var(axis=1)
        assert np.all(rel < 1e-8)

    def test_plain_step_contracts_clearly(self, space, alpha0):
        cfg = SearchConfig(epochs=50, reg="beta_decay", alpha_optimizer="sgd", alpha_lr=3e-3)
        tr = search(space, constant_dataset(), cfg, alpha0)
        rel = 1 - beta_from_alpha(tr.final_alpha).var(axis=1) / beta_from_alpha(alpha0).var(axis=1)
        assert np.all(rel > 0.2)
