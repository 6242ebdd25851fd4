import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sclbench.autodiff import Tensor
from sclbench.objectives import (ContrastBatch, ObjectiveConfig, combine, cross_entropy,
                                 infonce, lcl_loss, ntxent, positives)

from helpers import (central_diff, cross_entropy_brute, infonce_brute, max_rel_err,
                     ntxent_brute)


def random_contrast_batch(seed, n=None, num_classes=3, d=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 5))
    d = d or int(rng.integers(2, 6))
    labels = rng.integers(0, num_classes, n)
    reps = rng.normal(size=(2 * n, d))
    return ContrastBatch(Tensor(reps), np.concatenate([labels, labels]))


class TestCrossEntropy:
    def test_uniform_three_classes(self):
        probs = Tensor(np.full((5, 3), 1 / 3))
        assert cross_entropy(probs, np.zeros(5, dtype=int)).item() == pytest.approx(math.log(3), abs=1e-9)

    def test_one_hot_correct_is_zero(self):
        probs = Tensor(np.eye(3))
        assert cross_entropy(probs, np.arange(3)).item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(4), size=6)
        labels = rng.integers(0, 4, 6)
        assert cross_entropy(Tensor(probs), labels).item() == pytest.approx(
            cross_entropy_brute(probs, labels), abs=1e-9)

    def test_zero_probability_clamped_not_nan(self):
        probs = np.array([[1.0, 0.0], [0.5, 0.5]])
        loss = cross_entropy(Tensor(probs), np.array([1, 0])).item()
        assert np.isfinite(loss) and loss > 0

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.full((2, 2), 0.5)), np.array([0, 2]))


class TestNtxent:
    def test_single_positive_pair_is_zero(self):
        rng = np.random.default_rng(0)
        batch = ContrastBatch(Tensor(rng.normal(size=(2, 4))), np.array([1, 1]))
        assert ntxent(batch, 0.3).item() == pytest.approx(0.0, abs=1e-9)

    def test_identical_rows_same_class_log3_each(self):
        row = np.random.default_rng(1).normal(size=4)
        batch = ContrastBatch(Tensor(np.tile(row, (4, 1))), np.array([0, 0, 0, 0]))
        assert ntxent(batch, 0.3).item() == pytest.approx(4 * math.log(3), abs=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        batch = random_contrast_batch(seed)
        tau = float(np.random.default_rng(seed).uniform(0.1, 1.0))
        assert ntxent(batch, tau).item() == pytest.approx(
            ntxent_brute(batch.representations.values, batch.labels, tau), abs=1e-6)

    def test_too_few_rows_and_bad_tau(self):
        with pytest.raises(ValueError):
            ntxent(ContrastBatch(Tensor(np.ones((2, 3))), np.array([0, 0])), -1.0)

    def test_anchor_terms_nonnegative_and_empty_positive_skipped(self):
        # one class has a single (origin, view) pair; the other anchors keep it company
        reps = np.random.default_rng(3).normal(size=(6, 4))
        labels = np.array([0, 1, 1, 0, 1, 1])
        batch = ContrastBatch(Tensor(reps), labels)
        assert ntxent(batch, 0.3).item() >= 0.0


class TestInfonce:
    def test_identical_rows_log3(self):
        z = Tensor(np.tile(np.random.default_rng(0).normal(size=5), (4, 1)))
        assert infonce(z, 0.3).item() == pytest.approx(math.log(3), abs=1e-6)

    def test_large_tau_limit(self):
        z = Tensor(np.random.default_rng(1).normal(size=(6, 4)))
        assert infonce(z, 1e9).item() == pytest.approx(math.log(5), abs=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("both", [True, False])
    def test_matches_brute_force(self, seed, both):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        z = rng.normal(size=(2 * n, 4))
        tau = float(rng.uniform(0.1, 1.0))
        assert infonce(Tensor(z), tau, both).item() == pytest.approx(
            infonce_brute(z, tau, both), abs=1e-6)


class TestLcl:
    def test_uniform_weights_reduce_to_ntxent_bitwise(self):
        batch = random_contrast_batch(11, num_classes=3)
        uniform = np.full((batch.representations.shape[0], 3), 1 / 3)
        assert lcl_loss(batch, uniform, 0.3).item() == ntxent(batch, 0.3).item()

    def test_single_pair_zero_regardless_of_weights(self):
        rng = np.random.default_rng(2)
        batch = ContrastBatch(Tensor(rng.normal(size=(2, 3))), np.array([0, 0]))
        w = rng.dirichlet(np.ones(2), size=2)
        assert lcl_loss(batch, w, 0.3).item() == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        batch = random_contrast_batch(seed + 100)
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(3), size=batch.representations.shape[0])
        tau = float(rng.uniform(0.1, 1.0))
        assert lcl_loss(batch, w, tau).item() == pytest.approx(
            ntxent_brute(batch.representations.values, batch.labels, tau, w), abs=1e-6)

    def test_nonpositive_weight_rejected(self):
        batch = random_contrast_batch(4)
        w = np.full((batch.representations.shape[0], 3), 1 / 3)
        w[0, 0] = 0.0
        with pytest.raises(ValueError, match="positive"):
            lcl_loss(batch, w, 0.3)


class TestCombine:
    def test_scl_lambda_zero_is_ce(self):
        assert combine("scl", {"ce": Tensor(np.array(0.7)), "contrast": Tensor(np.array(9.9))},
                       lam=0.0).item() == pytest.approx(0.7)

    def test_scl_midpoint(self):
        out = combine("scl", {"ce": Tensor(np.array(0.8)), "contrast": Tensor(np.array(1.2))}, lam=0.5)
        assert out.item() == pytest.approx(1.0)

    def test_cat_formula(self):
        losses = {"ce": Tensor(np.array(1.0)), "ce_perturbed": Tensor(np.array(3.0)),
                  "contrast": Tensor(np.array(0.5))}
        assert combine("cat", losses, lam=0.5).item() == pytest.approx(0.25 * 4.0 + 0.25)

    def test_lcl_lambda_zero_is_sum_of_ces(self):
        losses = {"ce": Tensor(np.array(0.4)), "ce_weighting": Tensor(np.array(0.6)),
                  "contrast": Tensor(np.array(5.0))}
        assert combine("lcl", losses, lam=0.0).item() == pytest.approx(1.0)

    def test_missing_constituent_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            combine("scl", {"ce": Tensor(np.array(1.0))})

    def test_defaults_from_config(self):
        cfg = ObjectiveConfig(method="scl")
        assert cfg.lam == 0.5 and cfg.tau == 0.3

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ObjectiveConfig(method="xyz")
        with pytest.raises(ValueError):
            ObjectiveConfig(method="scl", tau=0.0)
        with pytest.raises(ValueError):
            ObjectiveConfig(method="cat", epsilon=0.0)


class TestInvariances:
    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        labels = rng.integers(0, 3, 2 * n)
        reps = rng.normal(size=(2 * n, 4))
        perm = rng.permutation(2 * n)
        base = ntxent_like(reps, labels, 0.3)
        shuffled = ntxent_like(reps[perm], labels[perm], 0.3)
        assert shuffled == pytest.approx(base, abs=1e-6)

    @given(st.floats(min_value=0.01, max_value=100.0))
    @settings(max_examples=25, deadline=None)
    def test_cosine_scale_invariance(self, scale):
        batch = random_contrast_batch(77)
        scaled = ContrastBatch(Tensor(batch.representations.values * scale), batch.labels)
        assert ntxent(scaled, 0.3).item() == pytest.approx(ntxent(batch, 0.3).item(), abs=1e-6)
        w = np.random.default_rng(0).dirichlet(np.ones(3), size=batch.representations.shape[0])
        assert lcl_loss(scaled, w, 0.3).item() == pytest.approx(lcl_loss(batch, w, 0.3).item(), abs=1e-6)
        z = batch.representations
        assert infonce(Tensor(z.values * scale), 0.3).item() == pytest.approx(
            infonce(z, 0.3).item(), abs=1e-6)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        n = 3
        labels = np.concatenate([rng.integers(0, 2, n)] * 2)
        reps = Tensor(rng.normal(size=(2 * n, 4)), requires_grad=True)
        w = rng.dirichlet(np.ones(2), size=2 * n)
        cases = {
            "ntxent": lambda: ntxent(ContrastBatch(reps, labels), 0.3),
            "lcl": lambda: lcl_loss(ContrastBatch(reps, labels), w, 0.3),
            "infonce": lambda: infonce(reps, 0.3),
        }
        for name, build in cases.items():
            reps.zero_grad()
            build().backward()
            numeric = central_diff(lambda: build().item(), reps, step=1e-6)
            assert max_rel_err(reps.grad, numeric, floor=1e-3) < 1e-4, name


def ntxent_like(reps, labels, tau):
    # ContrastBatch enforces the view pairing, so invariance over arbitrary
    # permutations is checked through the raw kernel
    from sclbench.objectives import _weighted_ntxent
    return _weighted_ntxent(Tensor(reps), labels, tau, None).item()


def test_positive_sets():
    labels = np.array([0, 1, 0, 1])
    p = positives(labels)
    assert list(p[0]) == [2] and list(p[1]) == [3]
