import itertools
import math

import numpy as np
import pytest
from scipy import stats

from semibandit_bic.core import (
    Arm, BetaPrior, DiscretePrior, Instance, MSubsetFamily, ProductPrior, RngStream,
    TwoArmJointPrior, singletons,
)
from semibandit_bic.errors import BootstrapUnderfilled, DegenerateFamily, DegeneratePrior
from semibandit_bic.logs import SegmentLog
from semibandit_bic.posterior import PosteriorState, argmax_distribution, joint_posterior_support, sample_posterior_batch
from semibandit_bic.thompson import (
    ExogenousBootstrap, ThompsonSampling, TwoArmThompson, check_prior_assumptions,
    estimate_ts_constants, n_ts_formula, run_composite, run_two_arm_correlated, ts_step,
)


def two_point(lo, hi, p=0.5):
    return DiscretePrior.from_pairs([(lo, 1 - p), (hi, p)])


class TestTsStep:
    def test_point_posterior_is_deterministic(self):
        prior = ProductPrior((DiscretePrior.point(0.2), DiscretePrior.point(0.7)))
        state = PosteriorState.fresh(prior)
        rng = RngStream(0)
        assert all(ts_step(state, singletons(2), rng).atoms == (1,) for _ in range(50))

    def test_uniform_vs_half(self):
        prior = ProductPrior((BetaPrior(1, 1), DiscretePrior.point(0.5)))
        draws = sample_posterior_batch(prior, np.zeros((100_000, 2)), np.zeros((100_000, 2)), RngStream(1).gen)
        masks = singletons(2).best_masks(draws)
        assert abs(np.mean(masks == 1) - 0.5) < 0.01

    def test_scalar_step_matches_exact(self):
        prior = ProductPrior((BetaPrior(1, 1), DiscretePrior.point(0.5)))
        state = PosteriorState.fresh(prior)
        rng = RngStream(2)
        hits = sum(ts_step(state, singletons(2), rng).atoms == (0,) for _ in range(4000))
        assert abs(hits / 4000 - 0.5) < 0.03

    def test_two_point_three_atoms_chi_square(self):
        prior = ProductPrior((two_point(0.1, 0.9, 0.3), two_point(0.2, 0.6, 0.5), two_point(0.3, 0.5, 0.6)))
        fam = MSubsetFamily(3, 2)
        pts, pr = joint_posterior_support(PosteriorState.fresh(prior))
        exact = argmax_distribution(pts, pr, fam)
        assert abs(exact.sum() - 1) < 1e-12
        R = 1_000_000
        draws = sample_posterior_batch(prior, np.zeros((R, 3)), np.zeros((R, 3)), RngStream(3).gen)
        idx = fam.index_of(fam.best_masks(draws))
        freq = np.bincount(idx, minlength=len(exact)) / R
        assert np.max(np.abs(freq - exact)) < 0.005
        keep = exact > 0
        chi = stats.chisquare(freq[keep] * R, exact[keep] * R)
        assert chi.pvalue > 0.001


class TestTsConstants:
    def test_two_uniform_singletons(self):
        c = estimate_ts_constants(ProductPrior.beta([(1, 1), (1, 1)]), singletons(2), 10**5, rng=0)
        assert abs(c.epsilon_ts - 1 / 6) <= c.epsilon_ci + 1e-3
        assert abs(c.delta_ts - 0.5) <= c.delta_ci + 1e-3
        assert c.n_ts_interval[0] <= c.n_ts <= c.n_ts_interval[1]

    def test_positive_part_oracle(self):
        # E[(U - V)_+] for independent uniforms by quadrature over the unit square
        grid = (np.arange(2000) + 0.5) / 2000
        val = np.maximum(grid[:, None] - grid[None, :], 0).mean()
        assert abs(val - 1 / 6) < 1e-6

    def test_single_arm_is_degenerate(self):
        with pytest.raises(DegenerateFamily):
            estimate_ts_constants(ProductPrior.beta([(1, 1)]), singletons(1), 1000)

    def test_never_best_is_degenerate(self):
        prior = ProductPrior((DiscretePrior.point(0.9), DiscretePrior.point(0.1)))
        with pytest.raises(DegeneratePrior):
            estimate_ts_constants(prior, singletons(2), 1000)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            estimate_ts_constants(ProductPrior.beta([(1, 1)] * 2), singletons(2), 999)

    @pytest.mark.parametrize("c_ts", [0.25, 1.0, 3.0])
    def test_recompute(self, c_ts):
        c = estimate_ts_constants(ProductPrior.beta([(1, 1), (1, 3)]), singletons(2), 5000, c_ts=c_ts, rng=2)
        assert c.recompute_n_ts() == c.n_ts
        assert c.n_ts == math.ceil(c_ts * 4 * math.log(1 / c.delta_ts) / c.epsilon_ts ** 2)

    def test_formula_monotone_in_c(self):
        vals = [n_ts_formula(c, 3, 0.1, 0.2) for c in (0.25, 0.5, 1, 2)]
        assert vals == sorted(vals)


class TestPriorAssumptions:
    def test_beta_all_satisfied(self):
        rep = check_prior_assumptions(ProductPrior.beta([(1, 1), (2, 3)]), singletons(2), mc_samples=10**4)
        assert rep["pairwise_ok"] and rep["full_support_ok"] and rep["lower_tail_ok"]

    def test_point_high_support(self):
        prior = ProductPrior((DiscretePrior.point(0.9), DiscretePrior.point(0.9)))
        rep = check_prior_assumptions(prior, singletons(2), tau=0.5, mc_samples=10**4)
        assert rep["full_support_ok"]
        assert not any(r["satisfied"] for r in rep["lower_tail"])

    def test_uniform_pairwise_half(self):
        rep = check_prior_assumptions(ProductPrior.beta([(1, 1)] * 2), singletons(2), mc_samples=10**5)
        for r in rep["pairwise"]:
            assert abs(r["estimate"] - 0.5) <= r["ci"] + 1e-3


class TestComposite:
    def test_zero_horizon(self):
        prior = ProductPrior.beta([(1, 1), (1, 3)])
        run = run_composite(ExogenousBootstrap(10), singletons(2), prior, 0, RngStream(0))
        assert run.arms == [] and run.cumulative_regret.size == 0

    def test_regret_additive(self):
        prior = ProductPrior.beta([(1, 1), (1, 3), (2, 2)])
        fam = MSubsetFamily(3, 2)
        run = run_composite(ExogenousBootstrap(5), fam, prior, 200, RngStream(1))
        best = max(run.instance.mu(a) for a in fam.arms())
        gaps = [best - run.instance.mu(a) for a in run.arms]
        assert abs(run.cumulative_regret[-1] - sum(gaps)) < 1e-9

    def test_underfilled_bootstrap(self):
        class Short:
            T0 = 0
            guarantee = 3

            def run(self, instance, rng):
                return SegmentLog(instance.d), np.array([1, 1]), np.array([0, 1])

        with pytest.raises(BootstrapUnderfilled):
            run_composite(Short(), singletons(2), ProductPrior.beta([(1, 1)] * 2), 5, RngStream(0))

    def test_wrong_declared_length(self):
        class Liar:
            T0 = 4
            guarantee = 0

            def run(self, instance, rng):
                return SegmentLog(instance.d), np.zeros(2, int), np.zeros(2, int)

        with pytest.raises(BootstrapUnderfilled):
            run_composite(Liar(), singletons(2), ProductPrior.beta([(1, 1)] * 2), 5, RngStream(0))

    def test_log_is_semi_bandit(self):
        prior = ProductPrior.beta([(1, 1), (1, 3), (2, 2)])
        run = run_composite(ExogenousBootstrap(2), MSubsetFamily(3, 2), prior, 30, RngStream(3))
        for _, arm, rewards in run.history.round_log:
            assert set(rewards) == set(arm.atoms)


class TestExogenousEquivalence:
    def test_dataset_equals_posterior_prior(self):
        prior = ProductPrior((two_point(0.2, 0.8), two_point(0.3, 0.6, 0.4), two_point(0.1, 0.5, 0.7)))
        fam = MSubsetFamily(3, 2)
        s, f = (2, 0, 1), (1, 2, 0)
        state = PosteriorState(prior, np.array(s), np.array(f))
        post = ProductPrior(tuple(
            DiscretePrior.from_pairs(zip(prior.atoms[j].support, state.discrete_weights(j)))
            for j in range(3)))
        with_data = ThompsonSampling(prior, fam, initial_counts=(s, f))
        from_post = ThompsonSampling(post, fam)
        theta = np.array([0.8, 0.3, 0.5])
        for t in (1, 2, 3):
            a = with_data.exact_arm_distribution(theta, t)
            b = from_post.exact_arm_distribution(theta, t)
            assert np.allclose(a, b, atol=1e-12)


class TestTwoArm:
    def test_independent_matches_product(self):
        pa, pb = two_point(0.2, 0.8), two_point(0.3, 0.6, 0.3)
        joint = TwoArmJointPrior.independent(pa, pb)
        prod = ThompsonSampling(ProductPrior((pa, pb)), singletons(2))
        two = TwoArmThompson(joint)
        theta = np.array([0.8, 0.3])
        for t in (1, 2, 4):
            assert np.allclose(two.exact_arm_distribution(theta, t),
                               prod.exact_arm_distribution(theta, t), atol=1e-12)

    def test_independent_matches_product_mc(self):
        pa, pb = two_point(0.2, 0.8), two_point(0.3, 0.6, 0.3)
        joint = TwoArmJointPrior.independent(pa, pb)
        theta = np.tile([0.8, 0.3], (50_000, 1))
        a = TwoArmThompson(joint).simulate(theta, [3], RngStream(0).gen)
        b = ThompsonSampling(ProductPrior((pa, pb)), singletons(2)).simulate(theta, [3], RngStream(1).gen)
        assert abs(np.mean(a == 1) - np.mean(b == 1)) < 0.015

    def test_perfect_anticorrelation_round_one(self):
        joint = TwoArmJointPrior.from_pairs([((0.2, 0.8), 0.5), ((0.8, 0.2), 0.5)])
        assert np.allclose(TwoArmThompson(joint).exact_arm_distribution([0.2, 0.8], 1), [0.5, 0.5])

    def test_point_mass_always_a(self):
        joint = TwoArmJointPrior.from_pairs([((0.9, 0.1), 1.0)])
        run = run_two_arm_correlated(joint, 50, RngStream(0))
        assert np.all(run.arms == 0)
