import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from semibandit_bic.core import DiscretePrior, ExplicitFamily, MSubsetFamily, ProductPrior, TwoArmJointPrior, singletons
from semibandit_bic.sequence import constants_fixed_size
from semibandit_bic.thompson import ThompsonSampling, TwoArmThompson
from semibandit_bic.verify import (
    CSV_HEADER, agreement, exact_joint, bic_margin_exact, bic_margin_mc, esseen_experiment, harris_spotcheck,
    history_mass, property_p_empirical,
)


def two_point(lo, hi, p=0.5):
    return DiscretePrior.from_pairs([(lo, 1 - p), (hi, p)])


def brute_ts_margins(prior, family, t):
    """Independent oracle: recurse over every arm choice and reward string.

    The TS choice law is recomputed at each node from the joint posterior over
    the product support, with ties going to the lexicographically first arm.
    """
    arms = family.arms()
    K = len(arms)
    supports = [list(zip(a.support, a.probs)) for a in prior.atoms]
    points = list(itertools.product(*supports))
    thetas = [np.array([x for x, _ in pt]) for pt in points]
    weights = [math.prod(q for _, q in pt) for pt in points]

    def choice_probs(history):
        post = []
        for th, w in zip(thetas, weights):
            like = w
            for arm, rewards in history:
                for a, r in zip(arm.atoms, rewards):
                    like *= th[a] if r else 1 - th[a]
            post.append(like)
        z = sum(post)
        out = np.zeros(K)
        for th, w in zip(thetas, post):
            vals = [sum(th[a] for a in arm.atoms) for arm in arms]
            top = max(vals)
            k = min((i for i in range(K) if vals[i] == top), key=lambda i: arms[i].atoms)
            out[k] += w / z
        return out

    def dist(th, history, left):
        probs = choice_probs(history)
        if left == 0:
            return probs
        out = np.zeros(K)
        for k in range(K):
            if probs[k] == 0:
                continue
            atoms = arms[k].atoms
            for rewards in itertools.product((0, 1), repeat=len(atoms)):
                q = math.prod(th[a] if r else 1 - th[a] for a, r in zip(atoms, rewards))
                if q > 0:
                    out += probs[k] * q * dist(th, history + [(arms[k], rewards)], left - 1)
        return out

    joint = np.array([w * dist(th, [], t - 1) for th, w in zip(thetas, weights)])
    mu = np.array([[sum(th[a] for a in arm.atoms) for arm in arms] for th in thetas])
    res = {}
    for k in range(K):
        pk = joint[:, k].sum()
        if pk > 0:
            res[k] = (pk, (joint[:, k] @ (mu[:, [k]] - mu)) / pk)
    return res


class TestExactOracle:
    def test_single_arm(self):
        prior = ProductPrior((two_point(0.2, 0.8),))
        tab = bic_margin_exact(ThompsonSampling(prior, singletons(1)), prior, singletons(1), 2)
        assert tab.passes() and list(tab.cells()) == []

    def test_point_masses(self):
        prior = ProductPrior((DiscretePrior.point(0.7), DiscretePrior.point(0.3)))
        tab = bic_margin_exact(ThompsonSampling(prior, singletons(2)), prior, singletons(2), 1)
        assert len(tab.rows) == 1
        assert tab.rows[0].pr_recommend == 1.0
        assert tab.rows[0].margins[1] == pytest.approx(0.4, abs=1e-15)

    def test_symmetric_two_point_round_one(self):
        # at round 1 the TS draw is independent of theta, so every margin is the
        # prior mean difference (0); the tie rule sends (0.8,0.8),(0.2,0.2) to arm 0
        prior = ProductPrior((two_point(0.2, 0.8), two_point(0.2, 0.8)))
        tab = bic_margin_exact(ThompsonSampling(prior, singletons(2)), prior, singletons(2), 1)
        assert tab.rows[0].pr_recommend == pytest.approx(0.75)
        assert tab.rows[1].pr_recommend == pytest.approx(0.25)
        assert tab.rows[0].margins[1] == pytest.approx(0.0, abs=1e-15)
        assert tab.rows[1].margins[0] == pytest.approx(0.0, abs=1e-15)

    def test_four_case_enumeration_best_arm(self):
        # conditioning on the true best arm instead (4-case hand enumeration)
        cases = [((0.8, 0.2), 0), ((0.8, 0.8), 0), ((0.2, 0.2), 0), ((0.2, 0.8), 1)]
        num = sum(0.25 * (a - b) for (a, b), k in cases if k == 0)
        den = sum(0.25 for _, k in cases if k == 0)
        assert num / den == pytest.approx(0.2)

    @pytest.mark.parametrize("t", [1, 2, 3])
    def test_against_brute_force(self, t):
        prior = ProductPrior((two_point(0.2, 0.8, 0.4), two_point(0.3, 0.6), two_point(0.1, 0.7, 0.3)))
        for fam in (singletons(3), MSubsetFamily(3, 2)):
            tab = bic_margin_exact(ThompsonSampling(prior, fam), prior, fam, t)
            want = brute_ts_margins(prior, fam, t)
            assert {r.arm for r in tab.rows} == set(want)
            for r in tab.rows:
                pk, m = want[r.arm]
                assert r.pr_recommend == pytest.approx(pk, abs=1e-12)
                keep = np.arange(len(m)) != r.arm
                assert np.allclose(r.margins[keep], m[keep], atol=1e-12)

    def test_probabilities_sum_to_one(self):
        prior = ProductPrior((two_point(0.2, 0.8), two_point(0.3, 0.6, 0.3)))
        algo = ThompsonSampling(prior, singletons(2))
        for t in (1, 2, 3, 4):
            tab = bic_margin_exact(algo, prior, singletons(2), t)
            assert abs(tab.pr_total() - 1) < 1e-9
            for th in [(0.2, 0.3), (0.8, 0.6)]:
                assert abs(history_mass(algo, np.array(th), t) - 1) < 1e-9

    def test_unconditional_identity(self):
        prior = ProductPrior((two_point(0.2, 0.8), two_point(0.3, 0.6, 0.3), two_point(0.1, 0.9, 0.2)))
        fam = MSubsetFamily(3, 2)
        tab = bic_margin_exact(ThompsonSampling(prior, fam), prior, fam, 3)
        mu_prior = fam.incidence @ prior.means
        # Sum_A Pr[A] (E[mu(A) - mu(A') | A]) = E[mu(A^(t))] - E[mu(A')]
        pts, pr = prior.support_points()
        _, _, dist = exact_joint(ThompsonSampling(prior, fam), prior, fam, 3)
        mu = pts @ fam.incidence.T
        e_mu_rec = float(pr @ (dist * mu).sum(axis=1))
        for j in range(len(fam.arms())):
            lhs = sum(r.pr_recommend * (r.margins[j] if r.arm != j else 0.0) for r in tab.rows)
            assert lhs == pytest.approx(e_mu_rec - mu_prior[j], abs=1e-12)

    def test_two_arm_joint(self):
        joint = TwoArmJointPrior.from_pairs([((0.2, 0.8), 0.3), ((0.8, 0.2), 0.3), ((0.5, 0.5), 0.4)])
        algo = TwoArmThompson(joint)
        tab = bic_margin_exact(algo, joint, singletons(2), 3)
        assert abs(tab.pr_total() - 1) < 1e-9

    def test_csv_header(self):
        prior = ProductPrior((DiscretePrior.point(0.7), DiscretePrior.point(0.3)))
        tab = bic_margin_exact(ThompsonSampling(prior, singletons(2)), prior, singletons(2), 1)
        assert tab.to_csv().splitlines()[0] == ",".join(CSV_HEADER)
        assert list(CSV_HEADER) == ["round", "arm", "competitor", "margin", "ci_radius", "mode", "support_count"]


class TestMonteCarlo:
    def test_point_mass_exact(self):
        prior = ProductPrior((DiscretePrior.point(0.7), DiscretePrior.point(0.3)))
        algo = ThompsonSampling(prior, singletons(2))
        mc = bic_margin_mc(algo, prior, singletons(2), [1, 2], 2000, rng=0)
        for tab in mc:
            assert tab.rows[0].margins[1] == pytest.approx(0.4, abs=1e-12)
            assert tab.rows[0].ci_radius[1] == pytest.approx(0.0, abs=1e-12)

    def test_agrees_with_exact(self):
        prior = ProductPrior((two_point(0.2, 0.8, 0.4), two_point(0.3, 0.6)))
        algo = ThompsonSampling(prior, singletons(2))
        mc = bic_margin_mc(algo, prior, singletons(2), [1, 2, 3], 50_000, rng=1)
        for tab in mc:
            ex = bic_margin_exact(algo, prior, singletons(2), tab.round)
            ok, n = agreement(ex, tab)
            assert ok == n
            assert abs(tab.pr_total() - 1) <= 3 / math.sqrt(50_000)

    def test_beta_round_two(self):
        prior = ProductPrior.beta([(1, 1), (1, 3)])
        mc = bic_margin_mc(ThompsonSampling(prior, singletons(2)), prior, singletons(2), [2], 20_000, rng=2)
        assert mc[0].round == 2 and len(mc[0].rows) == 2

    def test_low_support_flag(self):
        prior = ProductPrior((two_point(0.0, 0.99, 0.999), DiscretePrior.point(0.5)))
        mc = bic_margin_mc(ThompsonSampling(prior, singletons(2)), prior, singletons(2), [1], 1000, rng=3)
        assert mc[0].rows[1].status in ("LowSupport", "NoSupport")


class TestPropertyP:
    prior = ProductPrior.beta([(1, 2), (1, 3), (1, 4)])

    def test_phase_one_certain(self):
        r = constants_fixed_size(self.prior, singletons(3))
        res = property_p_empirical(self.prior, singletons(3), r, r.n_p, 2000, rng=0)
        assert res[0]["pr_hat"] == 1.0

    def test_forced_zero(self):
        r = constants_fixed_size(self.prior, singletons(3))
        res = property_p_empirical(self.prior, singletons(3), r, r.n_p, 2000, rng=0, force_zero=True)
        assert all(x["pr_hat"] == 1.0 for x in res)

    def test_chain(self):
        r = constants_fixed_size(self.prior, singletons(3))
        res = property_p_empirical(self.prior, singletons(3), r, r.n_p, 20_000, rng=1)
        assert all(x["pass"] and x["chain_ok"] for x in res)


class TestEsseen:
    def test_disjoint(self):
        res = esseen_experiment([(0.0, 0.2), (0.5, 0.9)], singletons(2), 0.5, 10_000)
        assert res["freq_below"] == 0 and res["pass"]

    def test_overlapping_d3(self):
        res = esseen_experiment([(0, 1)] * 3, singletons(3), 0.5, 100_000, rng=0)
        assert res["pass"] and res["bound"] == 0.5 / 8

    def test_degenerate_premise(self):
        res = esseen_experiment([(0.5, 0.5)] * 2, singletons(2), 0.5, 1000)
        assert res["freq_below"] == 1 and res["premise_violation"]


class TestHarris:
    def test_n_one_equality(self):
        r = harris_spotcheck(ProductPrior.beta([(2, 3)]), 1)
        assert r["lhs"] == r["rhs"]

    def test_uniform_n_two(self):
        r = harris_spotcheck(ProductPrior.beta([(1, 1)]), 2)
        assert r["lhs"] == Fraction(1, 3) and r["rhs"] == Fraction(1, 4) and r["pass"]

    def test_point_mass(self):
        for n in (1, 3, 7):
            r = harris_spotcheck(ProductPrior((DiscretePrior.point(0.3),)), n)
            assert r["lhs"] == r["rhs"]
