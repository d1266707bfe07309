import itertools
import json
import math
from collections import Counter
from math import comb

import numpy as np
import pytest
from scipy import stats

from semibandit_bic.core import (
    Arm, BetaPrior, DiscretePrior, ExplicitFamily, Instance, MSubsetFamily, ProductPrior, RngStream, singletons,
)
from semibandit_bic.errors import BadM, FamilyError, NotEncodable, ZeroQpun
from semibandit_bic.mdp import (
    DagFamily, Ledger, TransitionGraph, augment_feasibility, best_response, encode_explicit,
    encode_m_subsets, estimate_hh_constants, hallucinate, hh_bootstrap_composer, hidden_hallucination,
    n_lrn_formula, punish_sample,
)
from semibandit_bic.posterior import posterior_means_batch


def path_multiset(g):
    return Counter(Arm.of(p).mask for p in g.paths())


class TestEncodeMSubsets:
    @pytest.mark.parametrize("d,m,count", [(3, 1, 3), (4, 2, 6), (6, 3, 20)])
    def test_examples(self, d, m, count):
        g = encode_m_subsets(d, m)
        paths = g.paths()
        assert len(paths) == g.path_count() == count
        assert all(list(p) == sorted(set(p)) for p in paths)

    def test_bijection_exhaustive(self):
        for d in range(1, 7):
            for m in range(1, min(d, 3) + 1):
                g = encode_m_subsets(d, m)
                want = Counter(a.mask for a in MSubsetFamily(d, m).arms())
                assert path_multiset(g) == want
                assert len(g.nodes) <= d * m + 2 <= d * d + 2

    def test_bad_m(self):
        with pytest.raises(BadM):
            encode_m_subsets(3, 4)

    def test_dp_matches_top_m(self, gen):
        for d, m in [(4, 2), (5, 3), (6, 2)]:
            g = encode_m_subsets(d, m)
            fam = MSubsetFamily(d, m)
            W = gen.random((300, d))
            assert list(g.best_path_masks(W)) == list(fam.best_masks(W))
            ties = gen.choice([0.0, 0.5, 1.0], size=(100, d))
            assert list(g.best_path_masks(ties)) == list(fam.best_masks(ties))


class TestGraphValidation:
    def test_repeat_atom_rejected(self):
        nodes = [(-1, 0), (0, 1), (1, 2)]
        with pytest.raises(FamilyError):
            TransitionGraph(nodes, 0, [(0, 1, 0), (1, 2, 0)], 2)

    def test_nondeterministic_rejected(self):
        nodes = [(-1, 0), (0, 1), (1, 1)]
        with pytest.raises(FamilyError):
            TransitionGraph(nodes, 0, [(0, 1, 0), (0, 2, 0)], 2)

    def test_json_roundtrip(self):
        g = encode_m_subsets(4, 2)
        g2 = TransitionGraph.from_json(json.loads(json.dumps(g.to_json())))
        assert path_multiset(g) == path_multiset(g2)


class TestEncodeExplicit:
    def test_all_m_subsets_explicit(self):
        fam = ExplicitFamily(5, [list(c) for c in itertools.combinations(range(5), 2)])
        g = encode_explicit(fam)
        assert g.path_count() == len(fam.arms())
        assert path_multiset(g) == Counter(a.mask for a in fam.arms())

    def test_single_arm(self):
        g = encode_explicit(ExplicitFamily(3, [[0, 2]]))
        assert g.paths() == [(0, 2)]

    def test_two_disjoint(self):
        g = encode_explicit(ExplicitFamily(4, [[0, 1], [2, 3]]))
        assert len(g.edges) == 4 and g.path_count() == 2
        assert len(g.nodes) <= 4 * 4 + 2

    def test_bound_exceeded(self):
        gen = np.random.default_rng(0)
        d = 8
        arms = set()
        while len(arms) < 60:
            arms.add(tuple(sorted(gen.choice(d, 4, replace=False))))
        fam = ExplicitFamily(d, [list(a) for a in arms])
        try:
            g = encode_explicit(fam)
        except NotEncodable as e:
            assert e.proof_of_non_encodability is False
        else:
            assert len(g.nodes) <= d * d + 2
            assert path_multiset(g) == Counter(a.mask for a in fam.arms())

    def test_random_families_bijection(self, gen):
        for _ in range(40):
            d = int(gen.integers(2, 7))
            m = int(gen.integers(1, min(d, 3) + 1))
            pool = list(itertools.combinations(range(d), m))
            k = int(gen.integers(1, len(pool) + 1))
            chosen = [list(pool[i]) for i in gen.choice(len(pool), k, replace=False)]
            fam = ExplicitFamily(d, chosen)
            g = encode_explicit(fam)
            assert path_multiset(g) == Counter(a.mask for a in fam.arms())


class TestAugment:
    def test_total_graph_good_only(self):
        g = encode_m_subsets(3, 3)
        aug = augment_feasibility(g)
        assert aug.feasible_arms() == [Arm.of([0, 1, 2])]

    def test_bad_never_best(self, gen):
        g = encode_m_subsets(5, 2)
        aug = augment_feasibility(g)
        assert aug.has_bad
        for _ in range(200):
            means = gen.random(5)
            atoms, good = aug.best_policy(means)
            assert good
            bad_vals = [aug.policy_value(p, ok, means) for p, ok in aug.policies() if not ok]
            assert max(bad_vals) <= aug.H < aug.good_reward

    def test_feasible_paths_preserved(self):
        g = encode_m_subsets(5, 3)
        assert sorted(a.mask for a in augment_feasibility(g).feasible_arms()) == sorted(
            Arm.of(p).mask for p in g.paths())


class TestHhConstants:
    def test_uniform_two_stage(self):
        g = encode_m_subsets(2, 2)
        c = estimate_hh_constants(ProductPrior.beta([(1, 1)] * 2), g, delta=0.1)
        assert c.r_alt == 0.5 and c.H == 2
        assert c.eps_pun == pytest.approx(1 / 72)
        assert c.q_pun == pytest.approx((1 / 72) ** 2, rel=1e-12)
        assert c.n_lrn == n_lrn_formula(1.0, c.r_alt, c.H, c.S, c.A, 0.1, c.q_pun)
        assert c.n_ph == math.ceil(2 / c.q_pun)

    def test_point_mass_zero(self):
        prior = ProductPrior((DiscretePrior.point(0.3),) * 2)
        with pytest.raises(ZeroQpun):
            estimate_hh_constants(prior, encode_m_subsets(2, 1))

    def test_n_lrn_h4_scaling(self):
        S, A = 5, 3
        base = n_lrn_formula(1.0, 0.5, 2, S, A, 0.1, 1e-3)
        double = n_lrn_formula(1.0, 0.5, 4, S, A, 0.1, 1e-3)
        inner = [S + math.log(S * A * H / (0.1 * 0.5 * 1e-3)) for H in (2, 4)]
        assert double / base == pytest.approx(16 * inner[1] / inner[0], rel=1e-3)


class TestLedger:
    def _ledger(self, gen):
        led = Ledger.empty(3)
        for _ in range(10):
            arm = Arm.of([int(gen.integers(0, 2))]) if gen.random() < 0.8 else Arm.of([2])
            led = led.append(arm, {a: int(gen.random() < 0.5) for a in arm.atoms})
        return led

    def test_honest_censors_under_explored(self, gen):
        led = self._ledger(gen)
        n_lrn = 3
        hon = led.honest(n_lrn)
        under = ~led.fully_explored(n_lrn)
        assert np.all(np.isnan(hon.rewards[:, under]))
        assert np.all(np.isnan(led.censored().rewards))

    def test_hallucinated_typing(self, gen):
        led = self._ledger(gen)
        prior = ProductPrior.beta([(1, 1)] * 3)
        hal, theta = hallucinate(led, prior, 3, 0.05, gen)
        full = led.fully_explored(3)
        assert np.all(np.isnan(hal.rewards[:, ~full]))
        assert np.all(theta[full] <= 0.05)
        for i, arm in enumerate(led.actions):
            for a in arm.atoms:
                assert np.isnan(hal.rewards[i, a]) != bool(full[a])


class TestPunishSampling:
    def test_acceptance_rate(self):
        prior = ProductPrior.beta([(1, 1), (2, 3), (1, 1)])
        eps = 0.3
        exact = stats.beta.cdf(eps, 1, 1) * stats.beta.cdf(eps, 2, 3)
        gen = RngStream(0).gen
        attempts = [punish_sample(prior, [0, 1], eps, gen, "rejection")[1] for _ in range(3000)]
        rate = 3000 / sum(attempts)
        # geometric attempts: the hit fraction has binomial error over total draws
        se = math.sqrt(exact * (1 - exact) / sum(attempts))
        assert abs(rate - exact) <= 3 * se + 1e-3

    def test_exact_matches_rejection(self):
        prior = ProductPrior.beta([(2, 3), (1, 1)])
        gen = RngStream(1).gen
        ex = [punish_sample(prior, [0], 0.3, gen, "exact")[0][0] for _ in range(3000)]
        rj = [punish_sample(prior, [0], 0.3, gen, "rejection")[0][0] for _ in range(3000)]
        assert max(ex) <= 0.3 and max(rj) <= 0.3
        assert stats.ks_2samp(ex, rj).pvalue > 0.001


class TestBestResponse:
    def test_agent_rationality(self, gen):
        g = encode_m_subsets(5, 2)
        prior = ProductPrior.beta([(2, 1), (1, 1), (1, 2), (2, 3), (1, 4)])
        for _ in range(50):
            led = Ledger.empty(5)
            for _ in range(int(gen.integers(0, 15))):
                arm = Arm.of(sorted(gen.choice(5, 2, replace=False)))
                led = led.append(arm, {a: int(gen.random() < 0.4) for a in arm.atoms})
            s, f = led.counts()
            means = posterior_means_batch(prior, s[None, :], f[None, :])[0]
            vals = {Arm.of(p): sum(means[a] for a in p) for p in g.paths()}
            top = max(vals.values())
            brute = min((a for a, v in vals.items() if v >= top - 1e-12), key=lambda a: a.atoms)
            assert best_response(prior, led, g) == brute


class TestHiddenHallucination:
    def test_single_arm_covers_immediately(self):
        g = encode_explicit(ExplicitFamily(2, [[0, 1]]))
        prior = ProductPrior.beta([(1, 1)] * 2)
        c = estimate_hh_constants(prior, g)
        run = hidden_hallucination(prior, g, c, RngStream(0))
        assert run.first_coverage_round == 1 and run.success

    def test_first_phase_plays_prior_best(self):
        g = encode_m_subsets(3, 1)
        prior = ProductPrior.beta([(3, 1), (1, 1), (1, 3)])
        c = estimate_hh_constants(prior, g)
        run = hidden_hallucination(prior, g, c, RngStream(1), max_rounds=c.n_ph, stop_at_coverage=False)
        assert run.phases == 1
        assert all(s.arm == Arm.of([0]) for s in run.log.segments)
        assert run.log.total_rounds == c.n_ph

    def test_coverage_run(self):
        g = encode_m_subsets(3, 1)
        prior = ProductPrior.beta([(1, 1)] * 3)
        c = estimate_hh_constants(prior, g, delta=0.1)
        run = hidden_hallucination(prior, g, c, RngStream(2))
        assert run.success and run.first_coverage_round <= c.N0
        assert len(run.hallucination_rounds) == run.phases

    def test_bootstrap_declared_t0(self):
        g = encode_explicit(ExplicitFamily(2, [[0, 1]]))
        prior = ProductPrior.beta([(1, 1)] * 2)
        c = estimate_hh_constants(prior, g)
        c.N0 = 50  # keep the single-arm run short
        boot = hh_bootstrap_composer(prior, g, c, n_repeats=1)
        assert boot.T0 == c.N0 * 1 + 2 * 1
        log, s, f = boot.run(Instance(np.array([0.4, 0.6])), RngStream(0))
        assert log.total_rounds == boot.T0
        assert all(seg.arm == Arm.of([0, 1]) for seg in log.segments)
        assert np.all(s + f >= boot.guarantee)

    def test_dag_family_best(self):
        fam = DagFamily(encode_m_subsets(4, 2))
        assert fam.best([0.9, 0.1, 0.5, 0.4]) == Arm.of([0, 2])
