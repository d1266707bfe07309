import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semibandit_bic.core import (
    Arm, DiscretePrior, ExplicitFamily, History, Instance, MSubsetFamily, ProductPrior,
    RngStream, TwoArmJointPrior, build_family, canonicalize, pull, sample_instance, singletons,
)
from semibandit_bic.errors import BadM, ContainedArm, EmptyFamily, PriorError


class TestArm:
    def test_roundtrip_atoms(self):
        arm = Arm.of([3, 0, 5])
        assert arm.atoms == (0, 3, 5)
        assert arm.size == 3
        assert arm.hex() == format(0b101001, "x")

    def test_empty_rejected(self):
        with pytest.raises(Exception):
            Arm.of([])

    def test_subset(self):
        assert Arm.of([0]).issubset(Arm.of([0, 1]))
        assert not Arm.of([0, 2]).issubset(Arm.of([0, 1]))


class TestBuildFamily:
    def test_explicit_singletons(self):
        fam = build_family({"kind": "explicit", "d": 2, "arms": [[0], [1]]})
        assert [a.atoms for a in fam.arms()] == [(0,), (1,)]

    def test_contained_arm_rejected(self):
        with pytest.raises(ContainedArm):
            build_family({"kind": "explicit", "d": 2, "arms": [[0], [0, 1]]})

    def test_empty_family_rejected(self):
        with pytest.raises(EmptyFamily):
            build_family({"kind": "explicit", "d": 2, "arms": []})

    @pytest.mark.parametrize("m", [0, 5])
    def test_bad_m(self, m):
        with pytest.raises(BadM):
            build_family({"kind": "m_subsets", "d": 4, "m": m})

    def test_m_subsets_size(self):
        assert len(build_family({"kind": "m_subsets", "d": 4, "m": 2}).arms()) == 6

    @pytest.mark.parametrize("d,m", [(d, m) for d in range(1, 7) for m in range(1, d + 1)])
    def test_m_subsets_distinct_and_antichain(self, d, m):
        arms = MSubsetFamily(d, m).arms()
        assert len(arms) == comb(d, m)
        assert len({a.mask for a in arms}) == len(arms)
        for a, b in itertools.permutations(arms, 2):
            assert not a.issubset(b)


class TestPriors:
    def test_point_mass_instance(self):
        prior = ProductPrior((DiscretePrior.point(0.3), DiscretePrior.point(0.3)))
        for k in range(5):
            assert np.all(sample_instance(prior, RngStream(1, k)).theta == 0.3)

    @pytest.mark.parametrize("a,b,mean", [(1, 1, 0.5), (2, 6, 0.25)])
    def test_beta_sample_mean(self, a, b, mean):
        prior = ProductPrior.beta([(a, b)])
        draws = prior.sample(RngStream(7).gen, 100_000)
        assert abs(draws.mean() - mean) < 0.01

    def test_discrete_probs_normalised(self):
        with pytest.raises(PriorError):
            DiscretePrior.from_pairs([(0.2, 0.5), (0.8, 0.6)])

    def test_canonical_order_descending_means(self):
        prior = ProductPrior.beta([(1, 3), (1, 1), (1, 2)])
        cp, fam, perm = canonicalize(prior, singletons(3))
        assert list(cp.means) == sorted(cp.means, reverse=True)
        assert sorted(perm) == [0, 1, 2]

    def test_joint_prior_probs(self):
        joint = TwoArmJointPrior.from_pairs([((0.2, 0.8), 0.5), ((0.8, 0.2), 0.5)])
        assert abs(joint.weights.sum() - 1) < 1e-12


class TestPull:
    @pytest.mark.parametrize("theta,expect", [(0.0, 0), (1.0, 1)])
    def test_deterministic_extremes(self, theta, expect):
        inst = Instance(np.array([theta]))
        rng = RngStream(3)
        assert all(pull(inst, Arm.of([0]), rng)[0] == expect for _ in range(100))

    def test_lln(self):
        inst = Instance(np.array([0.5]))
        rng = RngStream(4)
        mean = np.mean([pull(inst, Arm.of([0]), rng)[0] for _ in range(100_000)])
        assert abs(mean - 0.5) < 0.01

    def test_semi_bandit_feedback_atoms(self):
        inst = Instance(np.array([0.3, 0.6, 0.9]))
        arm = Arm.of([0, 2])
        assert set(pull(inst, arm, RngStream(5))) == {0, 2}


class TestHistory:
    def test_counts_match_log(self):
        h = History(3)
        inst = Instance(np.array([0.3, 0.6, 0.9]))
        rng = RngStream(9)
        for t in range(1, 50):
            arm = Arm.of([t % 3, (t + 1) % 3])
            h.record(t, arm, pull(inst, arm, rng))
        s, f = h.aggregate_log()
        assert np.array_equal(s, h.successes) and np.array_equal(f, h.failures)

    def test_feedback_must_match_arm(self):
        with pytest.raises(ValueError):
            History(2).record(1, Arm.of([0, 1]), {0: 1})


class TestRngStream:
    def test_replay(self):
        assert np.array_equal(RngStream(5, 3).gen.random(10), RngStream(5, 3).gen.random(10))

    def test_distinct_streams(self):
        a = RngStream(5, 3).gen.random(10_000)
        b = RngStream(5, 4).gen.random(10_000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.05

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**32))
    def test_any_64bit_seed(self, seed, sid):
        assert RngStream(seed, sid).gen.integers(0, 10) == RngStream(seed, sid).gen.integers(0, 10)


class TestInstance:
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
    def test_mu_additive(self, theta):
        inst = Instance(np.array(theta))
        arm = Arm.of(range(len(theta)))
        assert abs(inst.mu(arm) - sum(theta)) < 1e-12
