"""Thompson Sampling, its bootstrap composition, and the n_TS constant estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .core import (
    Arm,
    ArmFamily,
    History,
    Instance,
    ProductPrior,
    TwoArmJointPrior,
    as_generator,
    masks_to_indicators,
    pull,
    sample_instance,
    singletons,
)
from .errors import (
    BootstrapUnderfilled,
    BudgetExceeded,
    DegenerateFamily,
    DegeneratePrior,
    NonDiscretePrior,
)
from .logs import SegmentLog
from .posterior import (
    PosteriorState,
    argmax_distribution,
    best_arm,
    joint_posterior_support,
    sample_posterior_batch,
)

Z99 = float(stats.norm.ppf(0.995))


def ts_step(state: PosteriorState, family: ArmFamily, rng) -> Arm:
    """Draw one mean vector from the posterior and return its best arm."""
    return best_arm(state.sample(rng), family)


# ---------------------------------------------------------------------------
# Algorithm handles
# ---------------------------------------------------------------------------


class ThompsonSampling:
    """Thompson Sampling over a product prior, optionally started from data.

    ``exogenous_n`` samples of every atom are drawn from the true instance
    before round 1 (data bought rather than explored, so they cost no
    rounds).  ``initial_counts`` instead fixes the dataset outright.
    """

    name = "ts"

    def __init__(self, prior: ProductPrior, family: ArmFamily, exogenous_n: int = 0,
                 initial_counts: Optional[tuple] = None):
        self.prior = prior
        self.family = family
        self.exogenous_n = int(exogenous_n)
        self.initial_counts = None
        if initial_counts is not None:
            s, f = initial_counts
            self.initial_counts = (np.asarray(s, dtype=np.int64), np.asarray(f, dtype=np.int64))
        self.T0 = 0
        self._probs_cache: dict = {}

    def describe(self) -> str:
        if self.exogenous_n:
            return f"composite(bootstrap=exogenous(n={self.exogenous_n}))"
        return "ts"

    def _initial_batch(self, theta, gen):
        R = theta.shape[0]
        if self.initial_counts is not None:
            s = np.broadcast_to(self.initial_counts[0], (R, self.prior.d)).astype(float)
            f = np.broadcast_to(self.initial_counts[1], (R, self.prior.d)).astype(float)
            return s.copy(), f.copy()
        if self.exogenous_n:
            s = gen.binomial(self.exogenous_n, theta).astype(float)
            return s, self.exogenous_n - s
        return np.zeros_like(theta), np.zeros_like(theta)

    def simulate_full(self, theta: np.ndarray, T: int, gen) -> np.ndarray:
        """Chosen arm masks for rounds 1..T, shape (R, T)."""
        return self.simulate(theta, np.arange(1, T + 1), gen)

    def simulate(self, theta: np.ndarray, rounds, gen) -> np.ndarray:
        gen = as_generator(gen)
        theta = np.asarray(theta, dtype=float)
        rounds = np.asarray(rounds, dtype=np.int64)
        R, d = theta.shape
        out = np.zeros((R, len(rounds)), dtype=np.int64)
        if len(rounds) == 0:
            return out
        want = {int(t): i for i, t in enumerate(rounds)}
        s, f = self._initial_batch(theta, gen)
        for t in range(1, int(rounds.max()) + 1):
            draws = sample_posterior_batch(self.prior, s, f, gen)
            masks = self.family.best_masks(draws)
            if t in want:
                out[:, want[t]] = masks
            inc = masks_to_indicators(masks, d)
            hit = gen.random((R, d)) < theta
            s += inc * hit
            f += inc * ~hit
        return out

    # -- exact enumeration -------------------------------------------------

    def ts_probs(self, s: tuple, f: tuple) -> np.ndarray:
        """Exact Pr^(t)[A* = A] for a discrete posterior given counts."""
        key = (s, f)
        if key not in self._probs_cache:
            state = PosteriorState(self.prior, s, f)
            pts, pr = joint_posterior_support(state)
            self._probs_cache[key] = argmax_distribution(pts, pr, self.family)
        return self._probs_cache[key]

    def _initial_states(self, theta) -> dict:
        d = self.prior.d
        if self.initial_counts is not None:
            return {(tuple(map(int, self.initial_counts[0])),
                     tuple(map(int, self.initial_counts[1]))): 1.0}
        if not self.exogenous_n:
            return {((0,) * d, (0,) * d): 1.0}
        n = self.exogenous_n
        states = {((), ()): 1.0}
        for j in range(d):
            pmf = stats.binom.pmf(np.arange(n + 1), n, theta[j])
            nxt = {}
            for (s, f), p in states.items():
                for k in range(n + 1):
                    if pmf[k] > 0:
                        nxt[(s + (k,), f + (n - k,))] = p * pmf[k]
            states = nxt
        return states

    def exact_states(self, theta, t: int, budget: int = 10**6) -> dict:
        """Distribution over count states at the start of round ``t`` given theta."""
        if not self.prior.is_discrete:
            raise NonDiscretePrior("exact TS enumeration needs discrete priors")
        theta = np.asarray(theta, dtype=float)
        arms = self.family.arms()
        states = self._initial_states(theta)
        for _ in range(t - 1):
            nxt: dict = {}
            for (s, f), p in states.items():
                probs = self.ts_probs(s, f)
                for k in np.flatnonzero(probs > 0):
                    atoms = arms[k].atoms
                    for outcome in range(1 << len(atoms)):
                        ss, ff, q = list(s), list(f), p * probs[k]
                        for b, a in enumerate(atoms):
                            if outcome >> b & 1:
                                ss[a] += 1
                                q *= theta[a]
                            else:
                                ff[a] += 1
                                q *= 1 - theta[a]
                        if q > 0:
                            key = (tuple(ss), tuple(ff))
                            nxt[key] = nxt.get(key, 0.0) + q
            states = nxt
            if len(states) > budget:
                raise BudgetExceeded("exact TS state space exceeds budget")
        return states

    def exact_arm_distribution(self, theta, t: int) -> np.ndarray:
        out = np.zeros(len(self.family.arms()))
        for (s, f), p in self.exact_states(theta, t).items():
            out += p * self.ts_probs(s, f)
        return out


class UniformBaseline:
    """Uniformly random arm every round (not BIC; a regret yardstick)."""

    name = "uniform-baseline"
    T0 = 0

    def __init__(self, prior, family: ArmFamily):
        self.prior = prior
        self.family = family

    def describe(self):
        return self.name

    def simulate(self, theta, rounds, gen):
        gen = as_generator(gen)
        R = np.asarray(theta).shape[0]
        idx = gen.integers(0, len(self.family.arms()), size=(R, len(rounds)))
        return self.family.masks[idx]

    def simulate_full(self, theta, T, gen):
        return self.simulate(theta, np.arange(1, T + 1), gen)

    def exact_arm_distribution(self, theta, t):
        K = len(self.family.arms())
        return np.full(K, 1.0 / K)


class TwoArmThompson:
    """Thompson Sampling for two arms with a finite joint prior on their means.

    The arm-level reward of an arm of size ``k`` with mean ``mu`` is
    Binomial(k, mu / k); the posterior over joint support points conditions
    on those sums.
    """

    name = "two-arm-correlated"
    T0 = 0

    def __init__(self, joint: TwoArmJointPrior):
        self.joint = joint
        self.prior = joint
        self.family = singletons(2)
        self.sizes = tuple(int(s) for s in joint.sizes)
        pts = joint.points
        with np.errstate(divide="ignore"):
            self.log_prior = np.log(joint.weights)
            # table[a][k] = log Pr[reward k | point] for each support point
            self.log_lik = [
                stats.binom.logpmf(np.arange(self.sizes[a] + 1)[:, None], self.sizes[a],
                                   pts[:, a][None, :] / self.sizes[a])
                for a in range(2)
            ]
        self._probs_cache: dict = {}

    def describe(self):
        return self.name

    def _choice_of_points(self):
        pts = self.joint.points
        return (pts[:, 1] > pts[:, 0]).astype(np.int64)  # ties -> arm 0

    def simulate(self, theta, rounds, gen):
        gen = as_generator(gen)
        theta = np.asarray(theta, dtype=float)
        rounds = np.asarray(rounds, dtype=np.int64)
        R = theta.shape[0]
        out = np.zeros((R, len(rounds)), dtype=np.int64)
        if len(rounds) == 0:
            return out
        want = {int(t): i for i, t in enumerate(rounds)}
        logpost = np.broadcast_to(self.log_prior, (R, len(self.log_prior))).copy()
        choice = self._choice_of_points()
        rows = np.arange(R)
        for t in range(1, int(rounds.max()) + 1):
            w = np.exp(logpost - logpost.max(axis=1, keepdims=True))
            cdf = np.cumsum(w, axis=1)
            u = gen.random(R)[:, None] * cdf[:, -1:]
            k = np.minimum((u >= cdf).sum(axis=1), cdf.shape[1] - 1)
            arm = choice[k]
            if t in want:
                out[:, want[t]] = 1 << arm
            size = np.array(self.sizes)[arm]
            reward = gen.binomial(size, theta[rows, arm] / size)
            for a in range(2):
                sel = arm == a
                logpost[sel] += self.log_lik[a][reward[sel]]
        return out

    def arm_probs(self, counts: tuple) -> np.ndarray:
        if counts not in self._probs_cache:
            lp = self.log_prior.copy()
            for a in range(2):
                for k, c in enumerate(counts[a]):
                    if c:
                        lp = lp + c * self.log_lik[a][k]
            w = np.exp(lp - lp.max())
            w /= w.sum()
            choice = self._choice_of_points()
            self._probs_cache[counts] = np.bincount(choice, weights=w, minlength=2)
        return self._probs_cache[counts]

    def exact_states(self, theta, t: int) -> dict:
        theta = np.asarray(theta, dtype=float)
        states = {tuple(tuple([0] * (s + 1)) for s in self.sizes): 1.0}
        for _ in range(t - 1):
            nxt: dict = {}
            for counts, p in states.items():
                probs = self.arm_probs(counts)
                for a in range(2):
                    if probs[a] <= 0:
                        continue
                    size = self.sizes[a]
                    pmf = stats.binom.pmf(np.arange(size + 1), size, theta[a] / size)
                    for k in range(size + 1):
                        q = p * probs[a] * pmf[k]
                        if q > 0:
                            c = [list(x) for x in counts]
                            c[a][k] += 1
                            key = tuple(tuple(x) for x in c)
                            nxt[key] = nxt.get(key, 0.0) + q
            states = nxt
        return states

    def exact_arm_distribution(self, theta, t):
        out = np.zeros(2)
        for counts, p in self.exact_states(theta, t).items():
            out += p * self.arm_probs(counts)
        return out


@dataclass
class TwoArmRun:
    theta: np.ndarray
    arms: np.ndarray  # 0 for A, 1 for A'
    rewards: np.ndarray  # arm-level reward sums


def run_two_arm_correlated(joint: TwoArmJointPrior, T: int, rng,
                           theta: Optional[np.ndarray] = None) -> TwoArmRun:
    gen = as_generator(rng)
    algo = TwoArmThompson(joint)
    if theta is None:
        theta = joint.sample(gen, 1)[0]
    theta = np.asarray(theta, dtype=float)
    arms = np.zeros(T, dtype=np.int64)
    rewards = np.zeros(T, dtype=np.int64)
    counts = [[0] * (s + 1) for s in algo.sizes]
    for t in range(T):
        probs = algo.arm_probs(tuple(tuple(c) for c in counts))
        a = int(gen.random() >= probs[0])
        k = int(gen.binomial(algo.sizes[a], theta[a] / algo.sizes[a]))
        counts[a][k] += 1
        arms[t], rewards[t] = a, k
    return TwoArmRun(theta, arms, rewards)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------


def n_ts_formula(c_ts: float, d: int, eps: float, delta: float) -> float:
    """ceil(c_ts * d^2 * eps^-2 * ln(1/delta)); inf when eps <= 0."""
    if eps <= 0:
        return math.inf
    if delta >= 1:
        return 0
    return math.ceil(c_ts * d * d * math.log(1.0 / delta) / (eps * eps))


@dataclass
class TsConstants:
    epsilon_ts: float
    epsilon_ci: float
    delta_ts: float
    delta_ci: float
    c_ts: float
    n_ts: int
    n_ts_interval: tuple
    mc_samples: int
    seed: Optional[int]
    d: int
    argmin_pair: tuple
    argmin_arm: int
    best_freq: list = field(default_factory=list)
    pair_gaps: list = field(default_factory=list)
    diagnostic: dict = field(default_factory=dict)

    def recompute_n_ts(self) -> int:
        return n_ts_formula(self.c_ts, self.d, self.epsilon_ts, self.delta_ts)

    def to_dict(self) -> dict:
        return {
            "kind": "ts",
            "epsilon_ts": self.epsilon_ts,
            "epsilon_ci": self.epsilon_ci,
            "delta_ts": self.delta_ts,
            "delta_ci": self.delta_ci,
            "c_ts": self.c_ts,
            "n_ts": self.n_ts,
            "n_ts_interval": [_jsonable(x) for x in self.n_ts_interval],
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "d": self.d,
            "argmin_pair": list(self.argmin_pair),
            "argmin_arm": self.argmin_arm,
            "best_freq": self.best_freq,
            "pair_gaps": self.pair_gaps,
            "diagnostic": self.diagnostic,
        }


def _jsonable(x):
    return None if x == math.inf else x


def _arm_means(prior, family, M, gen):
    thetas = prior.sample(gen, M)
    return thetas, thetas @ family.incidence.T


def estimate_ts_constants(prior, family: ArmFamily, mc_samples: int = 10**5,
                          c_ts: float = 1.0, rng=0, seed: Optional[int] = None) -> TsConstants:
    """Monte Carlo estimates of eps_TS, delta_TS and the resulting n_TS.

    eps_TS is the smallest mean positive-part gap over ordered arm pairs;
    delta_TS is the smallest best-arm frequency.  Radii are 99% normal
    approximations.
    """
    if mc_samples < 1000:
        raise ValueError("mc_samples must be at least 1000")
    arms = family.arms()
    K = len(arms)
    if K < 2:
        raise DegenerateFamily("eps_TS is a minimum over distinct arm pairs; family has one arm")
    gen = as_generator(rng)
    _, mu = _arm_means(prior, family, mc_samples, gen)
    best = np.argmax(mu, axis=1)
    freq = np.bincount(best, minlength=K) / mc_samples

    gaps = np.full((K, K), np.inf)
    sds = np.zeros((K, K))
    joint = np.zeros((K, K))  # E[(mu_A - mu_A')_+ 1{A* = A}]
    for a in range(K):
        pos = np.maximum(mu[:, [a]] - mu, 0.0)
        gaps[a] = pos.mean(axis=0)
        sds[a] = pos.std(axis=0, ddof=1)
        joint[a] = (pos * (best == a)[:, None]).mean(axis=0)
        gaps[a, a] = np.inf
    i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
    eps = float(gaps[i, j])
    eps_r = Z99 * float(sds[i, j]) / math.sqrt(mc_samples)
    k = int(np.argmin(freq))
    delta = float(freq[k])
    if delta == 0:
        raise DegeneratePrior(
            f"arm {arms[k]} was never best in {mc_samples} prior draws; "
            "the pairwise assumption may fail"
        )
    delta_r = Z99 * math.sqrt(delta * (1 - delta) / mc_samples)
    n_ts = n_ts_formula(c_ts, family.d, eps, delta)
    interval = (n_ts_formula(c_ts, family.d, eps + eps_r, delta),
                n_ts_formula(c_ts, family.d, eps - eps_r, delta))
    slack = joint - eps * freq[:, None]
    np.fill_diagonal(slack, np.inf)
    diagnostic = {
        "min_joint_minus_eps_delta": float(np.min(slack)),
        "note": "report-only: E[(mu(A)-mu(A'))_+ 1{A*=A}] - eps_TS * Pr[A*=A], minimum over pairs",
    }
    pair_gaps = [
        {"arm": list(arms[a].atoms), "competitor": list(arms[b].atoms), "gap": float(gaps[a, b])}
        for a in range(K) for b in range(K) if a != b
    ]
    return TsConstants(
        epsilon_ts=eps, epsilon_ci=eps_r, delta_ts=delta, delta_ci=delta_r, c_ts=c_ts,
        n_ts=n_ts, n_ts_interval=interval, mc_samples=mc_samples, seed=seed, d=family.d,
        argmin_pair=(int(i), int(j)), argmin_arm=k, best_freq=[float(x) for x in freq],
        pair_gaps=pair_gaps, diagnostic=diagnostic,
    )


NONDEGENERACY_GRID = (0.25, 0.125, 0.0625)


def check_prior_assumptions(prior: ProductPrior, family: ArmFamily, tau: float = 0.5,
                            alpha_exponent: float = 1.0, mc_samples: int = 10**5,
                            rng=0) -> dict:
    """Report on the three prior assumptions behind the polynomial n_TS bound.

    * pairwise: Pr[mu(A') < E[mu(A)]] > 0 for every ordered pair (Monte Carlo);
    * full support: Pr[theta_l > tau] > 0 (exact);
    * lower tail: Pr[theta_l < x] > exp(-x^-alpha) on a grid of x, with the
      unspecified polynomial factor taken as 1 (exact).
    """
    gen = as_generator(rng)
    arms = family.arms()
    thetas, mu = _arm_means(prior, family, mc_samples, gen)
    prior_mu = family.incidence @ prior.means
    pairwise = []
    for a in range(len(arms)):
        for b in range(len(arms)):
            if a == b:
                continue
            p = float(np.mean(mu[:, b] < prior_mu[a]))
            pairwise.append({
                "arm": list(arms[a].atoms), "competitor": list(arms[b].atoms),
                "estimate": p, "ci": Z99 * math.sqrt(p * (1 - p) / mc_samples),
                "satisfied": p > 0,
            })
    full_support = []
    lower_tail = []
    for j, p in enumerate(prior.atoms):
        q = float(p.sf(tau))
        full_support.append({"atom": j, "estimate": q, "satisfied": q > 0})
        for x in NONDEGENERACY_GRID:
            lhs = float(p.prob_below(x, strict=True))
            rhs = math.exp(-x ** (-alpha_exponent))
            lower_tail.append({"atom": j, "x": x, "estimate": lhs, "threshold": rhs,
                               "satisfied": lhs > rhs})
    return {
        "pairwise": pairwise,
        "pairwise_ok": all(r["satisfied"] for r in pairwise),
        "full_support": full_support,
        "full_support_ok": all(r["satisfied"] for r in full_support),
        "lower_tail": lower_tail,
        "lower_tail_ok": all(r["satisfied"] for r in lower_tail),
        "tau": tau,
        "alpha_exponent": alpha_exponent,
        "mc_samples": mc_samples,
    }


# ---------------------------------------------------------------------------
# Composite runs
# ---------------------------------------------------------------------------


class ExogenousBootstrap:
    """``n`` samples of every atom handed to Thompson Sampling before round 1."""

    name = "exogenous"
    T0 = 0

    def __init__(self, n: int):
        self.n = int(n)
        self.guarantee = self.n

    def describe(self):
        return f"exogenous(n={self.n})"

    def run(self, instance: Instance, rng):
        gen = as_generator(rng)
        s = gen.binomial(self.n, instance.theta).astype(np.int64)
        return SegmentLog(instance.d), s, self.n - s


@dataclass
class CompositeRun:
    instance: Instance
    T0: int
    bootstrap_log: SegmentLog
    history: History
    arms: list
    gaps: np.ndarray

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.gaps)

    @property
    def bootstrap_regret(self) -> float:
        best = max(self.instance.mu(a) for a in self._family_arms)
        return float(sum(s.length * (best - self.instance.mu(s.arm))
                         for s in self.bootstrap_log.segments))


def run_composite(bootstrap, family: ArmFamily, prior: ProductPrior, T: int, rng,
                  instance: Optional[Instance] = None) -> CompositeRun:
    """Run ``bootstrap`` for its declared T0 rounds, then Thompson Sampling for T rounds.

    The bootstrap must declare T0 up front; its per-atom sample guarantee is
    checked before Thompson Sampling starts.
    """
    gen = as_generator(rng)
    if instance is None:
        instance = sample_instance(prior, gen)
    log, s, f = bootstrap.run(instance, gen)
    if log.total_rounds != bootstrap.T0:
        raise BootstrapUnderfilled(
            f"bootstrap ran {log.total_rounds} rounds but declared T0={bootstrap.T0}")
    counts = np.asarray(s) + np.asarray(f)
    if np.any(counts < bootstrap.guarantee):
        raise BootstrapUnderfilled(
            f"per-atom samples {counts.tolist()} below the declared {bootstrap.guarantee}")
    hist = History(prior.d)
    hist.add_counts(s, f)
    best_mu = max(instance.mu(a) for a in family.arms())
    arms, gaps = [], np.zeros(T)
    for t in range(T):
        draw = sample_posterior_batch(prior, hist.successes[None, :], hist.failures[None, :], gen)[0]
        arm = family.best(draw)
        rewards = pull(instance, arm, gen)
        hist.record(bootstrap.T0 + t + 1, arm, rewards)
        arms.append(arm)
        gaps[t] = best_mu - instance.mu(arm)
    run = CompositeRun(instance, bootstrap.T0, log, hist, arms, gaps)
    run._family_arms = family.arms()
    return run


def regret_curves(algorithm, prior, family: ArmFamily, T: int, replicates: int, seed: int,
                  chunk: int = 2000, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Mean cumulative Bayesian regret and its standard error for rounds 1..T."""
    from .parallel import run_chunks

    def one(n, stream):
        theta = prior.sample(stream.gen, n)
        masks = algorithm.simulate_full(theta, T, stream.gen)
        mu_all = theta @ family.incidence.T
        best = mu_all.max(axis=1)
        chosen = np.einsum("rtd,rd->rt", _bits(masks, family.d), theta)
        return np.cumsum(best[:, None] - chosen, axis=1)

    cum = np.concatenate(run_chunks(one, replicates, seed, chunk, threads), axis=0)
    return cum.mean(axis=0), cum.std(axis=0, ddof=1) / math.sqrt(cum.shape[0])


def _bits(masks: np.ndarray, d: int) -> np.ndarray:
    return ((masks[..., None] >> np.arange(d, dtype=np.int64)) & 1).astype(float)
