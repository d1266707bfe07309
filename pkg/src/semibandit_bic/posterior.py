"""Exact Bayesian updates and posterior-best arm selection.

Beta atoms are conjugate; discrete atoms keep unnormalised log-weights
``log p(theta) + s log theta + f log(1 - theta)`` and normalise on read.
Both kinds depend on the data only through per-atom (successes, failures).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp, xlog1py, xlogy

from .core import (
    Arm,
    ArmFamily,
    BetaPrior,
    DiscretePrior,
    ProductPrior,
    as_generator,
)
from .errors import BudgetExceeded, NonDiscretePrior


def nu(atom_prior: BetaPrior, n) -> float:
    """Posterior mean of a Beta atom after ``n`` samples that all returned 0."""
    return atom_prior.alpha / (atom_prior.alpha + atom_prior.beta + n)


def nu_vector(prior: ProductPrior, z) -> np.ndarray:
    """nu_l(z_l) for every atom; ``z`` broadcasts against (..., d)."""
    return prior.alphas / (prior.alphas + prior.betas + np.asarray(z, dtype=float))


def _discrete_log_weights(p: DiscretePrior, s, f) -> np.ndarray:
    sup = np.asarray(p.support)
    s = np.asarray(s, dtype=float)[..., None]
    f = np.asarray(f, dtype=float)[..., None]
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(p.probs))
    return logp + xlogy(s, sup) + xlog1py(f, -sup)


@dataclass(frozen=True)
class PosteriorState:
    """Posterior over a product prior given per-atom success/failure counts."""

    prior: ProductPrior
    successes: tuple[int, ...]
    failures: tuple[int, ...]

    @classmethod
    def fresh(cls, prior: ProductPrior) -> "PosteriorState":
        zeros = (0,) * prior.d
        return cls(prior, zeros, zeros)

    @classmethod
    def from_counts(cls, prior, successes, failures) -> "PosteriorState":
        return cls(prior, tuple(int(x) for x in successes), tuple(int(x) for x in failures))

    @property
    def d(self):
        return self.prior.d

    def update(self, atom: int, reward: int) -> "PosteriorState":
        if reward not in (0, 1):
            raise ValueError("rewards are Bernoulli")
        s, f = list(self.successes), list(self.failures)
        if reward:
            s[atom] += 1
        else:
            f[atom] += 1
        return replace(self, successes=tuple(s), failures=tuple(f))

    def update_many(self, rewards: dict[int, int]) -> "PosteriorState":
        state = self
        for a, r in rewards.items():
            state = state.update(a, r)
        return state

    def beta_params(self, atom: int) -> tuple[float, float]:
        p = self.prior.atoms[atom]
        return p.alpha + self.successes[atom], p.beta + self.failures[atom]

    def discrete_weights(self, atom: int) -> np.ndarray:
        p = self.prior.atoms[atom]
        if not isinstance(p, DiscretePrior):
            raise NonDiscretePrior(f"atom {atom} is not discrete")
        lw = _discrete_log_weights(p, self.successes[atom], self.failures[atom])
        return np.exp(lw - logsumexp(lw))

    def mean(self, atom: int) -> float:
        p = self.prior.atoms[atom]
        if isinstance(p, BetaPrior):
            a, b = self.beta_params(atom)
            return a / (a + b)
        return float(np.asarray(p.support) @ self.discrete_weights(atom))

    def means(self) -> np.ndarray:
        return np.array([self.mean(j) for j in range(self.d)])

    def sample(self, rng, size=None) -> np.ndarray:
        gen = as_generator(rng)
        n = 1 if size is None else size
        s = np.broadcast_to(np.array(self.successes), (n, self.d))
        f = np.broadcast_to(np.array(self.failures), (n, self.d))
        out = sample_posterior_batch(self.prior, s, f, gen)
        return out[0] if size is None else out


def posterior_mean_arm(state: PosteriorState, arm: Arm) -> float:
    return float(sum(state.mean(a) for a in arm.atoms))


def best_arm(means, family: ArmFamily) -> Arm:
    """argmax over the family of summed means; ties go to the lexicographically first arm."""
    return family.best(np.asarray(means, dtype=float))


# ---------------------------------------------------------------------------
# Batch (vectorised over replicates) helpers
# ---------------------------------------------------------------------------


def posterior_means_batch(prior: ProductPrior, s: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Posterior means for (R, d) success/failure count arrays."""
    s = np.asarray(s, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.empty(np.broadcast_shapes(s.shape, f.shape))
    for j, p in enumerate(prior.atoms):
        if isinstance(p, BetaPrior):
            out[..., j] = (p.alpha + s[..., j]) / (p.alpha + p.beta + s[..., j] + f[..., j])
        else:
            lw = _discrete_log_weights(p, s[..., j], f[..., j])
            w = np.exp(lw - logsumexp(lw, axis=-1, keepdims=True))
            out[..., j] = w @ np.asarray(p.support)
    return out


def sample_posterior_batch(prior: ProductPrior, s, f, gen: np.random.Generator) -> np.ndarray:
    """One posterior draw per row of (R, d) count arrays."""
    s = np.asarray(s, dtype=float)
    f = np.asarray(f, dtype=float)
    R = s.shape[0]
    out = np.empty((R, prior.d))
    for j, p in enumerate(prior.atoms):
        if isinstance(p, BetaPrior):
            out[:, j] = gen.beta(p.alpha + s[:, j], p.beta + f[:, j])
        else:
            lw = _discrete_log_weights(p, s[:, j], f[:, j])
            w = np.exp(lw - logsumexp(lw, axis=-1, keepdims=True))
            cdf = np.cumsum(w, axis=1)
            u = gen.random(R)[:, None] * cdf[:, -1:]
            idx = np.minimum((u >= cdf).sum(axis=1), len(p.support) - 1)
            out[:, j] = np.asarray(p.support)[idx]
    return out


# ---------------------------------------------------------------------------
# Exact posterior argmax distributions (discrete posteriors only)
# ---------------------------------------------------------------------------


def joint_posterior_support(state: PosteriorState, budget: int = 10**6):
    """Joint support (points, probs) of a discrete product posterior."""
    prior = state.prior
    if not prior.is_discrete:
        raise NonDiscretePrior("exact posterior enumeration needs discrete priors")
    sizes = [len(p.support) for p in prior.atoms]
    if int(np.prod(sizes, dtype=float)) > budget:
        raise BudgetExceeded("joint posterior support exceeds budget")
    grids = np.meshgrid(*[np.asarray(p.support) for p in prior.atoms], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    ws = np.meshgrid(*[state.discrete_weights(j) for j in range(prior.d)], indexing="ij")
    pr = np.prod(np.stack([w.ravel() for w in ws], axis=1), axis=1)
    return pts, pr


def argmax_distribution(points: np.ndarray, probs: np.ndarray, family: ArmFamily) -> np.ndarray:
    """Pr[A* = A] over the family's arm list for a finite distribution of mean vectors."""
    idx = family.index_of(family.best_masks(points))
    return np.bincount(idx, weights=probs, minlength=len(family.arms()))
