"""Checks of the BIC condition and of the Property (P) probability bounds.

``bic_margin_exact`` enumerates discrete priors; ``bic_margin_mc`` estimates
E[mu(A) - mu(A') | A^(t) = A] from replicates with 99% normal intervals.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .core import ArmFamily, BetaPrior, DiscretePrior, ProductPrior, TwoArmJointPrior, as_generator
from .errors import BudgetExceeded, NonDiscretePrior
from .parallel import DEFAULT_CHUNK, run_chunks
from .posterior import posterior_means_batch
from .sequence import PropertyPReport, event_probability_exact
from .thompson import Z99

LOW_SUPPORT = 30
EXACT_BUDGET = 10**7
CSV_HEADER = ["round", "arm", "competitor", "margin", "ci_radius", "mode", "support_count"]


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass
class BicRow:
    arm: int
    pr_recommend: float
    margins: np.ndarray  # (K,), NaN on the diagonal and without support
    ci_radius: np.ndarray  # (K,)
    support_count: float
    status: str = "ok"  # ok | LowSupport | NoSupport


@dataclass
class BicMarginTable:
    round: int
    mode: str  # Exact | MonteCarlo
    arms: list
    rows: list = field(default_factory=list)
    replicates: Optional[int] = None

    def row(self, arm) -> BicRow:
        k = self.arms.index(arm)
        return next(r for r in self.rows if r.arm == k)

    def cells(self):
        for r in self.rows:
            if r.status == "NoSupport":
                continue
            for j in range(len(self.arms)):
                if j != r.arm:
                    yield r, j, float(r.margins[j]), float(r.ci_radius[j])

    def min_slack(self) -> float:
        """Smallest margin + ci_radius over supported cells (inf if none)."""
        vals = [m + c for _, _, m, c in self.cells()]
        return min(vals) if vals else math.inf

    def passes(self) -> bool:
        return self.min_slack() >= -1e-12 if self.mode == "Exact" else self.min_slack() >= 0

    def pr_total(self) -> float:
        return float(sum(r.pr_recommend for r in self.rows))

    def csv_rows(self):
        out = []
        for r in self.rows:
            for j in range(len(self.arms)):
                if j == r.arm:
                    continue
                m = r.margins[j]
                out.append([self.round, self.arms[r.arm].hex(), self.arms[j].hex(),
                            "" if np.isnan(m) else repr(float(m)),
                            repr(float(r.ci_radius[j])), self.mode, _fmt_count(r.support_count)])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(self.csv_rows())
        return buf.getvalue()


def _fmt_count(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


# ---------------------------------------------------------------------------
# Exact oracle
# ---------------------------------------------------------------------------


def _support(prior):
    if isinstance(prior, TwoArmJointPrior):
        return prior.points, prior.weights
    if not prior.is_discrete:
        raise NonDiscretePrior("the exact oracle needs discrete priors")
    return prior.support_points()


def exact_joint(algorithm, prior, family: ArmFamily, t: int, budget: int = EXACT_BUDGET):
    """(points, probs, dist) with dist[p, k] = Pr[A^(t) = arm k | theta = points[p]]."""
    pts, pr = _support(prior)
    if hasattr(algorithm, "exact_joint"):
        return algorithm.exact_joint(t, budget)
    dist = np.array([algorithm.exact_arm_distribution(th, t) for th in pts])
    return pts, pr, dist


def table_from_joint(t: int, family: ArmFamily, pts, pr, dist) -> BicMarginTable:
    arms = family.arms()
    K = len(arms)
    mu = np.asarray(pts, dtype=float) @ family.incidence.T  # (P, K)
    joint = pr[:, None] * dist  # (P, K)
    table = BicMarginTable(t, "Exact", arms)
    for k in range(K):
        pk = float(joint[:, k].sum())
        if pk <= 0:
            continue
        margins = (joint[:, k] @ (mu[:, [k]] - mu)) / pk
        margins[k] = np.nan
        table.rows.append(BicRow(k, pk, margins, np.zeros(K), pk))
    return table


def bic_margin_exact(algorithm, prior, family: ArmFamily, t: int,
                     budget: int = EXACT_BUDGET) -> BicMarginTable:
    """Exact E[mu(A) - mu(A') | A^(t) = A] for every A with Pr[A^(t) = A] > 0."""
    pts, pr, dist = exact_joint(algorithm, prior, family, t, budget)
    return table_from_joint(t, family, pts, pr, dist)


def history_mass(algorithm, theta, t: int) -> float:
    """Total probability of the enumerated count states at round t (should be 1)."""
    return float(sum(algorithm.exact_states(theta, t).values()))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def _weights(algorithm, theta, rounds, gen, K, family):
    """(R, T, K) recommendation weights: one-hot draws, or exact weights when offered."""
    if hasattr(algorithm, "recommendation_weights"):
        return algorithm.recommendation_weights(theta, rounds, gen)
    masks = algorithm.simulate(theta, rounds, gen)
    idx = family.index_of(masks)
    if np.any(idx < 0):
        raise ValueError("algorithm recommended an arm outside the family")
    w = np.zeros(masks.shape + (K,))
    np.put_along_axis(w, idx[..., None], 1.0, axis=-1)
    return w


def bic_margin_mc(algorithm, prior, family: ArmFamily, rounds, replicates: int, rng=0,
                  chunk: int = DEFAULT_CHUNK, threads: int = 1) -> list[BicMarginTable]:
    """Monte Carlo margin tables, one per round.

    Each replicate draws theta from the prior and runs the algorithm.  The
    estimate of E[mu(A) - mu(A') | A^(t) = A] is a ratio of means with a
    delta-method standard error; radii are 99% normal intervals.  Fewer than
    30 conditioning hits gives LowSupport, none gives NoSupport.
    """
    rounds = [int(t) for t in rounds]
    if not rounds:
        raise ValueError("no rounds requested")
    if replicates < 1000:
        raise ValueError("replicates must be at least 1000")
    arms = family.arms()
    K = len(arms)
    inc = family.incidence
    seed = rng if isinstance(rng, (int, np.integer)) else int(as_generator(rng).integers(2**63))
    # rounds sharing a key have the same joint law; estimate each key once
    if hasattr(algorithm, "round_key") and hasattr(algorithm, "recommendation_weights"):
        keys = [algorithm.round_key(t) for t in rounds]
        reps = list(dict.fromkeys(keys))
        rep_round = {k: t for t, k in zip(rounds, keys)}
        sim_rounds = [rep_round[k] for k in reps]
        col_of = [reps.index(k) for k in keys]
    else:
        sim_rounds = rounds
        col_of = list(range(len(rounds)))
    per_rep = max(1, len(sim_rounds) * K * K)
    chunk = max(1000, min(chunk, 4_000_000 // per_rep))

    def one(n, stream):
        gen = stream.gen
        theta = prior.sample(gen, n)
        mu = theta @ inc.T  # (n, K)
        w = _weights(algorithm, theta, sim_rounds, gen, K, family)  # (n, T, K)
        diff = mu[:, None, :, None] - mu[:, None, None, :]  # (n, 1, K, K)
        wd = w[..., None] * diff
        return {
            "w": w.sum(axis=0),
            "w2": (w ** 2).sum(axis=0),
            "hits": (w > 0).sum(axis=0),
            "wd": wd.sum(axis=0),
            "wd2": (wd ** 2).sum(axis=0),
            "w2d": (w[..., None] ** 2 * diff).sum(axis=0),
        }

    parts = run_chunks(one, replicates, seed, chunk, threads)
    tot = {k: sum(p[k] for p in parts) for k in parts[0]}
    R = replicates
    tables = []
    for t, ti in zip(rounds, col_of):
        table = BicMarginTable(t, "MonteCarlo", arms, replicates=R)
        for k in range(K):
            sw = tot["w"][ti, k]
            hits = int(tot["hits"][ti, k])
            if sw <= 0:
                table.rows.append(BicRow(k, 0.0, np.full(K, np.nan), np.full(K, np.nan), 0, "NoSupport"))
                continue
            m = tot["wd"][ti, k] / sw
            # Var of w (d - m) per replicate, for the ratio estimator
            s2 = tot["wd2"][ti, k] - 2 * m * tot["w2d"][ti, k] + m ** 2 * tot["w2"][ti, k]
            # the expanded square cancels; treat rounding-level residue as zero variance
            scale = tot["wd2"][ti, k] + m ** 2 * tot["w2"][ti, k]
            s2 = np.where(s2 <= 1e-12 * scale, 0.0, s2)
            var = np.maximum(s2 / R, 0.0) / (sw / R) ** 2 / R
            ci = Z99 * np.sqrt(var)
            m = m.copy()
            m[k] = np.nan
            ci[k] = 0.0
            ess = sw ** 2 / tot["w2"][ti, k]
            status = "ok" if min(hits, ess) >= LOW_SUPPORT else "LowSupport"
            table.rows.append(BicRow(k, sw / R, m, ci, hits, status))
        tables.append(table)
    return tables


def agreement(exact: BicMarginTable, mc: BicMarginTable, k_sigma: float = 4.0) -> tuple[int, int]:
    """(cells within k_sigma stderr, cells compared) between an exact and an MC table."""
    ok = n = 0
    for r in exact.rows:
        row = next(x for x in mc.rows if x.arm == r.arm)
        if row.status == "NoSupport":
            continue
        for j in range(len(exact.arms)):
            if j == r.arm:
                continue
            n += 1
            se = row.ci_radius[j] / Z99
            if np.isnan(row.margins[j]):
                continue
            if abs(row.margins[j] - r.margins[j]) <= k_sigma * se + 1e-12:
                ok += 1
    return ok, n


# ---------------------------------------------------------------------------
# Property (P)
# ---------------------------------------------------------------------------


def property_p_empirical(prior: ProductPrior, family: ArmFamily, report: PropertyPReport, N: int,
                         replicates: int, rng=0, force_zero: bool = False) -> list[dict]:
    """Estimate Pr[X_i^N >= tau_P] per phase.

    Atoms covered by V_1..V_{i-1} get N samples each; ``force_zero`` makes
    every such sample 0 (the event E_{i-1}).
    """
    prior.require_beta()
    gen = as_generator(rng)
    inc = family.incidence
    seq = report.sequence
    out = []
    covered = 0
    for i, v in enumerate(seq, start=1):
        atoms = [j for j in range(prior.d) if covered >> j & 1]
        theta = prior.sample(gen, replicates)
        s = np.zeros_like(theta)
        f = np.zeros_like(theta)
        if atoms:
            if force_zero:
                f[:, atoms] = N
            else:
                s[:, atoms] = gen.binomial(N, theta[:, atoms])
                f[:, atoms] = N - s[:, atoms]
        vals = posterior_means_batch(prior, s, f) @ inc.T
        k = int(family.index_of([v.mask])[0])
        others = np.delete(vals, k, axis=1)
        x = vals[:, k] - (others.max(axis=1) if others.shape[1] else np.inf)
        hit = x >= report.tau_p
        p = float(hit.mean())
        se = math.sqrt(max(p * (1 - p), 0.0) / replicates)
        ev = event_probability_exact(prior, atoms, N)
        out.append({
            "phase": i,
            "pr_hat": p,
            "stderr": se,
            "rho_p": report.rho_p,
            "event_probability": ev,
            "pass": p + 3 * se >= report.rho_p,
            "chain_ok": p + 3 * se >= ev >= report.rho_p * (1 - 1e-12),
            "min_x": float(x.min()),
        })
        covered |= v.mask
    return out


# ---------------------------------------------------------------------------
# Anti-concentration and Harris
# ---------------------------------------------------------------------------


def tau_of_values(nu: np.ndarray, family: ArmFamily) -> np.ndarray:
    """Per row of (R, d) atom values, the smallest gap between two distinct arms."""
    vals = nu @ family.incidence.T
    if vals.shape[1] < 2:
        return np.full(vals.shape[0], np.inf)
    return np.diff(np.sort(vals, axis=1), axis=1).min(axis=1)


def esseen_experiment(intervals, family: ArmFamily, delta: float, replicates: int, rng=0,
                      n=None) -> dict:
    """Frequency of tau_P(n) < delta / (2 8^d) with nu_l(n_l) ~ U[a_l, b_l]."""
    iv = np.asarray(intervals, dtype=float)
    d = iv.shape[0]
    if np.any(iv[:, 0] < 0) or np.any(iv[:, 1] > 1) or np.any(iv[:, 0] > iv[:, 1]):
        raise ValueError("intervals must satisfy 0 <= a <= b <= 1")
    gen = as_generator(rng)
    nu = iv[:, 0] + (iv[:, 1] - iv[:, 0]) * gen.random((replicates, d))
    tau = tau_of_values(nu, family)
    thr = delta / (2 * 8 ** d)
    f = float(np.mean(tau < thr))
    se = math.sqrt(f * (1 - f) / replicates)
    bound = delta / 2 ** d
    return {
        "d": d,
        "delta": delta,
        "n": None if n is None else list(n),
        "threshold": thr,
        "freq_below": f,
        "stderr": se,
        "bound": bound,
        "pass": f <= bound + 3 * se,
        "premise_violation": bool(np.any(iv[:, 1] <= iv[:, 0])),
    }


def _expect_one_minus_pow(p, n: int, exact: bool):
    if isinstance(p, BetaPrior):
        if exact:
            a, b = Fraction(p.alpha), Fraction(p.beta)
            out = Fraction(1)
            for k in range(n):
                out *= (b + k) / (a + b + k)
            return out
        k = np.arange(n)
        return float(np.prod((p.beta + k) / (p.alpha + p.beta + k)))
    if isinstance(p, DiscretePrior):
        if exact:
            return sum(Fraction(q) * (1 - Fraction(x)) ** n for x, q in zip(p.support, p.probs))
        return float(sum(q * (1 - x) ** n for x, q in zip(p.support, p.probs)))
    raise TypeError(type(p))


def harris_spotcheck(prior: ProductPrior, n: int, atoms=None, exact: bool = True) -> dict:
    """E[prod (1 - theta_l)^n] against prod (1 - E theta_l)^n for the given atoms."""
    if n < 1:
        raise ValueError("n must be at least 1")
    atoms = range(prior.d) if atoms is None else atoms
    lhs = Fraction(1) if exact else 1.0
    rhs = Fraction(1) if exact else 1.0
    for j in atoms:
        p = prior.atoms[j]
        lhs *= _expect_one_minus_pow(p, n, exact)
        m = Fraction(p.alpha) / (Fraction(p.alpha) + Fraction(p.beta)) if isinstance(p, BetaPrior) \
            else sum(Fraction(q) * Fraction(x) for x, q in zip(p.support, p.probs))
        rhs *= (1 - (m if exact else float(m))) ** n
    return {"lhs": lhs, "rhs": rhs, "pass": lhs >= rhs - (0 if exact else 1e-12)}
