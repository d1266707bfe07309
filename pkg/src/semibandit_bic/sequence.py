"""Property (P) arm sequences, their constants, and Hidden Exploration.

All constants here assume Beta priors.  "Atom 1" and "atom d" in the
formulas are the atoms with the largest and smallest prior mean; the
functions accept priors in any order and locate those atoms themselves.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .core import (
    Arm,
    ArmFamily,
    Instance,
    ProductPrior,
    as_generator,
    masks_to_indicators,
    sample_instance,
)
from .errors import BudgetExceeded, DegenerateConstants, NotFixedSize
from .logs import DETAIL_LIMIT, SegmentLog, play_segment
from .posterior import nu_vector, posterior_means_batch

EXACT_TAU_MAX_D = 12


def _first_last(prior: ProductPrior) -> tuple[int, int]:
    order = prior.canonical_order()
    return order[0], order[-1]


def _nu_exact(prior: ProductPrior, atom: int, n: int) -> Fraction:
    a = Fraction(prior.alphas[atom])
    return a / (a + Fraction(prior.betas[atom]) + n)


# ---------------------------------------------------------------------------
# Sequence
# ---------------------------------------------------------------------------


def build_sequence(prior: ProductPrior, family: ArmFamily, n: int,
                   cap: Optional[int] = None) -> tuple[list[Arm], Optional[int]]:
    """Arms V_1, V_2, ... each posterior-best when earlier arms' atoms saw n zeros.

    Returns ``(sequence, kappa)``; ``kappa`` is None (unbounded) when the cap
    is hit or when the next arm would add no new atom, since the sequence
    then repeats forever.
    """
    prior.require_beta()
    d = prior.d
    cap = d if cap is None else int(cap)
    full = (1 << d) - 1
    covered = 0
    seq: list[Arm] = []
    while len(seq) < cap:
        z = n * masks_to_indicators(np.array([covered]), d)[0]
        v = family.best(nu_vector(prior, z))
        if v.mask & ~covered == 0:
            return seq, None
        seq.append(v)
        covered |= v.mask
        if covered == full:
            return seq, len(seq)
    return seq, None


def coverage_vectors(sequence: list[Arm], d: int, n: int) -> list[np.ndarray]:
    """Z_i for i = 1..len(sequence): n on atoms covered by V_1..V_{i-1}, else 0."""
    out, covered = [], 0
    for v in sequence:
        out.append(n * masks_to_indicators(np.array([covered]), d)[0])
        covered |= v.mask
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class PropertyPReport:
    variant: str  # "FixedSize" | "General"
    d: int
    n_p: int
    tau_p: float
    rho_p: float
    kappa: Optional[int]
    sequence: list
    L: Optional[int]
    T0: Optional[int]
    mu0_max: float
    mu0_min: float
    degenerate: bool = False
    lower_confidence: bool = False
    nu_table: list = field(default_factory=list)
    tau_exact: Optional[Fraction] = None
    n0_corollary: Optional[dict] = None
    notes: list = field(default_factory=list)

    def total_rounds(self, N: Optional[int] = None, L: Optional[int] = None) -> Optional[int]:
        """Round count of the phase schedule: N + (kappa - 1) L N."""
        N = self.n_p if N is None else N
        L = self.L if L is None else L
        if self.kappa is None or L is None:
            return None
        return N + (self.kappa - 1) * L * N

    def to_dict(self) -> dict:
        return {
            "kind": "property_p",
            "variant": self.variant,
            "d": self.d,
            "n_p": self.n_p,
            "tau_p": self.tau_p,
            "rho_p": self.rho_p,
            "kappa": self.kappa,
            "sequence": [list(a.atoms) for a in self.sequence],
            "L": self.L,
            "T0": self.T0,
            "total_rounds_phase_schedule": self.total_rounds(),
            "mu0_max": self.mu0_max,
            "mu0_min": self.mu0_min,
            "degenerate": self.degenerate,
            "lower_confidence": self.lower_confidence,
            "nu_table": self.nu_table,
            "n0_corollary": self.n0_corollary,
            "notes": self.notes,
        }


def _schedule(kappa, n_p, d, tau, rho, mu_max, mu_min):
    """(L, T0, degenerate) from the gap/probability constants."""
    if tau == 0 or rho == 0 or kappa is None:
        return None, None, True
    if math.isinf(tau):
        # one arm only: no competitor, nothing to hide
        return 1, kappa * n_p, False
    denom = tau * rho
    if denom == 0:
        return None, None, True
    L = 1 + (mu_max - mu_min) / denom
    T0 = kappa * n_p * (1 + d) / denom
    if math.isinf(L) or math.isinf(T0):
        # subnormal tau * rho: the integers are still well defined
        exact = Fraction(tau) * Fraction(rho)
        L = 1 + Fraction(mu_max - mu_min) / exact
        T0 = kappa * n_p * (1 + d) / exact
    return math.ceil(L), math.ceil(T0), False


def _nu_table(prior, n_p):
    return [
        {"atom": j, "n": int(n), "nu": float(prior.alphas[j] / (prior.alphas[j] + prior.betas[j] + n))}
        for j in range(prior.d) for n in (0, n_p)
    ]


def _prior_arm_means(prior, family):
    m = prior.means
    best = family.best(m)
    worst = family.best(-m)
    return float(sum(m[a] for a in best.atoms)), float(sum(m[a] for a in worst.atoms))


def n_p_fixed(prior: ProductPrior) -> int:
    _, last = _first_last(prior)
    return math.ceil(prior.betas[last] / prior.alphas[last]) * max(math.ceil(a) for a in prior.alphas)


def n_p_general(prior: ProductPrior) -> int:
    _, last = _first_last(prior)
    a, b = prior.alphas[last], prior.betas[last]
    return math.ceil((a + b) / a) * max(math.ceil(x) for x in prior.alphas) * prior.d


def rho_p(prior: ProductPrior, n_p: int) -> float:
    first, _ = _first_last(prior)
    return float((1.0 - prior.means[first]) ** (prior.d * n_p))


def tau_fixed(prior: ProductPrior, n_p: int, exact: bool = False):
    """min |nu_l(n) - nu_l'(n')| over atoms l != l' and n, n' in {0, n_p}."""
    d = prior.d
    if d == 1:
        return math.inf
    if exact:
        vals = {(j, n): _nu_exact(prior, j, n) for j in range(d) for n in (0, n_p)}
    else:
        vals = {(j, n): float(nu_vector(prior, np.full(d, n))[j]) for j in range(d) for n in (0, n_p)}
    best = None
    for (j, n), (k, m) in itertools.permutations(vals, 2):
        if j == k:
            continue
        g = abs(vals[(j, n)] - vals[(k, m)])
        best = g if best is None or g < best else best
    return best


def _min_gap_rows(values: np.ndarray) -> np.ndarray:
    """Per row, the smallest difference between two distinct columns."""
    s = np.sort(values, axis=1)
    return np.diff(s, axis=1).min(axis=1)


def tau_general(prior: ProductPrior, family: ArmFamily, n_p: int, z_vectors=None,
                exact: bool = False):
    """min over A != A' and a shared n in {0, n_p}^d of |sum_A nu - sum_A' nu|.

    Full enumeration of the 2^d vectors when ``z_vectors`` is None; otherwise
    only the given vectors (a lower-confidence restriction).
    """
    arms = family.arms()
    if len(arms) < 2:
        return math.inf
    d = prior.d
    if z_vectors is None:
        if d > EXACT_TAU_MAX_D:
            raise BudgetExceeded(f"2^{d} coverage vectors exceed the exact budget")
        z_vectors = [np.array(bits, dtype=float) * n_p
                     for bits in itertools.product((0, 1), repeat=d)]
    Z = np.array(z_vectors, dtype=float)
    if exact:
        best = None
        inc = [a.atoms for a in arms]
        for z in Z:
            nu = [_nu_exact(prior, j, int(z[j])) for j in range(d)]
            vals = sorted(sum((nu[j] for j in atoms), Fraction(0)) for atoms in inc)
            g = min(b - a for a, b in zip(vals, vals[1:]))
            best = g if best is None or g < best else best
        return best
    values = nu_vector(prior, Z) @ family.incidence.T
    return float(_min_gap_rows(values).min())


def _finish(variant, prior, family, n_p, tau, tau_exact, kappa_cap, lower_conf=False):
    d = prior.d
    seq, kappa = build_sequence(prior, family, n_p, cap=kappa_cap)
    rho = rho_p(prior, n_p)
    mu_max, mu_min = _prior_arm_means(prior, family)
    L, T0, degenerate = _schedule(kappa, n_p, d, tau, rho, mu_max, mu_min)
    notes = []
    if tau == 0:
        notes.append("tau_p = 0: nu values collide")
    if kappa is None:
        notes.append("sequence does not cover all atoms within the cap")
    if rho == 0:
        notes.append("rho_p underflows double precision")
    return PropertyPReport(
        variant=variant, d=d, n_p=n_p, tau_p=float(tau), rho_p=rho, kappa=kappa, sequence=seq,
        L=L, T0=T0, mu0_max=mu_max, mu0_min=mu_min, degenerate=degenerate,
        lower_confidence=lower_conf, nu_table=_nu_table(prior, n_p), tau_exact=tau_exact,
        notes=notes,
    )


def constants_fixed_size(prior: ProductPrior, family: ArmFamily, exact: bool = False) -> PropertyPReport:
    """Property (P) constants for families whose arms all have the same size."""
    prior.require_beta()
    sizes = getattr(family, "m", None)
    if sizes is None and len(family.arm_sizes) != 1:
        raise NotFixedSize(f"arm sizes {sorted(family.arm_sizes)} differ")
    n_p = n_p_fixed(prior)
    tau_x = tau_fixed(prior, n_p, exact=True) if exact else None
    tau = tau_fixed(prior, n_p)
    m = family.m if sizes is not None else next(iter(family.arm_sizes))
    return _finish("FixedSize", prior, family, n_p, tau, tau_x, math.ceil(prior.d / m))


def constants_general(prior: ProductPrior, family: ArmFamily, exact: bool = False) -> PropertyPReport:
    """Property (P) constants for arbitrary (enumerable) families."""
    prior.require_beta()
    family.arms()  # BudgetExceeded when not enumerable
    d = prior.d
    n_p = n_p_general(prior)
    lower = d > EXACT_TAU_MAX_D
    z = None
    if lower:
        seq, _ = build_sequence(prior, family, n_p)
        z = coverage_vectors(seq, d, n_p) + [np.zeros(d), np.full(d, n_p)]
    tau = tau_general(prior, family, n_p, z)
    tau_x = tau_general(prior, family, n_p, z, exact=True) if exact else None
    return _finish("General", prior, family, n_p, tau, tau_x, d, lower)


def property_p_constants(prior, family, variant: str = "auto", exact: bool = False) -> PropertyPReport:
    if variant == "auto":
        variant = "FixedSize" if len(family.arm_sizes) == 1 else "General"
    if variant == "FixedSize":
        return constants_fixed_size(prior, family, exact)
    return constants_general(prior, family, exact)


# ---------------------------------------------------------------------------
# Exact claims
# ---------------------------------------------------------------------------


def event_probability_exact(prior: ProductPrior, atoms, n: int, exact: bool = False):
    """Pr[the first n samples of every atom in ``atoms`` are all 0]."""
    prior.require_beta()
    if exact:
        out = Fraction(1)
        for j in atoms:
            a, b = Fraction(prior.alphas[j]), Fraction(prior.betas[j])
            for k in range(n):
                out *= (b + k) / (a + b + k)
        return out
    out = 1.0
    for j in atoms:
        a, b = prior.alphas[j], prior.betas[j]
        k = np.arange(n)
        out *= float(np.prod((b + k) / (a + b + k)))
    return out


def rho_p_exact(prior: ProductPrior, n_p: int) -> Fraction:
    first, _ = _first_last(prior)
    a, b = Fraction(prior.alphas[first]), Fraction(prior.betas[first])
    return (b / (a + b)) ** (prior.d * n_p)


def conditional_gap(prior: ProductPrior, family: ArmFamily, sequence: list[Arm], i: int, N: int,
                    exact: bool = False):
    """X_i^N under all-zero samples: margin of V_i over the best other arm.

    ``i`` is 1-based.  Posterior means are exactly nu_l(Z_l) with Z_l = N on
    atoms covered by V_1..V_{i-1}.
    """
    d = prior.d
    covered = 0
    for v in sequence[: i - 1]:
        covered |= v.mask
    z = [N if covered >> j & 1 else 0 for j in range(d)]
    vi = sequence[i - 1]
    others = [a for a in family.arms() if a != vi]
    if not others:
        return math.inf
    if exact:
        nu = [_nu_exact(prior, j, z[j]) for j in range(d)]
        mine = sum((nu[j] for j in vi.atoms), Fraction(0))
        return min(mine - sum((nu[j] for j in a.atoms), Fraction(0)) for a in others)
    nu = nu_vector(prior, np.array(z, dtype=float))
    mine = float(sum(nu[j] for j in vi.atoms))
    return min(mine - float(sum(nu[j] for j in a.atoms)) for a in others)


def corollary_bound(c0: float, d: int, phi: float, general: bool = False) -> float:
    """c0 d Phi^d (fixed size) or c1 d^3 Phi^(d^2) (general), O-constant set to 1."""
    if general:
        return c0 * d ** 3 * phi ** (d * d)
    return c0 * d * phi ** d


def corollary_n0(prior: ProductPrior, family: ArmFamily, c0: float, c: float, c_prime: float,
                 general: bool = False, report: Optional[PropertyPReport] = None) -> dict:
    """Evaluate the corollary bound and check its premises (report only).

    Fixed size: Phi = c (1 - c')^(-c0); general: Phi = c2 (1 - c3)^(-c1) with
    (c1, c2, c3) passed as (c0, c, c_prime).
    """
    prior.require_beta()
    d = prior.d
    if report is None:
        report = constants_general(prior, family) if general else constants_fixed_size(prior, family)
    phi = c * (1 - c_prime) ** (-c0)
    bound = corollary_bound(c0, d, phi, general)
    mean_ok = bool(np.all(prior.means <= c_prime))
    if general:
        lhs = max(math.ceil((a + b) / a) for a, b in zip(prior.alphas, prior.betas)) * \
            max(math.ceil(a) for a in prior.alphas)
        tau_needed = c ** (-(d * d))
    else:
        lhs = max(math.ceil(b / a) for a, b in zip(prior.alphas, prior.betas)) * \
            max(math.ceil(a) for a in prior.alphas)
        tau_needed = c ** (-d)
    return {
        "variant": "General" if general else "FixedSize",
        "phi": phi,
        "n0_bound": bound,
        "prior_mean_ok": mean_ok,
        "sample_ratio": lhs,
        "sample_ratio_ok": lhs <= c0,
        "tau_p": report.tau_p,
        "tau_threshold": tau_needed,
        "tau_ok": report.tau_p >= tau_needed,
        "assumptions_ok": mean_ok and lhs <= c0 and report.tau_p >= tau_needed,
    }


# ---------------------------------------------------------------------------
# Hidden Exploration
# ---------------------------------------------------------------------------


def _sample_positions(gen: np.random.Generator, size: int, k: int) -> list[int]:
    """k distinct uniform positions in range(size), sorted; size may exceed int64."""
    if size < 2**62:
        return sorted(int(x) for x in gen.choice(size, size=k, replace=False))
    bits = size.bit_length()
    out: set[int] = set()
    while len(out) < k:
        x = int.from_bytes(gen.bytes((bits + 7) // 8), "little") & ((1 << bits) - 1)
        if x < size:
            out.add(x)
    return sorted(out)


@dataclass
class HiddenExplorationRun:
    instance: Instance
    log: SegmentLog
    q_positions: list  # per phase (1-based phase index i >= 2): sorted absolute rounds
    exploit_arms: list  # per phase i >= 2: A*
    N: int
    L: int
    sequence: list


class HiddenExplorationAlgo:
    """Phase schedule: N rounds of V_1, then phases of L N rounds hiding N rounds of V_i.

    Non-exploration rounds of phase i recommend A*_i, the posterior-best arm
    given the exploration samples of phases 1..i-1.
    """

    name = "hidden-exploration"

    def __init__(self, prior: ProductPrior, family: ArmFamily, sequence: list[Arm], N: int,
                 L: int, detail_limit: int = DETAIL_LIMIT):
        if not sequence:
            raise DegenerateConstants("empty arm sequence")
        if N < 1 or L < 1:
            raise DegenerateConstants("N and L must be positive")
        self.prior = prior
        self.family = family
        self.sequence = list(sequence)
        self.N = int(N)
        self.L = int(L)
        self.detail_limit = detail_limit

    @classmethod
    def from_report(cls, prior, family, report: PropertyPReport, N: Optional[int] = None,
                    L: Optional[int] = None, **kw):
        if report.degenerate or report.kappa is None:
            raise DegenerateConstants("Property (P) report is degenerate")
        N = report.n_p if N is None else N
        if N < report.n_p:
            raise DegenerateConstants(f"N={N} below n_P={report.n_p}")
        return cls(prior, family, report.sequence, N, report.L if L is None else L, **kw)

    @property
    def kappa(self) -> int:
        return len(self.sequence)

    @property
    def T0(self) -> int:
        return self.N + (self.kappa - 1) * self.L * self.N

    @property
    def guarantee(self) -> int:
        return self.N

    def describe(self):
        return f"hidden-exploration(N={self.N}, L={self.L})"

    def phase_of(self, t: int) -> int:
        """1-based phase index of round t."""
        if t < 1 or t > self.T0:
            raise ValueError(f"round {t} outside 1..{self.T0}")
        if t <= self.N:
            return 1
        return 2 + (t - self.N - 1) // (self.L * self.N)

    def phase_start(self, i: int) -> int:
        return 1 if i == 1 else self.N + (i - 2) * self.L * self.N + 1

    @property
    def explore_prob(self) -> float:
        """Pr[a given round of phase i >= 2 lies in Q]."""
        return 1.0 / self.L

    def _explored_counts(self, i: int) -> np.ndarray:
        """Samples per atom revealed before phase i (N per covering sequence arm)."""
        n = np.zeros(self.prior.d, dtype=np.int64)
        for v in self.sequence[: i - 1]:
            n[list(v.atoms)] += self.N
        return n

    # -- full run ----------------------------------------------------------

    def run(self, instance: Instance, rng):
        res = self.simulate_run(instance, rng)
        s, f = res.log.atom_counts()
        return res.log, s, f

    def simulate_run(self, instance: Instance, rng) -> HiddenExplorationRun:
        gen = as_generator(rng)
        d = self.prior.d
        log = SegmentLog(d)
        seg = play_segment(instance, self.sequence[0], 1, self.N, gen, "phase1", True, self.detail_limit)
        log.append(seg)
        s = np.zeros(d, dtype=np.int64)
        n = np.zeros(d, dtype=np.int64)
        s[list(seg.arm.atoms)] += seg.successes
        n[list(seg.arm.atoms)] += seg.length
        qs, stars = [], []
        phase_len = self.L * self.N
        for i in range(2, self.kappa + 1):
            means = posterior_means_batch(self.prior, s[None, :], (n - s)[None, :])[0]
            a_star = self.family.best(means)
            start = self.phase_start(i)
            q = [start + x for x in _sample_positions(gen, phase_len, self.N)]
            qs.append(q)
            stars.append(a_star)
            vi = self.sequence[i - 1]
            label = f"phase{i}"
            cursor = start
            new_s = np.zeros(d, dtype=np.int64)
            for r in q:
                if r > cursor:
                    log.append(play_segment(instance, a_star, cursor, r - cursor, gen, label, False,
                                            self.detail_limit))
                ex = play_segment(instance, vi, r, 1, gen, label, True, self.detail_limit)
                log.append(ex)
                new_s[list(vi.atoms)] += ex.successes
                cursor = r + 1
            end = start + phase_len
            if end > cursor:
                log.append(play_segment(instance, a_star, cursor, end - cursor, gen, label, False,
                                        self.detail_limit))
            s += new_s
            n[list(vi.atoms)] += self.N
        return HiddenExplorationRun(instance, log, qs, stars, self.N, self.L, self.sequence)

    # -- recommendation draws for verification ----------------------------

    def phase_recommendations(self, theta: np.ndarray, gen) -> list[tuple[int, np.ndarray]]:
        """For each phase i: (mask of V_i, (R,) masks of A*_i) under theta rows.

        Phase 1 returns V_1 for both.  Only exploration samples enter the
        posterior, so each phase needs binomial counts per atom.
        """
        gen = as_generator(gen)
        theta = np.asarray(theta, dtype=float)
        R, d = theta.shape
        s = np.zeros((R, d))
        n = np.zeros(d)
        out = [(self.sequence[0].mask, np.full(R, self.sequence[0].mask, dtype=np.int64))]
        for i in range(2, self.kappa + 1):
            prev = self.sequence[i - 2]
            idx = list(prev.atoms)
            s[:, idx] += gen.binomial(self.N, theta[:, idx])
            n[idx] += self.N
            means = posterior_means_batch(self.prior, s, n - s)
            out.append((self.sequence[i - 1].mask, self.family.best_masks(means)))
        return out

    def simulate(self, theta, rounds, gen) -> np.ndarray:
        """Recommended arm masks at the given rounds, shape (R, len(rounds)).

        Q membership of distinct rounds in one phase is drawn jointly
        (sequential hypergeometric), so the returned columns have the
        algorithm's exact joint law per phase.
        """
        gen = as_generator(gen)
        theta = np.asarray(theta, dtype=float)
        R = theta.shape[0]
        rounds = [int(t) for t in rounds]
        recs = self.phase_recommendations(theta, gen)
        out = np.zeros((R, len(rounds)), dtype=np.int64)
        by_phase: dict[int, list[int]] = {}
        for col, t in enumerate(rounds):
            by_phase.setdefault(self.phase_of(t), []).append(col)
        for i, cols in by_phase.items():
            v_mask, star = recs[i - 1]
            if i == 1:
                out[:, cols] = v_mask
                continue
            slots_left = np.full(R, self.L * self.N, dtype=float)
            q_left = np.full(R, self.N, dtype=float)
            seen = {}
            for col in cols:
                t = rounds[col]
                if t in seen:
                    out[:, col] = out[:, seen[t]]
                    continue
                seen[t] = col
                inq = gen.random(R) < q_left / slots_left
                out[:, col] = np.where(inq, v_mask, star)
                q_left -= inq
                slots_left -= 1
        return out

    def round_key(self, t: int) -> int:
        """Rounds with equal keys share the law of (theta, A^(t)): Q is exchangeable in a phase."""
        return self.phase_of(t)

    def recommendation_weights(self, theta, rounds, gen) -> np.ndarray:
        """(R, T, K) Pr[A^(t) = arm k | theta, samples], integrating over Q exactly."""
        theta = np.asarray(theta, dtype=float)
        R = theta.shape[0]
        K = len(self.family.arms())
        recs = self.phase_recommendations(theta, gen)
        out = np.zeros((R, len(rounds), K))
        rows = np.arange(R)
        for col, t in enumerate(rounds):
            i = self.phase_of(int(t))
            v_mask, star = recs[i - 1]
            p = 1.0 if i == 1 else self.explore_prob
            out[:, col, self.family.index_of([v_mask])[0]] += p
            out[rows, col, self.family.index_of(star)] += 1.0 - p
        return out

    def exact_joint(self, t: int, budget: int = 10**7):
        """(points, probs, dist) with dist[p, k] = Pr[A^(t) = arm k | theta = points[p]]."""
        i = self.phase_of(t)
        pts, pr, star = self.exact_phase_table(i, budget)
        if i == 1:
            return pts, pr, star
        dist = (1.0 - self.explore_prob) * star
        dist[:, self.family.index_of([self.sequence[i - 1].mask])[0]] += self.explore_prob
        return pts, pr, dist

    # -- exact enumeration (discrete priors) -------------------------------

    def exact_phase_table(self, i: int, budget: int = 10**7):
        """Exact joint law of (theta, A*_i) for phase i under a discrete prior.

        Returns ``(points (P, d), probs (P,), star_probs (P, K))`` where
        star_probs[p, k] = Pr[A*_i = arm k | theta = points[p]].
        """
        from scipy import stats

        pts, pr = self.prior.support_points()
        K = len(self.family.arms())
        star = np.zeros((len(pts), K))
        if i == 1:
            star[:, self.family.index_of([self.sequence[0].mask])[0]] = 1.0
            return pts, pr, star
        n = self._explored_counts(i)
        explored = [j for j in range(self.prior.d) if n[j] > 0]
        size = math.prod(int(n[j]) + 1 for j in explored) * len(pts)
        if size > budget:
            raise BudgetExceeded(f"exact Hidden Exploration enumeration {size} > {budget}")
        grids = list(itertools.product(*[range(int(n[j]) + 1) for j in explored]))
        S = np.zeros((len(grids), self.prior.d))
        if explored:
            S[:, explored] = np.array(grids, dtype=float)
        F = n[None, :] - S
        idx = self.family.index_of(self.family.best_masks(posterior_means_batch(self.prior, S, F)))
        for p, th in enumerate(pts):
            like = np.ones(len(grids))
            for c, j in enumerate(explored):
                like *= stats.binom.pmf(S[:, j], n[j], th[j])
            star[p] = np.bincount(idx, weights=like, minlength=K)
        return pts, pr, star


def hidden_exploration(prior: ProductPrior, family: ArmFamily, report: PropertyPReport, N: int,
                       rng, instance: Optional[Instance] = None, L: Optional[int] = None,
                       detail_limit: int = DETAIL_LIMIT) -> HiddenExplorationRun:
    """Run Hidden Exploration once on ``instance`` (drawn from the prior if None)."""
    algo = HiddenExplorationAlgo.from_report(prior, family, report, N, L, detail_limit=detail_limit)
    gen = as_generator(rng)
    if instance is None:
        instance = sample_instance(prior, gen)
    return algo.simulate_run(instance, gen)
