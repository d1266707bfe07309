"""Domain types: atoms, arms, arm families, priors, instances and histories.

Arms are stored as integer bitsets over ``d`` atoms.  Every family orders its
arms lexicographically by their sorted atom tuple, and every argmax in the
package breaks ties towards the earliest arm in that order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence, Union

import numpy as np
from scipy import stats

from .errors import (
    BadM,
    BudgetExceeded,
    ContainedArm,
    EmptyFamily,
    FamilyError,
    NonDiscretePrior,
    NotBeta,
    PriorError,
)

ENUMERATION_BUDGET = 10**5
PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# Arms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Arm:
    """A non-empty set of atoms, stored as a bitset."""

    mask: int

    def __post_init__(self):
        if self.mask <= 0:
            raise FamilyError("an arm must contain at least one atom")

    @classmethod
    def of(cls, atoms: Iterable[int]) -> "Arm":
        mask = 0
        for a in atoms:
            if a < 0:
                raise FamilyError(f"negative atom index {a}")
            mask |= 1 << int(a)
        return cls(mask)

    @cached_property
    def atoms(self) -> tuple[int, ...]:
        out = []
        m, i = self.mask, 0
        while m:
            if m & 1:
                out.append(i)
            m >>= 1
            i += 1
        return tuple(out)

    @property
    def size(self) -> int:
        return len(self.atoms)

    def __contains__(self, atom: int) -> bool:
        return bool(self.mask >> atom & 1)

    def __iter__(self) -> Iterator[int]:
        return iter(self.atoms)

    def __len__(self) -> int:
        return self.size

    def issubset(self, other: "Arm") -> bool:
        return self.mask & other.mask == self.mask

    def hex(self) -> str:
        return format(self.mask, "x")

    def indicator(self, d: int) -> np.ndarray:
        v = np.zeros(d)
        v[list(self.atoms)] = 1.0
        return v

    def __repr__(self):
        return "Arm({%s})" % ",".join(map(str, self.atoms))


def lex_key(arm: Arm) -> tuple[int, ...]:
    return arm.atoms


def masks_to_indicators(masks: np.ndarray, d: int) -> np.ndarray:
    """(n,) int masks -> (n, d) 0/1 float matrix."""
    masks = np.asarray(masks, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(d, dtype=np.int64)) & 1
    return bits.astype(float)


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


class ArmFamily:
    """Base class for a fixed, known set of feasible arms."""

    kind: str = "abstract"

    def __init__(self, d: int):
        if d < 1:
            raise FamilyError("need at least one atom")
        if d > 62:
            raise FamilyError("bitset arms support at most 62 atoms")
        self.d = int(d)

    # subclasses provide _enumerate() in lexicographic order and __len__
    def _enumerate(self) -> list[Arm]:
        raise NotImplementedError

    def __len__(self) -> int:
        raise NotImplementedError

    @property
    def enumerable(self) -> bool:
        return len(self) <= ENUMERATION_BUDGET

    def arms(self, budget: int = ENUMERATION_BUDGET) -> list[Arm]:
        if len(self) > budget:
            raise BudgetExceeded(f"family has {len(self)} arms > budget {budget}")
        return self._arms

    @cached_property
    def _arms(self) -> list[Arm]:
        if len(self) > ENUMERATION_BUDGET:
            raise BudgetExceeded(f"family has {len(self)} arms")
        return self._enumerate()

    @cached_property
    def masks(self) -> np.ndarray:
        return np.array([a.mask for a in self.arms()], dtype=np.int64)

    @cached_property
    def incidence(self) -> np.ndarray:
        """(K, d) 0/1 matrix, rows in lexicographic arm order."""
        return masks_to_indicators(self.masks, self.d)

    @cached_property
    def _mask_sort(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.masks, kind="stable")
        return self.masks[order], order

    def index_of(self, masks) -> np.ndarray:
        """Position of each mask in :meth:`arms`; -1 when not a member."""
        masks = np.asarray(masks, dtype=np.int64)
        sorted_masks, order = self._mask_sort
        pos = np.searchsorted(sorted_masks, masks)
        pos = np.clip(pos, 0, len(sorted_masks) - 1)
        hit = sorted_masks[pos] == masks
        return np.where(hit, order[pos], -1)

    def __contains__(self, arm: Arm) -> bool:
        return bool(self.index_of([arm.mask])[0] >= 0)

    def __iter__(self) -> Iterator[Arm]:
        return iter(self.arms())

    def best(self, means: Sequence[float]) -> Arm:
        means = np.asarray(means, dtype=float)
        values = self.incidence @ means
        return self.arms()[int(np.argmax(values))]

    def best_masks(self, means: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`best` over the rows of an (R, d) array."""
        values = np.asarray(means, dtype=float) @ self.incidence.T
        return self.masks[np.argmax(values, axis=1)]

    def relabel(self, perm: Sequence[int]) -> "ArmFamily":
        """Rename atoms so that new atom ``i`` is old atom ``perm[i]``."""
        raise NotImplementedError

    @property
    def arm_sizes(self) -> set[int]:
        return {a.size for a in self.arms()}

    def to_spec(self) -> dict:
        raise NotImplementedError


def _check_no_containment(arms: Sequence[Arm]):
    for a, b in itertools.combinations(arms, 2):
        if a.issubset(b) or b.issubset(a):
            raise ContainedArm(f"{a} and {b}: one arm contains the other")


class ExplicitFamily(ArmFamily):
    kind = "explicit"

    def __init__(self, d: int, arms: Iterable[Iterable[int] | Arm]):
        super().__init__(d)
        parsed = [a if isinstance(a, Arm) else Arm.of(a) for a in arms]
        if not parsed:
            raise EmptyFamily("explicit family has no arms")
        for a in parsed:
            if a.mask >> self.d:
                raise FamilyError(f"{a} uses atoms outside [0, {self.d})")
        if len({a.mask for a in parsed}) != len(parsed):
            raise FamilyError("duplicate arms in explicit family")
        _check_no_containment(parsed)
        self._list = sorted(parsed, key=lex_key)

    def __len__(self):
        return len(self._list)

    def _enumerate(self):
        return list(self._list)

    def relabel(self, perm):
        inv = {old: new for new, old in enumerate(perm)}
        return ExplicitFamily(self.d, [[inv[a] for a in arm] for arm in self._list])

    def to_spec(self):
        return {"kind": "explicit", "d": self.d, "arms": [list(a.atoms) for a in self._list]}

    def __repr__(self):
        return f"ExplicitFamily(d={self.d}, arms={self._list})"


class MSubsetFamily(ArmFamily):
    """All subsets of exactly ``m`` atoms.  Never materialised unless needed."""

    kind = "m_subsets"

    def __init__(self, d: int, m: int):
        super().__init__(d)
        if not 1 <= m <= d:
            raise BadM(f"m={m} not in [1, {d}]")
        self.m = int(m)

    def __len__(self):
        return math.comb(self.d, self.m)

    def _enumerate(self):
        # itertools.combinations yields tuples in lexicographic order already
        return [Arm.of(c) for c in itertools.combinations(range(self.d), self.m)]

    def best(self, means):
        means = np.asarray(means, dtype=float)
        order = np.lexsort((np.arange(self.d), -means))
        return Arm.of(order[: self.m])

    def best_masks(self, means):
        means = np.asarray(means, dtype=float)
        # stable sort on -means keeps smaller atom first among ties
        order = np.argsort(-means, axis=1, kind="stable")[:, : self.m]
        return np.sum(np.left_shift(np.int64(1), order.astype(np.int64)), axis=1)

    def relabel(self, perm):
        return MSubsetFamily(self.d, self.m)

    def to_spec(self):
        return {"kind": "m_subsets", "d": self.d, "m": self.m}

    def __repr__(self):
        return f"MSubsetFamily(d={self.d}, m={self.m})"


def singletons(d: int) -> MSubsetFamily:
    return MSubsetFamily(d, 1)


def build_family(spec: dict | ArmFamily) -> ArmFamily:
    """Build and validate a family from a plain description.

    Accepted shapes::

        {"kind": "explicit", "d": 2, "arms": [[0], [1]]}
        {"kind": "m_subsets", "d": 4, "m": 2}
        {"kind": "singletons", "d": 3}
        {"kind": "dag", "graph": {...TransitionGraph JSON...}}
    """
    if isinstance(spec, ArmFamily):
        return spec
    kind = spec.get("kind")
    if kind == "explicit":
        return ExplicitFamily(spec["d"], spec["arms"])
    if kind == "m_subsets":
        return MSubsetFamily(spec["d"], spec["m"])
    if kind == "singletons":
        return MSubsetFamily(spec["d"], 1)
    if kind == "dag":
        from .mdp import DagFamily, TransitionGraph

        g = spec["graph"]
        return DagFamily(g if isinstance(g, TransitionGraph) else TransitionGraph.from_json(g))
    raise FamilyError(f"unknown family kind {kind!r}")


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaPrior:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise PriorError(f"Beta parameters must be positive, got {self.alpha}, {self.beta}")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.beta(self.alpha, self.beta, size=size)

    def cdf(self, x):
        return stats.beta.cdf(x, self.alpha, self.beta)

    def sf(self, x):
        return stats.beta.sf(x, self.alpha, self.beta)

    def prob_below(self, x, strict: bool = False):
        # continuous: strict and weak inequalities agree
        return self.cdf(x)

    def to_spec(self):
        return {"beta": [self.alpha, self.beta]}


@dataclass(frozen=True)
class DiscretePrior:
    """Finite-support prior on a mean reward in [0, 1]."""

    support: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        sup = tuple(float(s) for s in self.support)
        pr = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)
        if len(sup) != len(pr) or not sup:
            raise PriorError("support and probs must be non-empty and of equal length")
        if any(not 0.0 <= s <= 1.0 for s in sup):
            raise PriorError("discrete support points must lie in [0, 1]")
        if any(p < 0 for p in pr):
            raise PriorError("negative probability")
        if abs(sum(pr) - 1.0) > PROB_TOL:
            raise PriorError(f"probabilities sum to {sum(pr)!r}, not 1")
        if sum(p for s, p in zip(sup, pr) if s > 0) <= 0:
            raise PriorError("Pr[theta > 0] must be positive")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "DiscretePrior":
        pairs = list(pairs)
        return cls(tuple(s for s, _ in pairs), tuple(p for _, p in pairs))

    @classmethod
    def point(cls, value: float) -> "DiscretePrior":
        return cls((value,), (1.0,))

    @cached_property
    def _sup(self):
        return np.array(self.support)

    @cached_property
    def _pr(self):
        return np.array(self.probs)

    @property
    def mean(self) -> float:
        return float(self._sup @ self._pr)

    def sample(self, rng: np.random.Generator, size=None):
        idx = rng.choice(len(self.support), size=size, p=self._pr)
        return self._sup[idx]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(self._pr * (self._sup <= x[..., None]), axis=-1)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(self._pr * (self._sup > x[..., None]), axis=-1)

    def prob_below(self, x, strict: bool = False):
        x = np.asarray(x, dtype=float)
        hit = self._sup < x[..., None] if strict else self._sup <= x[..., None]
        return np.sum(self._pr * hit, axis=-1)

    def to_spec(self):
        return {"discrete": [[s, p] for s, p in zip(self.support, self.probs)]}


PriorSpec = Union[BetaPrior, DiscretePrior]


def parse_atom_prior(spec) -> PriorSpec:
    if isinstance(spec, (BetaPrior, DiscretePrior)):
        return spec
    if "beta" in spec:
        a, b = spec["beta"]
        return BetaPrior(float(a), float(b))
    if "discrete" in spec:
        return DiscretePrior.from_pairs((float(s), float(p)) for s, p in spec["discrete"])
    raise PriorError(f"cannot parse atom prior {spec!r}")


@dataclass(frozen=True)
class ProductPrior:
    """Independent per-atom priors P_1 x ... x P_d."""

    atoms: tuple[PriorSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(parse_atom_prior(a) for a in self.atoms))
        if not self.atoms:
            raise PriorError("prior needs at least one atom")

    @classmethod
    def beta(cls, params: Iterable[tuple[float, float]]) -> "ProductPrior":
        return cls(tuple(BetaPrior(float(a), float(b)) for a, b in params))

    @property
    def d(self) -> int:
        return len(self.atoms)

    @cached_property
    def means(self) -> np.ndarray:
        return np.array([p.mean for p in self.atoms])

    @property
    def is_beta(self) -> bool:
        return all(isinstance(p, BetaPrior) for p in self.atoms)

    @property
    def is_discrete(self) -> bool:
        return all(isinstance(p, DiscretePrior) for p in self.atoms)

    def require_beta(self):
        if not self.is_beta:
            raise NotBeta("this operation needs Beta priors on every atom")

    @cached_property
    def alphas(self) -> np.ndarray:
        self.require_beta()
        return np.array([p.alpha for p in self.atoms])

    @cached_property
    def betas(self) -> np.ndarray:
        self.require_beta()
        return np.array([p.beta for p in self.atoms])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, d) matrix of independent draws."""
        out = np.empty((size, self.d))
        for j, p in enumerate(self.atoms):
            out[:, j] = p.sample(rng, size)
        return out

    def canonical_order(self) -> list[int]:
        """Permutation putting prior means in non-increasing order (ties by index)."""
        return sorted(range(self.d), key=lambda i: (-self.means[i], i))

    def permuted(self, perm: Sequence[int]) -> "ProductPrior":
        return ProductPrior(tuple(self.atoms[i] for i in perm))

    def support_points(self, budget: int = 10**6) -> tuple[np.ndarray, np.ndarray]:
        """Enumerate the joint support of a discrete product prior.

        Returns (points (n, d), probabilities (n,)).
        """
        if not self.is_discrete:
            raise NonDiscretePrior("joint support only exists for discrete priors")
        size = math.prod(len(p.support) for p in self.atoms)
        if size > budget:
            raise BudgetExceeded(f"joint support of size {size} > budget {budget}")
        grids = [np.array(p.support) for p in self.atoms]
        probs = [np.array(p.probs) for p in self.atoms]
        pts = np.array(list(itertools.product(*grids))).reshape(size, self.d)
        pr = np.array([math.prod(c) for c in itertools.product(*probs)])
        return pts, pr

    def to_spec(self):
        return {"atoms": [p.to_spec() for p in self.atoms]}


def canonicalize(prior: ProductPrior, family: ArmFamily):
    """Sort atoms by prior mean (descending) and relabel the family to match.

    Returns ``(sorted_prior, relabelled_family, perm)`` where new atom ``i``
    is original atom ``perm[i]``.
    """
    perm = prior.canonical_order()
    return prior.permuted(perm), family.relabel(perm), perm


@dataclass(frozen=True)
class TwoArmJointPrior:
    """Finite joint prior over the means of two arms (A, A')."""

    support: tuple[tuple[float, float], ...]
    probs: tuple[float, ...]
    sizes: tuple[int, int] = (1, 1)

    def __post_init__(self):
        sup = tuple((float(a), float(b)) for a, b in self.support)
        pr = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)
        if len(sup) != len(pr) or not sup:
            raise PriorError("support and probs must be non-empty and of equal length")
        if abs(sum(pr) - 1.0) > PROB_TOL or any(p < 0 for p in pr):
            raise PriorError("joint probabilities must be non-negative and sum to 1")
        for a, b in sup:
            if not (0 <= a <= self.sizes[0] and 0 <= b <= self.sizes[1]):
                raise PriorError(f"support point {(a, b)} outside [0,|A|] x [0,|A'|]")

    @classmethod
    def from_pairs(cls, pairs, sizes=(1, 1)):
        pairs = list(pairs)
        return cls(tuple(tuple(pt) for pt, _ in pairs), tuple(p for _, p in pairs), tuple(sizes))

    @classmethod
    def independent(cls, a: DiscretePrior, b: DiscretePrior) -> "TwoArmJointPrior":
        pts, prs = [], []
        for x, px in zip(a.support, a.probs):
            for y, py in zip(b.support, b.probs):
                pts.append((x, y))
                prs.append(px * py)
        return cls(tuple(pts), tuple(prs))

    @property
    def d(self) -> int:
        return 2

    @cached_property
    def points(self) -> np.ndarray:
        return np.array(self.support)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array(self.probs)

    @property
    def means(self) -> np.ndarray:
        return self.weights @ self.points

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.support), size=size, p=self.weights)
        return self.points[idx]

    def support_points(self, budget: int = 10**6):
        return self.points.copy(), self.weights.copy()


# ---------------------------------------------------------------------------
# Instances, rewards, histories, randomness
# ---------------------------------------------------------------------------


class RngStream:
    """Deterministic random stream identified by (seed, stream_id).

    Streams with equal identity replay identical sequences; distinct stream
    ids come from independent SeedSequence spawn keys.
    """

    def __init__(self, seed: int, stream_id: int | tuple[int, ...] = 0):
        self.seed = int(seed)
        self.key = stream_id if isinstance(stream_id, tuple) else (int(stream_id),)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def stream_id(self):
        return self.key[0] if len(self.key) == 1 else self.key

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(k),))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class Instance:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if np.any(theta < 0) or np.any(theta > 1):
            raise PriorError("mean rewards must lie in [0, 1]")
        object.__setattr__(self, "theta", theta)

    @property
    def d(self):
        return len(self.theta)

    def mu(self, arm: Arm) -> float:
        return float(sum(self.theta[a] for a in arm.atoms))


def sample_instance(prior: ProductPrior, rng) -> Instance:
    gen = as_generator(rng)
    return Instance(np.array([p.sample(gen) for p in prior.atoms], dtype=float))


def pull(instance: Instance, arm: Arm, rng) -> dict[int, int]:
    """Semi-bandit feedback: one Bernoulli reward per atom of ``arm``."""
    gen = as_generator(rng)
    atoms = arm.atoms
    draws = gen.random(len(atoms)) < instance.theta[list(atoms)]
    return {a: int(r) for a, r in zip(atoms, draws)}


@dataclass
class History:
    """Per-atom success/failure counts plus the ordered round log."""

    d: int
    successes: np.ndarray = field(default=None)
    failures: np.ndarray = field(default=None)
    round_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.successes is None:
            self.successes = np.zeros(self.d, dtype=np.int64)
        if self.failures is None:
            self.failures = np.zeros(self.d, dtype=np.int64)

    def record(self, round_: int, arm: Arm, rewards: dict[int, int]):
        if set(rewards) != set(arm.atoms):
            raise ValueError("semi-bandit feedback must cover exactly the arm's atoms")
        for a, r in rewards.items():
            if r:
                self.successes[a] += 1
            else:
                self.failures[a] += 1
        self.round_log.append((round_, arm, dict(rewards)))

    def add_counts(self, successes, failures):
        """Add aggregate data that is not tied to logged rounds (exogenous data)."""
        self.successes = self.successes + np.asarray(successes, dtype=np.int64)
        self.failures = self.failures + np.asarray(failures, dtype=np.int64)

    @property
    def samples(self) -> np.ndarray:
        return self.successes + self.failures

    def aggregate_log(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.zeros(self.d, dtype=np.int64)
        f = np.zeros(self.d, dtype=np.int64)
        for _, _, rewards in self.round_log:
            for a, r in rewards.items():
                if r:
                    s[a] += 1
                else:
                    f[a] += 1
        return s, f
