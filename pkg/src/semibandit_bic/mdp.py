"""MDP encodings of arm families and the Hidden Hallucination algorithm.

A :class:`TransitionGraph` is a layered DAG with deterministic transitions.
Each edge is labelled by an atom, and rooted paths to sinks are the arms.
Hidden Hallucination runs on such a graph: agents best-respond to ledgers
of past hallucination rounds via a longest-path dynamic program.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import stats

from .core import (
    Arm,
    ArmFamily,
    BetaPrior,
    ExplicitFamily,
    FamilyError,
    Instance,
    ProductPrior,
    _check_no_containment,
    as_generator,
    lex_key,
    sample_instance,
)
from .errors import (
    BadM,
    BudgetExceeded,
    NotEncodable,
    RejectionBudgetExceeded,
    ZeroQpun,
)
from .logs import DETAIL_LIMIT, SegmentLog, play_segment
from .posterior import posterior_means_batch

TIE_TOL = 1e-12
PATH_BUDGET = 10**5
REJECTION_BUDGET = 10**6
N_PH_CAP = 10**6


# ---------------------------------------------------------------------------
# Transition graphs
# ---------------------------------------------------------------------------


class TransitionGraph:
    """Layered deterministic transition graph.

    Parameters
    ----------
    nodes : list of (state, stage)
    root : int
        Index of the root node (stage 0).
    edges : list of (u, v, atom)
    d : int, optional
        Atom count; defaults to one more than the largest edge atom.
    """

    def __init__(self, nodes, root: int, edges, d: Optional[int] = None):
        self.nodes = [(int(s), int(h)) for s, h in nodes]
        self.root = int(root)
        self.edges = [(int(u), int(v), int(a)) for u, v, a in edges]
        self.d = int(d) if d is not None else (max(a for _, _, a in self.edges) + 1 if self.edges else 1)
        self._validate()

    # -- construction ------------------------------------------------------

    def _validate(self):
        n = len(self.nodes)
        if not 0 <= self.root < n:
            raise FamilyError("root index out of range")
        if self.nodes[self.root][1] != 0:
            raise FamilyError("root must be at stage 0")
        if len(set(self.nodes)) != n:
            raise FamilyError("duplicate (state, stage) nodes")
        if sum(1 for _, h in self.nodes if h == 0) != 1:
            raise FamilyError("exactly one node may sit at stage 0")
        seen = set()
        for u, v, a in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise FamilyError(f"edge {(u, v, a)} has an unknown endpoint")
            if not 0 <= a < self.d:
                raise FamilyError(f"edge atom {a} outside [0, {self.d})")
            if self.nodes[v][1] != self.nodes[u][1] + 1:
                raise FamilyError(f"edge {(u, v, a)} does not advance one stage")
            if (u, a) in seen:
                raise FamilyError(f"non-deterministic transition at node {u} on atom {a}")
            seen.add((u, a))
        if not self.edges:
            raise FamilyError("graph has no edges")
        self._check_no_repeats()

    def _check_no_repeats(self):
        # a path repeats atom a iff some edge labelled a ends at a node that
        # reaches the tail of another edge labelled a (root-reachable)
        reach = self.reachability
        live = reach[self.root]
        by_atom = defaultdict(list)
        for u, v, a in self.edges:
            if live[u]:
                by_atom[a].append((u, v))
        for a, es in by_atom.items():
            for _, v1 in es:
                for u2, _ in es:
                    if reach[v1][u2]:
                        raise FamilyError(f"a rooted path uses atom {a} twice")

    @cached_property
    def out_edges(self) -> list[list[tuple[int, int]]]:
        out = [[] for _ in self.nodes]
        for u, v, a in self.edges:
            out[u].append((v, a))
        for lst in out:
            lst.sort(key=lambda e: e[1])
        return out

    @cached_property
    def topo_order(self) -> list[int]:
        return sorted(range(len(self.nodes)), key=lambda i: self.nodes[i][1])

    @cached_property
    def reachability(self) -> list[list[bool]]:
        """reach[u][v]: v reachable from u (reflexive)."""
        n = len(self.nodes)
        reach = [[False] * n for _ in range(n)]
        for u in reversed(self.topo_order):
            reach[u][u] = True
            for v, _ in self.out_edges[u]:
                row = reach[v]
                for w in range(n):
                    if row[w]:
                        reach[u][w] = True
        return reach

    @cached_property
    def sinks(self) -> list[int]:
        return [i for i in range(len(self.nodes)) if not self.out_edges[i] and self.reachability[self.root][i]]

    # -- sizes ---------------------------------------------------------------

    @property
    def H(self) -> int:
        """Number of stages."""
        return max(h for _, h in self.nodes)

    @property
    def S(self) -> int:
        """Number of distinct state labels (root included)."""
        return len({s for s, _ in self.nodes})

    @property
    def A(self) -> int:
        """Number of distinct actions (atoms on edges)."""
        return len({a for _, _, a in self.edges})

    @property
    def atoms_used(self) -> list[int]:
        return sorted({a for _, _, a in self.edges})

    def path_count(self) -> int:
        count = [0] * len(self.nodes)
        for u in reversed(self.topo_order):
            count[u] = 1 if not self.out_edges[u] else sum(count[v] for v, _ in self.out_edges[u])
        return count[self.root]

    def paths(self, budget: int = PATH_BUDGET) -> list[tuple[int, ...]]:
        """Atom sequences of all root-to-sink paths."""
        if self.path_count() > budget:
            raise BudgetExceeded("path enumeration exceeds budget")
        out = []
        stack = [(self.root, ())]
        while stack:
            u, atoms = stack.pop()
            if not self.out_edges[u]:
                out.append(atoms)
                continue
            for v, a in reversed(self.out_edges[u]):
                stack.append((v, atoms + (a,)))
        return out

    def arms(self, budget: int = PATH_BUDGET) -> list[Arm]:
        return [Arm.of(p) for p in self.paths(budget)]

    # -- best paths ----------------------------------------------------------

    def _values(self, w: np.ndarray) -> np.ndarray:
        """Best value-to-go from each node; w is (d,) or (R, d)."""
        w = np.asarray(w, dtype=float)
        shape = w.shape[:-1]
        V = np.zeros(shape + (len(self.nodes),))
        for u in reversed(self.topo_order):
            outs = self.out_edges[u]
            if outs:
                cand = np.stack([w[..., a] + V[..., v] for v, a in outs], axis=-1)
                V[..., u] = cand.max(axis=-1)
        return V

    def best_path(self, w) -> Arm:
        """Max-weight rooted path; ties go to the lexicographically smallest atom set."""
        w = np.asarray(w, dtype=float)
        V = self._values(w)
        scale = TIE_TOL * max(1.0, float(np.abs(w).sum()))
        # enumerate optimal paths only
        best = None
        stack = [(self.root, ())]
        count = 0
        while stack:
            u, atoms = stack.pop()
            outs = self.out_edges[u]
            if not outs:
                key = tuple(sorted(atoms))
                if best is None or key < best:
                    best = key
                count += 1
                if count > PATH_BUDGET:
                    raise BudgetExceeded("too many tied optimal paths")
                continue
            for v, a in outs:
                if w[a] + V[v] >= V[u] - scale:
                    stack.append((v, atoms + (a,)))
        return Arm.of(best)

    def best_path_masks(self, W: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`best_path` over (R, d); rows with ties use the scalar path."""
        W = np.asarray(W, dtype=float)
        R = W.shape[0]
        V = self._values(W)
        rows = np.arange(R)
        node = np.full(R, self.root)
        masks = np.zeros(R, dtype=np.int64)
        tied = np.zeros(R, dtype=bool)
        scale = TIE_TOL * np.maximum(1.0, np.abs(W).sum(axis=1))
        for _ in range(self.H):
            new_node = node.copy()
            for u in np.unique(node):
                outs = self.out_edges[u]
                if not outs:
                    continue
                sel = node == u
                cand = np.stack([W[sel, a] + V[sel, v] for v, a in outs], axis=1)
                top = cand.max(axis=1, keepdims=True)
                tied[sel] |= (cand >= top - scale[sel, None]).sum(axis=1) > 1
                k = cand.argmax(axis=1)
                vs = np.array([v for v, _ in outs])[k]
                atoms = np.array([a for _, a in outs], dtype=np.int64)[k]
                new_node[sel] = vs
                masks[sel] |= np.left_shift(np.int64(1), atoms)
            node = new_node
        for r in np.flatnonzero(tied):
            masks[r] = self.best_path(W[r]).mask
        return masks

    # -- (de)serialisation ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "nodes": [{"state": s, "stage": h} for s, h in self.nodes],
            "root": self.root,
            "edges": [{"from": u, "to": v, "atom": a} for u, v, a in self.edges],
        }

    @classmethod
    def from_json(cls, obj) -> "TransitionGraph":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(
            [(n["state"], n["stage"]) for n in obj["nodes"]],
            obj["root"],
            [(e["from"], e["to"], e["atom"]) for e in obj["edges"]],
            obj.get("d"),
        )

    def relabel(self, perm) -> "TransitionGraph":
        inv = {old: new for new, old in enumerate(perm)}
        return TransitionGraph(self.nodes, self.root, [(u, v, inv[a]) for u, v, a in self.edges], self.d)

    def __repr__(self):
        return f"TransitionGraph(d={self.d}, nodes={len(self.nodes)}, edges={len(self.edges)}, H={self.H})"


class DagFamily(ArmFamily):
    """Arms are the atom sets of the root-to-sink paths of a transition graph."""

    kind = "dag"

    def __init__(self, graph: TransitionGraph, d: Optional[int] = None):
        super().__init__(d if d is not None else graph.d)
        self.graph = graph
        self._n = graph.path_count()
        if self._n <= PATH_BUDGET:
            arms = graph.arms()
            if len({a.mask for a in arms}) != len(arms):
                raise FamilyError("two paths give the same arm")
            _check_no_containment(arms)

    def __len__(self):
        return self._n

    def _enumerate(self):
        return sorted(self.graph.arms(), key=lex_key)

    def best(self, means):
        return self.graph.best_path(means)

    def best_masks(self, means):
        return self.graph.best_path_masks(means)

    def relabel(self, perm):
        return DagFamily(self.graph.relabel(perm), self.d)

    def to_spec(self):
        return {"kind": "dag", "graph": self.graph.to_json()}

    def __repr__(self):
        return f"DagFamily({self.graph!r})"


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


def encode_m_subsets(d: int, m: int) -> TransitionGraph:
    """m stages; a node's state is the largest atom included so far (root: -1)."""
    if not 1 <= m <= d:
        raise BadM(f"m={m} not in [1, {d}]")
    nodes = [(-1, 0)]
    index = {(-1, 0): 0}
    for i in range(1, m + 1):
        for l in range(i - 1, d - m + i):
            index[(l, i)] = len(nodes)
            nodes.append((l, i))
    edges = []
    for (l, i), u in index.items():
        if i == m:
            continue
        for l2 in range(l + 1, d - m + i + 1):
            edges.append((u, index[(l2, i + 1)], l2))
    return TransitionGraph(nodes, 0, edges, d)


def encode_explicit(family: ArmFamily) -> TransitionGraph:
    """Layered trie over sorted arm atoms with per-stage suffix merging.

    Raises NotEncodable when the merged graph still exceeds d^2 + 2 nodes.
    That is a sound rejection, not a proof that no encoding exists.
    """
    d = family.d
    arms = family.arms()
    # trie
    children: list[dict[int, int]] = [{}]
    depth = [0]
    for arm in arms:
        u = 0
        for a in arm.atoms:
            if a not in children[u]:
                children[u][a] = len(children)
                children.append({})
                depth.append(depth[u] + 1)
            u = children[u][a]
    # merge nodes with identical (stage, outgoing signature), bottom-up
    cls = [0] * len(children)
    order = sorted(range(len(children)), key=lambda i: -depth[i])
    sig_to_cls: dict = {}
    for u in order:
        sig = (depth[u], tuple(sorted((a, cls[v]) for a, v in children[u].items())))
        if sig not in sig_to_cls:
            sig_to_cls[sig] = len(sig_to_cls)
        cls[u] = sig_to_cls[sig]
    n_nodes = len(sig_to_cls)
    if n_nodes > d * d + 2:
        err = NotEncodable(f"layered encoding needs {n_nodes} > d^2 + 2 = {d * d + 2} nodes")
        err.proof_of_non_encodability = False
        raise err
    # states are per-stage class ranks; the root gets -1
    by_stage: dict[int, list[int]] = defaultdict(list)
    for sig, c in sorted(sig_to_cls.items(), key=lambda kv: kv[1]):
        by_stage[sig[0]].append(c)
    node_of_cls, nodes = {}, []
    for h in sorted(by_stage):
        for k, c in enumerate(by_stage[h]):
            node_of_cls[c] = len(nodes)
            nodes.append((-1 if h == 0 else k, h))
    edges = set()
    for u, ch in enumerate(children):
        for a, v in ch.items():
            edges.add((node_of_cls[cls[u]], node_of_cls[cls[v]], a))
    root = node_of_cls[cls[0]]
    return TransitionGraph(nodes, root, sorted(edges), d)


def encode_family(family: ArmFamily) -> TransitionGraph:
    from .core import MSubsetFamily

    if isinstance(family, DagFamily):
        return family.graph
    if isinstance(family, MSubsetFamily):
        return encode_m_subsets(family.d, family.m)
    return encode_explicit(family)


# ---------------------------------------------------------------------------
# GOOD / BAD augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentedGraph:
    """A graph with GOOD (reward H+1) after every sink and BAD (reward 0) after infeasible actions."""

    graph: TransitionGraph
    has_bad: bool
    infeasible: list  # (node, atom) pairs routed to BAD

    @property
    def H(self) -> int:
        return self.graph.H

    @property
    def good_reward(self) -> float:
        return self.H + 1.0

    def policies(self, budget: int = PATH_BUDGET) -> list[tuple[tuple[int, ...], bool]]:
        """(atom sequence, ends_in_good) for every augmented policy."""
        g = self.graph
        bad_at = defaultdict(list)
        for u, a in self.infeasible:
            bad_at[u].append(a)
        out = []
        stack = [(g.root, ())]
        while stack:
            u, atoms = stack.pop()
            if not g.out_edges[u]:
                out.append((atoms, True))
            for a in bad_at[u]:
                out.append((atoms + (a,), False))
            for v, a in g.out_edges[u]:
                stack.append((v, atoms + (a,)))
            if len(out) > budget:
                raise BudgetExceeded("augmented policy enumeration exceeds budget")
        return out

    def policy_value(self, atoms, good: bool, means) -> float:
        # an infeasible action yields nothing before moving to BAD
        base = float(sum(means[a] for a in (atoms if good else atoms[:-1])))
        return base + (self.good_reward if good else 0.0)

    def best_policy(self, means) -> tuple[tuple[int, ...], bool]:
        pols = self.policies()
        vals = [self.policy_value(p, g, means) for p, g in pols]
        return pols[int(np.argmax(vals))]

    def feasible_arms(self) -> list[Arm]:
        return sorted((Arm.of(p) for p, good in self.policies() if good), key=lex_key)


def augment_feasibility(g: TransitionGraph) -> AugmentedGraph:
    """Route every missing (node, atom) action at non-sink nodes to BAD."""
    infeasible = []
    for u in range(len(g.nodes)):
        outs = g.out_edges[u]
        if not outs or not g.reachability[g.root][u]:
            continue
        have = {a for _, a in outs}
        infeasible.extend((u, a) for a in range(g.d) if a not in have)
    return AugmentedGraph(g, bool(infeasible), infeasible)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------


@dataclass
class HhConstants:
    r_alt: float
    r_alt_ci: float
    q_pun: float
    q_pun_ci: float
    eps_pun: float
    n_lrn: int
    n_ph: int
    N0: int
    N0_verbatim: float
    delta: float
    c1: float
    c2: float
    H: int
    S: int
    A: int
    d: int
    punish_probs: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": "hidden_hallucination",
            "r_alt": self.r_alt,
            "r_alt_ci": self.r_alt_ci,
            "q_pun": self.q_pun,
            "q_pun_ci": self.q_pun_ci,
            "eps_pun": self.eps_pun,
            "n_lrn": self.n_lrn,
            "n_ph": self.n_ph,
            "N0": self.N0,
            "N0_verbatim": self.N0_verbatim,
            "delta": self.delta,
            "c1": self.c1,
            "c2": self.c2,
            "H": self.H,
            "S": self.S,
            "A": self.A,
            "d": self.d,
            "punish_probs": self.punish_probs,
            "notes": self.notes,
        }


def n_lrn_formula(c1, r_alt, H, S, A, delta, q_pun) -> int:
    return math.ceil(c1 * r_alt ** -2 * H ** 4 * (S + math.log(S * A * H / (delta * r_alt * q_pun))))


def estimate_hh_constants(prior: ProductPrior, g: TransitionGraph, delta: float = 0.1,
                          mc_samples: int = 10**5, c1: float = 1.0, c2: float = 1.0, rng=0,
                          n_ph: Optional[int] = None) -> HhConstants:
    """Prior-dependent constants of Hidden Hallucination on graph ``g``.

    r_alt and q_pun are computed exactly from prior means and CDFs, so
    their CI radii are 0 and ``mc_samples``/``rng`` go unused.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    atoms = g.atoms_used
    r_alt = float(min(prior.atoms[a].mean for a in atoms))
    H, S, A = g.H, g.S, g.A
    if r_alt <= 0:
        raise ZeroQpun("r_alt = 0: some feasible atom has zero prior mean")
    eps = r_alt / (18 * H)
    punish = [float(prior.atoms[a].prob_below(eps)) for a in atoms]
    log_q = sum(math.log(p) if p > 0 else -math.inf for p in punish)
    if log_q < math.log(1e-300):
        raise ZeroQpun(f"q_pun = exp({log_q}) underflows; the prior puts (almost) no mass below {eps}")
    q = math.exp(log_q)
    n_lrn = n_lrn_formula(c1, r_alt, H, S, A, delta, q)
    scale = r_alt ** -3 * S * A * H ** 4
    N0_verbatim = c2 * n_lrn * q * scale
    N0 = math.ceil(c2 * n_lrn / q * scale)
    if n_ph is None:
        n_ph = min(math.ceil(2 / q), N_PH_CAP)
    notes = ["N0 uses 1/q_pun; N0_verbatim keeps the printed q_pun factor"]
    return HhConstants(
        r_alt=r_alt, r_alt_ci=0.0, q_pun=q, q_pun_ci=0.0, eps_pun=eps, n_lrn=n_lrn, n_ph=int(n_ph),
        N0=N0, N0_verbatim=N0_verbatim, delta=delta, c1=c1, c2=c2, H=H, S=S, A=A, d=prior.d,
        punish_probs=punish, notes=notes,
    )


# ---------------------------------------------------------------------------
# Ledgers
# ---------------------------------------------------------------------------

RAW, CENSORED, HONEST, HALLUCINATED = "Raw", "Censored", "Honest", "Hallucinated"


@dataclass
class Ledger:
    """(action, per-atom rewards) of past hallucination rounds.

    ``rewards`` is (n, d) with NaN wherever a reward is absent: atoms outside
    the action, and censored atoms.
    """

    d: int
    actions: list
    rewards: np.ndarray
    kind: str = RAW

    @classmethod
    def empty(cls, d: int) -> "Ledger":
        return cls(d, [], np.zeros((0, d)))

    def append(self, arm: Arm, rewards: dict) -> "Ledger":
        row = np.full((1, self.d), np.nan)
        for a, r in rewards.items():
            row[0, a] = r
        return Ledger(self.d, self.actions + [arm], np.vstack([self.rewards, row]), self.kind)

    def __len__(self):
        return len(self.actions)

    def appearances(self) -> np.ndarray:
        out = np.zeros(self.d, dtype=np.int64)
        for arm in self.actions:
            out[list(arm.atoms)] += 1
        return out

    def fully_explored(self, n_lrn: int) -> np.ndarray:
        return self.appearances() >= n_lrn

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.rewards
        s = np.nansum(r, axis=0)
        n = np.sum(~np.isnan(r), axis=0)
        return s.astype(np.int64), (n - s).astype(np.int64)

    def censored(self) -> "Ledger":
        return Ledger(self.d, list(self.actions), np.full_like(self.rewards, np.nan), CENSORED)

    def honest(self, n_lrn: int) -> "Ledger":
        keep = self.fully_explored(n_lrn)
        r = self.rewards.copy()
        r[:, ~keep] = np.nan
        return Ledger(self.d, list(self.actions), r, HONEST)


def punish_sample(prior: ProductPrior, atoms, eps: float, gen, method: str = "auto",
                  budget: int = REJECTION_BUDGET) -> tuple[np.ndarray, int]:
    """Draw theta from the prior conditioned on theta_l <= eps for l in ``atoms``.

    Returns (theta, attempts).  ``method`` is "rejection", "exact" (inverse
    CDF per atom, Beta only) or "auto" (exact when all atoms are Beta).
    """
    gen = as_generator(gen)
    atoms = list(atoms)
    if method == "auto":
        method = "exact" if all(isinstance(prior.atoms[a], BetaPrior) for a in atoms) else "rejection"
    if method == "exact":
        theta = prior.sample(gen, 1)[0]
        for a in atoms:
            p = prior.atoms[a]
            top = float(stats.beta.cdf(eps, p.alpha, p.beta))
            if top <= 0:
                raise RejectionBudgetExceeded(f"atom {a} has no prior mass below {eps}")
            theta[a] = float(stats.beta.ppf(gen.random() * top, p.alpha, p.beta))
        return theta, 1
    attempts, batch = 0, 1024
    while attempts < budget:
        k = min(batch, budget - attempts)
        draws = prior.sample(gen, k)
        ok = np.all(draws[:, atoms] <= eps, axis=1) if atoms else np.ones(k, dtype=bool)
        hits = np.flatnonzero(ok)
        if hits.size:
            return draws[hits[0]], attempts + int(hits[0]) + 1
        attempts += k
        batch = min(batch * 2, 1 << 16)
    raise RejectionBudgetExceeded(f"punish event not hit in {budget} prior draws")


def hallucinate(ledger: Ledger, prior: ProductPrior, n_lrn: int, eps: float, gen,
                method: str = "auto") -> tuple[Ledger, np.ndarray]:
    """Hallucinated ledger: censor under-explored atoms, regenerate the rest under the punish event."""
    gen = as_generator(gen)
    full = ledger.fully_explored(n_lrn)
    atoms = list(np.flatnonzero(full))
    theta_hal, _ = punish_sample(prior, atoms, eps, gen, method)
    r = np.full_like(ledger.rewards, np.nan)
    for i, arm in enumerate(ledger.actions):
        for a in arm.atoms:
            if full[a]:
                r[i, a] = float(gen.random() < theta_hal[a])
    return Ledger(ledger.d, list(ledger.actions), r, HALLUCINATED), theta_hal


def best_response(prior: ProductPrior, ledger: Ledger, graph: TransitionGraph) -> Arm:
    """Posterior-best feasible arm given the rewards visible in ``ledger``."""
    s, f = ledger.counts()
    means = posterior_means_batch(prior, s[None, :], f[None, :])[0]
    return graph.best_path(means)


# ---------------------------------------------------------------------------
# Hidden Hallucination
# ---------------------------------------------------------------------------


@dataclass
class HhRun:
    instance: Instance
    log: SegmentLog
    ledger: Ledger  # raw ledger of all hallucination rounds
    hallucination_rounds: list
    honest_arms: list
    hallucinated_arms: list
    first_coverage_round: Optional[int]
    success: bool
    phases: int

    def coverage_report(self) -> dict:
        return {
            "first_coverage_round": self.first_coverage_round,
            "success": self.success,
            "phases": self.phases,
            "rounds": self.log.total_rounds,
        }


def hidden_hallucination(prior: ProductPrior, g: TransitionGraph, constants: HhConstants, rng,
                         instance: Optional[Instance] = None, max_rounds: Optional[int] = None,
                         stop_at_coverage: bool = True, punish_method: str = "auto",
                         start: int = 1, detail_limit: int = DETAIL_LIMIT) -> HhRun:
    """Run Hidden Hallucination phase by phase.

    Within a phase the honest ledger is fixed, so every honest round shares
    one best response; only the hallucination round differs.
    """
    gen = as_generator(rng)
    if instance is None:
        instance = sample_instance(prior, gen)
    d = prior.d
    n_ph = constants.n_ph
    max_rounds = constants.N0 if max_rounds is None else int(max_rounds)
    log = SegmentLog(d, origin=start)
    raw = Ledger.empty(d)
    covered = 0
    target = 0
    for a in g.atoms_used:
        target |= 1 << a
    first_cov = None
    hal_rounds, honest_arms, hal_arms = [], [], []
    t0 = start
    phase = 0
    played = 0
    while played < max_rounds:
        phase += 1
        length = min(n_ph, max_rounds - played)
        k = int(gen.integers(0, length))
        honest = raw.honest(constants.n_lrn)
        honest_arm = best_response(prior, honest, g)
        hal_ledger, _ = hallucinate(raw, prior, constants.n_lrn, constants.eps_pun, gen, punish_method)
        hal_arm = best_response(prior, hal_ledger, g)
        ps = t0 + played
        segs = []
        if k > 0:
            segs.append(play_segment(instance, honest_arm, ps, k, gen, f"phase{phase}", False, detail_limit))
        hal_seg = play_segment(instance, hal_arm, ps + k, 1, gen, f"phase{phase}", True)
        segs.append(hal_seg)
        if length - k - 1 > 0:
            segs.append(play_segment(instance, honest_arm, ps + k + 1, length - k - 1, gen,
                                     f"phase{phase}", False, detail_limit))
        for seg in segs:
            log.append(seg)
            if first_cov is None:
                covered |= seg.arm.mask
                if covered & target == target:
                    first_cov = seg.start
        raw = raw.append(hal_arm, dict(zip(hal_arm.atoms, map(int, hal_seg.rewards[0]))))
        hal_rounds.append(ps + k)
        honest_arms.append(honest_arm)
        hal_arms.append(hal_arm)
        played += length
        if stop_at_coverage and first_cov is not None:
            break
    success = first_cov is not None and first_cov < t0 + max_rounds
    return HhRun(instance, log, raw, hal_rounds, honest_arms, hal_arms, first_cov, success, phase)


class HhBootstrap:
    """Hidden Hallucination repeated ``n_repeats`` times, then prior-best filler.

    Each repetition occupies exactly N0 rounds (Hidden Hallucination until
    coverage, then the prior-best arm); d * n_repeats filler rounds follow.
    T0 = N0 n_repeats + d n_repeats is fixed before the run starts.
    """

    name = "hidden-hallucination"

    def __init__(self, prior: ProductPrior, g: TransitionGraph, constants: HhConstants, n_repeats: int,
                 punish_method: str = "auto", detail_limit: int = DETAIL_LIMIT):
        if n_repeats < 1:
            raise ValueError("n_repeats must be at least 1")
        self.prior = prior
        self.graph = g
        self.constants = constants
        self.n_repeats = int(n_repeats)
        self.punish_method = punish_method
        self.detail_limit = detail_limit
        self.prior_best = g.best_path(np.array([p.mean for p in prior.atoms]))

    @property
    def T0(self) -> int:
        return self.constants.N0 * self.n_repeats + self.prior.d * self.n_repeats

    @property
    def guarantee(self) -> int:
        return self.n_repeats

    def describe(self):
        return f"hidden-hallucination(n_repeats={self.n_repeats})"

    def run(self, instance: Instance, rng):
        gen = as_generator(rng)
        d = self.prior.d
        log = SegmentLog(d)
        N0 = self.constants.N0
        self.runs = []
        for r in range(self.n_repeats):
            block_start = r * N0 + 1
            hh = hidden_hallucination(self.prior, self.graph, self.constants, gen, instance,
                                      max_rounds=N0, stop_at_coverage=True,
                                      punish_method=self.punish_method, start=block_start,
                                      detail_limit=self.detail_limit)
            self.runs.append(hh)
            for seg in hh.log.segments:
                log.append(seg)
            rest = block_start + N0 - (log.end_round + 1)
            if rest > 0:
                log.append(play_segment(instance, self.prior_best, log.end_round + 1, rest, gen,
                                        f"repeat{r + 1}-fill", False, self.detail_limit))
        tail = d * self.n_repeats
        log.append(play_segment(instance, self.prior_best, log.end_round + 1, tail, gen, "fill", False,
                                self.detail_limit))
        s, f = log.atom_counts()
        return log, s, f


def hh_bootstrap_composer(prior, g, constants, n_repeats, rng=None, **kw) -> HhBootstrap:
    return HhBootstrap(prior, g, constants, n_repeats, **kw)
