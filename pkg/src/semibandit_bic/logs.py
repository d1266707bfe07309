"""Run-length round logs.

Initial-exploration algorithms play the same arm for long stretches (the
exploitation rounds of a phase), often for millions of rounds.  A
:class:`SegmentLog` stores each stretch once, with aggregate per-atom success
counts, and keeps per-round rewards only for short segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .core import Arm, Instance, as_generator
from .errors import BudgetExceeded

DETAIL_LIMIT = 10_000
BINOMIAL_LIMIT = 2**62


@dataclass
class Segment:
    start: int  # first round, 1-based
    length: int
    arm: Arm
    successes: np.ndarray  # per atom of arm.atoms, aggregated over the segment
    label: str = ""
    exploration: bool = False
    rewards: Optional[np.ndarray] = None  # (length, |arm|) 0/1 when kept

    @property
    def end(self) -> int:
        return self.start + self.length - 1


def play_segment(instance: Instance, arm: Arm, start: int, length: int, rng,
                 label: str = "", exploration: bool = False,
                 detail_limit: int = DETAIL_LIMIT) -> Segment:
    gen = as_generator(rng)
    theta = instance.theta[list(arm.atoms)]
    if length <= detail_limit:
        rewards = (gen.random((length, len(theta))) < theta).astype(np.int8)
        succ = rewards.sum(axis=0).astype(np.int64)
    elif length <= BINOMIAL_LIMIT:
        rewards = None
        succ = gen.binomial(length, theta).astype(np.int64)
    else:
        # beyond int64: normal approximation to the binomial, kept as exact ints
        rewards = None
        z = gen.standard_normal(len(theta))
        succ = np.array([
            min(length, max(0, round(length * t + z_k * (length * t * (1 - t)) ** 0.5)))
            for t, z_k in zip(theta.tolist(), z.tolist())
        ], dtype=object)
    return Segment(start, length, arm, succ, label, exploration, rewards)


@dataclass
class SegmentLog:
    d: int
    segments: list[Segment] = field(default_factory=list)
    origin: int = 1  # round number of the first segment

    def append(self, seg: Segment):
        if seg.length <= 0:
            return
        expected = self.end_round + 1
        if seg.start != expected:
            raise ValueError(f"segment starts at {seg.start}, expected {expected}")
        self.segments.append(seg)

    @property
    def end_round(self) -> int:
        return self.segments[-1].end if self.segments else self.origin - 1

    @property
    def total_rounds(self) -> int:
        return self.end_round - self.origin + 1

    def arm_play_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for s in self.segments:
            out[s.arm.mask] = out.get(s.arm.mask, 0) + s.length
        return out

    def exploration_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for s in self.segments:
            if s.exploration:
                out[s.arm.mask] = out.get(s.arm.mask, 0) + s.length
        return out

    def atom_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-atom (successes, failures) over the whole log."""
        big = any(s.length > BINOMIAL_LIMIT for s in self.segments)
        dtype = object if big else np.int64
        succ = np.zeros(self.d, dtype=dtype)
        n = np.zeros(self.d, dtype=dtype)
        for s in self.segments:
            idx = list(s.arm.atoms)
            succ[idx] += s.successes
            n[idx] += s.length
        return succ, n - succ

    def atom_samples(self) -> np.ndarray:
        s, f = self.atom_counts()
        return s + f

    def first_coverage_round(self) -> Optional[int]:
        covered = 0
        full = (1 << self.d) - 1
        for s in self.segments:
            covered |= s.arm.mask
            if covered == full:
                return s.start
        return None

    def rows(self) -> Iterator[tuple[int, Arm, dict[int, int], str, bool]]:
        for s in self.segments:
            if s.rewards is None:
                raise BudgetExceeded(
                    f"segment at round {s.start} has {s.length} rounds without per-round detail"
                )
            for k in range(s.length):
                yield (s.start + k, s.arm, dict(zip(s.arm.atoms, map(int, s.rewards[k]))),
                       s.label, s.exploration)
