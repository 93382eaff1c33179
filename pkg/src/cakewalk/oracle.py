"""Adversarial guarantee analysis on a finite grid of cut positions.

``can_guarantee`` and the ``guarantee_*`` functions answer: what can one
agent secure for themselves no matter how everyone else plays, when every
cut is restricted to a shared finite grid?  Decisions of the queried agent
are existential, all other decisions (modelled as one adversary) are
universal, and leaves are scored exactly.  Results are exact for the
grid-restricted game; they are meaningful for the continuous game only
when the grid contains the positions the intended strategies need, so
callers should pin grids explicitly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Sequence

from .engine import (
    ExecState, current_kind, cut_intervals, initial_state, leaf_allocation,
    step_choose, step_cut, step_ifelse, _node_of,
)
from .errors import BudgetExceededError, DomainError
from .ir import BcDag, Protocol
from .valuation import ONE, Valuation, ZERO, format_frac

DEFAULT_BUDGET = 5_000_000


@dataclass(frozen=True)
class Grid:
    """Ascending candidate cut positions; always contains 0 and 1."""

    points: tuple[Fraction, ...]

    def __post_init__(self):
        if not self.points or self.points[0] != ZERO or self.points[-1] != ONE:
            raise DomainError("grid must run from 0 to 1")
        if any(a >= b for a, b in zip(self.points, self.points[1:])):
            raise DomainError("grid points must be strictly increasing")

    def within(self, lo: Fraction, hi: Fraction) -> tuple[Fraction, ...]:
        pts = tuple(x for x in self.points if lo <= x <= hi)
        return pts if pts else (lo,)  # degenerate window: the forced endpoint

    def to_json(self):
        return [format_frac(x) for x in self.points]


def build_grid(vals: Sequence[Valuation], denominator_cap: int) -> Grid:
    """{0, 1}, all breakpoints, and one refinement round of p/q marks."""
    if denominator_cap < 2:
        raise DomainError("denominator cap must be >= 2")
    base: set[Fraction] = {ZERO, ONE}
    for v in vals:
        base.update(v.breakpoints)
    anchors = sorted(base)
    points = set(base)
    for v in vals:
        for a, b in zip(anchors, anchors[1:]):
            for q in range(2, denominator_cap + 1):
                for p in range(1, q):
                    points.add(v.mark(a, b, Fraction(p, q)))
    return Grid(tuple(sorted(points)))


@dataclass(frozen=True)
class BoundsQuery:
    """Simultaneous envy bounds agent ``agent`` tries to guarantee."""

    agent: int
    bounds: tuple[tuple[int, Fraction], ...]  # (other agent, limit), sorted

    @staticmethod
    def make(agent: int, bounds: dict[int, Fraction]) -> "BoundsQuery":
        if agent in bounds:
            raise DomainError("an agent does not bound envy toward themselves")
        for j, m in bounds.items():
            if not ZERO <= m <= ONE:
                raise DomainError(f"bound for agent {j} must lie in [0, 1]")
        return BoundsQuery(agent, tuple(sorted(bounds.items())))


class GuaranteeOracle:
    """Backward induction over one protocol, one grid, one valuation profile.

    Leaf cross-value matrices are cached across queries, and subgame results
    are memoized on (node, cut positions, piece picks), which fully
    determines the pending allocation.
    """

    def __init__(self, p: Protocol, vals: Sequence[Valuation], grid: Grid,
                 budget: int = DEFAULT_BUDGET):
        if len(vals) != p.agents:
            raise DomainError(
                f"protocol has {p.agents} agents, got {len(vals)} valuations"
            )
        self.protocol = p
        self.vals = list(vals)
        self.grid = grid
        self.budget = budget
        self.evals = 0
        self._leaf_cache: dict = {}
        self._memo: dict = {}

    # -- plumbing -----------------------------------------------------------

    def _bump(self):
        self.evals += 1
        if self.evals > self.budget:
            raise BudgetExceededError(
                f"oracle budget of {self.budget} node evaluations exceeded;"
                " result inconclusive"
            )

    def _key(self, state: ExecState):
        nid = state.node if isinstance(self.protocol, BcDag) else state.node.nid
        return (nid, state.cuts, state.picks)

    def _leaf_cross(self, state: ExecState):
        key = self._key(state)
        hit = self._leaf_cache.get(key)
        if hit is None:
            alloc = leaf_allocation(self.protocol, state)
            hit = tuple(
                tuple(v.value_of(alloc.pieces[j]) for j in range(self.protocol.agents))
                for v in self.vals
            )
            self._leaf_cache[key] = hit
        return hit

    def _actions(self, state: ExecState):
        """Decision points: (acting agent, list of successor states)."""
        kind = current_kind(self.protocol, state)
        node = _node_of(self.protocol, state)
        if kind == "cut":
            intervals = cut_intervals(self.protocol, state)
            nexts = []
            for j, (lo, hi) in enumerate(intervals):
                for z in self.grid.within(lo, hi):
                    nexts.append(step_cut(self.protocol, state, j, z))
            return node.agent, nexts
        if kind == "choose":
            return node.agent, [
                step_choose(self.protocol, state, i)
                for i in range(len(node.children))
            ]
        if kind == "gcc-choose":
            count = len(node.pieces)
            return node.agent, [
                step_choose(self.protocol, state, i) for i in range(count)
            ]
        raise DomainError(f"no actions at a {kind} node")

    # -- the four guarantee queries ------------------------------------------

    def can_guarantee(self, query: BoundsQuery) -> bool:
        """Can ``query.agent`` force envy(i, j) <= M_j for every listed j?"""
        i = query.agent
        bounds = query.bounds

        def leaf_ok(state) -> bool:
            cross = self._leaf_cross(state)
            own = cross[i - 1][i - 1]
            return all(
                max(cross[i - 1][j - 1] - own, ZERO) <= m for j, m in bounds
            )

        return self._search(("can", i, bounds), leaf_ok, i)

    def guarantee_value(self, agent: int) -> Fraction:
        """max over the agent's grid strategies of the worst-case V_i(X_i)."""

        def score(state):
            cross = self._leaf_cross(state)
            return cross[agent - 1][agent - 1]

        return self._optimize(("value", agent), score, agent, agent_maximizes=True)

    def guarantee_pair_envy(self, agent: int, other: int) -> Fraction:
        """min over the agent's strategies of the worst-case envy(agent, other)."""
        if agent == other:
            raise DomainError("envy toward oneself is identically zero")

        def score(state):
            cross = self._leaf_cross(state)
            own = cross[agent - 1][agent - 1]
            return max(cross[agent - 1][other - 1] - own, ZERO)

        return self._optimize(("pair", agent, other), score, agent,
                              agent_maximizes=False)

    def guarantee_total_envy(self, agent: int) -> Fraction:
        """min over the agent's strategies of the worst-case total envy."""

        def score(state):
            cross = self._leaf_cross(state)
            own = cross[agent - 1][agent - 1]
            return sum(
                (max(cross[agent - 1][j] - own, ZERO)
                 for j in range(self.protocol.agents) if j != agent - 1),
                ZERO,
            )

        return self._optimize(("total", agent), score, agent,
                              agent_maximizes=False)

    # -- recursions -----------------------------------------------------------

    def _search(self, qkey, leaf_ok, agent: int) -> bool:
        def rec(state) -> bool:
            self._bump()
            kind = current_kind(self.protocol, state)
            if kind == "leaf":
                return leaf_ok(state)
            if kind == "ifelse":
                return rec(step_ifelse(self.protocol, state))
            key = (qkey, self._key(state))
            hit = self._memo.get(key)
            if hit is not None:
                return hit
            actor, nexts = self._actions(state)
            if actor == agent:
                result = any(rec(s) for s in nexts)
            else:
                result = all(rec(s) for s in nexts)
            self._memo[key] = result
            return result

        return rec(initial_state(self.protocol))

    def _optimize(self, qkey, score, agent: int, agent_maximizes: bool) -> Fraction:
        def rec(state) -> Fraction:
            self._bump()
            kind = current_kind(self.protocol, state)
            if kind == "leaf":
                return score(state)
            if kind == "ifelse":
                return rec(step_ifelse(self.protocol, state))
            key = (qkey, self._key(state))
            hit = self._memo.get(key)
            if hit is not None:
                return hit
            actor, nexts = self._actions(state)
            outcomes = (rec(s) for s in nexts)
            if (actor == agent) == agent_maximizes:
                result = max(outcomes)
            else:
                result = min(outcomes)
            self._memo[key] = result
            return result

        return rec(initial_state(self.protocol))


# Convenience wrappers for one-shot queries; repeated queries against the
# same protocol should share a GuaranteeOracle for its caches.


def can_guarantee(p: Protocol, query: BoundsQuery, grid: Grid,
                  vals: Sequence[Valuation], budget: int = DEFAULT_BUDGET) -> bool:
    return GuaranteeOracle(p, vals, grid, budget).can_guarantee(query)


def guarantee_value(p: Protocol, agent: int, grid: Grid,
                    vals: Sequence[Valuation],
                    budget: int = DEFAULT_BUDGET) -> Fraction:
    return GuaranteeOracle(p, vals, grid, budget).guarantee_value(agent)


def guarantee_pair_envy(p: Protocol, agent: int, other: int, grid: Grid,
                        vals: Sequence[Valuation],
                        budget: int = DEFAULT_BUDGET) -> Fraction:
    return GuaranteeOracle(p, vals, grid, budget).guarantee_pair_envy(agent, other)


def guarantee_total_envy(p: Protocol, agent: int, grid: Grid,
                         vals: Sequence[Valuation],
                         budget: int = DEFAULT_BUDGET) -> Fraction:
    return GuaranteeOracle(p, vals, grid, budget).guarantee_total_envy(agent)


# ---------------------------------------------------------------------------
# Equivalence checking


class Notion:
    VALUE = "value"
    TOTAL = "total"
    PAIRWISE = "pairwise"
    STRONG = "strong"
    ALL = (VALUE, TOTAL, PAIRWISE, STRONG)


_LATTICE = (Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(1))


def strong_query_vectors(n: int, agent: int, samples: int,
                         seed: int = 0) -> list[dict[int, Fraction]]:
    """The default bound-vector sample: a small lattice plus random vectors."""
    others = [j for j in range(1, n + 1) if j != agent]
    vectors = [dict(zip(others, combo)) for combo in product(_LATTICE, repeat=len(others))]
    rng = random.Random(f"{seed}/{agent}")
    for _ in range(samples):
        vectors.append(
            {j: Fraction(rng.randint(0, 8), 8) for j in others}
        )
    return vectors


@dataclass
class Disagreement:
    notion: str
    agent: int
    detail: str

    def to_json(self):
        return {"notion": self.notion, "agent": self.agent, "detail": self.detail}


@dataclass
class EquivReport:
    notion: str
    equivalent: bool
    disagreements: list[Disagreement]
    grid: Grid
    measurements: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "notion": self.notion,
            "equivalent": self.equivalent,
            "disagreements": [d.to_json() for d in self.disagreements],
            "grid": self.grid.to_json(),
            "measurements": {k: str(v) for k, v in self.measurements.items()},
        }


def check_equiv(p1: Protocol, p2: Protocol, notion: str, grid: Grid,
                vals: Sequence[Valuation], bound_samples: int = 32,
                budget: int = DEFAULT_BUDGET, seed: int = 0) -> EquivReport:
    """Compare the guarantees two protocols give on a shared grid."""
    if p1.agents != p2.agents:
        raise DomainError("protocols disagree on the number of agents")
    if notion not in Notion.ALL:
        raise DomainError(f"unknown equivalence notion {notion!r}")
    n = p1.agents
    o1 = GuaranteeOracle(p1, vals, grid, budget)
    o2 = GuaranteeOracle(p2, vals, grid, budget)
    disagreements: list[Disagreement] = []
    measurements: dict = {}

    if notion == Notion.VALUE:
        for i in range(1, n + 1):
            a, b = o1.guarantee_value(i), o2.guarantee_value(i)
            measurements[f"value[{i}]"] = (a, b)
            if a != b:
                disagreements.append(
                    Disagreement(notion, i, f"guaranteed value {a} vs {b}")
                )
    elif notion == Notion.TOTAL:
        for i in range(1, n + 1):
            a, b = o1.guarantee_total_envy(i), o2.guarantee_total_envy(i)
            measurements[f"total[{i}]"] = (a, b)
            if a != b:
                disagreements.append(
                    Disagreement(notion, i, f"total envy bound {a} vs {b}")
                )
    elif notion == Notion.PAIRWISE:
        for i in range(1, n + 1):
            for j in range(1, n + 1):
                if i == j:
                    continue
                a = o1.guarantee_pair_envy(i, j)
                b = o2.guarantee_pair_envy(i, j)
                measurements[f"pair[{i},{j}]"] = (a, b)
                if a != b:
                    disagreements.append(
                        Disagreement(notion, i, f"envy({i},{j}) bound {a} vs {b}")
                    )
    else:  # STRONG
        for i in range(1, n + 1):
            for vector in strong_query_vectors(n, i, bound_samples, seed):
                query = BoundsQuery.make(i, vector)
                a, b = o1.can_guarantee(query), o2.can_guarantee(query)
                if a != b:
                    pretty = {j: str(m) for j, m in vector.items()}
                    disagreements.append(
                        Disagreement(
                            notion, i,
                            f"bounds {pretty}: {'yes' if a else 'no'} vs"
                            f" {'yes' if b else 'no'}",
                        )
                    )
    return EquivReport(notion, not disagreements, disagreements, grid, measurements)
