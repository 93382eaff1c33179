"""Deterministic interpreter for every protocol form.

``run`` walks a protocol, querying one strategy per agent for cut positions
and branch/piece choices, and produces a ``Trace`` plus the final exact
``Allocation``.  The small-step helpers (``step_*``, ``ExecState``) are also
used by the guarantee oracle, so execution semantics live in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

from .errors import DomainError, ExecutionError, TraceMismatchError
from .ir import (
    And, BcChoose, BcCut, BcDag, BcLeaf, ChoseAt, Condition, CutInAt, CutRef,
    DagChoose, DagCut, DagLeaf, Else, ExtChoose, ExtCut, ExtLeaf, GccChoose,
    GccCut, GccIfElse, GccLeaf, Less, Not, Or, Protocol,
)
from .valuation import Allocation, Interval, ONE, Valuation, ZERO, format_frac, frac

# ---------------------------------------------------------------------------
# Trace events


@dataclass(frozen=True)
class CutMade:
    node: int
    agent: int
    position: Fraction
    piece: Optional[int] = None  # index within the offered piece set (GCC only)


@dataclass(frozen=True)
class BranchChosen:
    node: int
    agent: int
    index: int


@dataclass(frozen=True)
class PieceChosen:
    node: int
    agent: int
    index: int


Event = Union[CutMade, BranchChosen, PieceChosen]


@dataclass(frozen=True)
class Trace:
    events: tuple[Event, ...]
    cuts: tuple[Fraction, ...]  # cut positions in creation order

    def to_json(self) -> dict:
        out = []
        for ev in self.events:
            if isinstance(ev, CutMade):
                item = {"type": "cut", "node": ev.node, "agent": ev.agent,
                        "position": format_frac(ev.position)}
                if ev.piece is not None:
                    item["piece"] = ev.piece
            elif isinstance(ev, BranchChosen):
                item = {"type": "branch", "node": ev.node, "agent": ev.agent,
                        "index": ev.index}
            else:
                item = {"type": "piece", "node": ev.node, "agent": ev.agent,
                        "index": ev.index}
            out.append(item)
        return {"events": out, "cuts": [format_frac(x) for x in self.cuts]}

    @staticmethod
    def from_json(obj: dict) -> "Trace":
        events: list[Event] = []
        for item in obj.get("events", []):
            kind = item.get("type")
            if kind == "cut":
                events.append(CutMade(item["node"], item["agent"],
                                      frac(item["position"]), item.get("piece")))
            elif kind == "branch":
                events.append(BranchChosen(item["node"], item["agent"], item["index"]))
            elif kind == "piece":
                events.append(PieceChosen(item["node"], item["agent"], item["index"]))
            else:
                raise DomainError(f"unknown trace event type {kind!r}")
        return Trace(tuple(events), tuple(frac(x) for x in obj.get("cuts", [])))


# ---------------------------------------------------------------------------
# Strategies


@dataclass(frozen=True)
class DecisionContext:
    """Everything a strategy may look at when asked for one decision.

    ``kind`` is "cut" (return a position), "branch" (return a child index),
    "gcc-cut" (return ``(piece_index, position)``) or "gcc-choose" (return a
    piece index).  Strategies must be pure and deterministic.
    """

    node: object
    agent: int
    kind: str
    valuation: Valuation
    events: tuple[Event, ...]
    pieces: tuple[Interval, ...] = ()
    branches: int = 0
    partition: tuple[Interval, ...] = ()
    cut_positions: dict[int, Fraction] = field(default_factory=dict)


Strategy = Callable[[DecisionContext], object]

# ---------------------------------------------------------------------------
# Execution state and small steps (shared with the oracle)


@dataclass(frozen=True)
class ExecState:
    node: object  # current node object; for a DAG, the node id
    cuts: tuple[tuple[int, Fraction], ...] = ()  # (cut node id, position), creation order
    picks: tuple[tuple[int, int], ...] = ()      # (node id, piece index), GCC only
    allocated: tuple[tuple[int, Interval], ...] = ()  # (agent, interval), GCC only


def _node_of(p: Protocol, state: ExecState):
    return p.nodes[state.node] if isinstance(p, BcDag) else state.node


def partition_of(cuts: Sequence[tuple[int, Fraction]]) -> tuple[Interval, ...]:
    """Left-to-right pieces; coincident cuts keep creation order (earlier left)."""
    ordered = sorted(range(len(cuts)), key=lambda i: (cuts[i][1], i))
    bounds = [ZERO] + [cuts[i][1] for i in ordered] + [ONE]
    return tuple((bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1))


def resolve_ref(ref: CutRef, positions: dict[int, Fraction]) -> Fraction:
    if ref.kind == "origin":
        return ZERO
    if ref.kind == "end":
        return ONE
    try:
        return positions[ref.cut]
    except KeyError:
        raise ExecutionError(f"ref to cut {ref.cut} that was never made")


def cut_positions_of(state: ExecState) -> dict[int, Fraction]:
    return {nid: pos for nid, pos in state.cuts}


def current_kind(p: Protocol, state: ExecState) -> str:
    node = _node_of(p, state)
    if isinstance(node, (BcCut, DagCut, ExtCut, GccCut)):
        return "cut"
    if isinstance(node, (BcChoose, DagChoose, ExtChoose)):
        return "choose"
    if isinstance(node, GccChoose):
        return "gcc-choose"
    if isinstance(node, GccIfElse):
        return "ifelse"
    return "leaf"


def cut_intervals(p: Protocol, state: ExecState) -> tuple[Interval, ...]:
    """Candidate intervals for the cut at the current node."""
    node = _node_of(p, state)
    if isinstance(node, (BcCut, DagCut)):
        return (partition_of(state.cuts)[node.piece - 1],)
    positions = cut_positions_of(state)
    if isinstance(node, ExtCut):
        lo = resolve_ref(node.left, positions)
        hi = resolve_ref(node.right, positions)
        if lo > hi:
            raise ExecutionError("cut interval inverted at run time", node=node.nid)
        return ((lo, hi),)
    if isinstance(node, GccCut):
        out = []
        for ref_lo, ref_hi in node.pieces:
            lo, hi = resolve_ref(ref_lo, positions), resolve_ref(ref_hi, positions)
            if lo > hi:
                raise ExecutionError("piece inverted at run time", node=node.nid)
            out.append((lo, hi))
        return tuple(out)
    raise DomainError("current node is not a cut")


def choose_pieces(p: Protocol, state: ExecState) -> tuple[Interval, ...]:
    node = _node_of(p, state)
    assert isinstance(node, GccChoose)
    positions = cut_positions_of(state)
    return tuple(
        (resolve_ref(lo, positions), resolve_ref(hi, positions))
        for lo, hi in node.pieces
    )


def step_cut(p: Protocol, state: ExecState, piece_index: int, z: Fraction) -> ExecState:
    node = _node_of(p, state)
    intervals = cut_intervals(p, state)
    if not 0 <= piece_index < len(intervals):
        raise ExecutionError(f"piece index {piece_index} out of range",
                             node=node.nid, agent=node.agent)
    lo, hi = intervals[piece_index]
    if not lo <= z <= hi:
        raise ExecutionError(
            f"cut at {z} outside mandated interval [{lo}, {hi}]",
            node=node.nid, agent=node.agent,
        )
    cuts = state.cuts + ((node.nid, z),)
    picks = state.picks
    if isinstance(node, GccCut):
        picks = picks + ((node.nid, piece_index),)
    child = node.child
    return ExecState(child, cuts, picks, state.allocated)


def step_choose(p: Protocol, state: ExecState, index: int) -> ExecState:
    node = _node_of(p, state)
    if isinstance(node, (BcChoose, DagChoose, ExtChoose)):
        if not 0 <= index < len(node.children):
            raise ExecutionError(f"branch index {index} out of range",
                                 node=node.nid, agent=node.agent)
        return ExecState(node.children[index], state.cuts, state.picks, state.allocated)
    if isinstance(node, GccChoose):
        pieces = choose_pieces(p, state)
        if not 0 <= index < len(pieces):
            raise ExecutionError(f"piece index {index} out of range",
                                 node=node.nid, agent=node.agent)
        allocated = state.allocated + ((node.agent, pieces[index]),)
        picks = state.picks + ((node.nid, index),)
        return ExecState(node.child, state.cuts, picks, allocated)
    raise DomainError("current node is not a choose")


def eval_condition(cond: Condition, state: ExecState) -> bool:
    """Run-time condition semantics; Less is strict position comparison."""
    if isinstance(cond, Else):
        return True
    picks = dict(state.picks)
    if isinstance(cond, ChoseAt) or isinstance(cond, CutInAt):
        if cond.node not in picks:
            raise ExecutionError(f"condition references undecided node {cond.node}")
        return picks[cond.node] == cond.index
    if isinstance(cond, Less):
        positions = cut_positions_of(state)
        return resolve_ref(cond.left, positions) < resolve_ref(cond.right, positions)
    if isinstance(cond, And):
        return all(eval_condition(part, state) for part in cond.parts)
    if isinstance(cond, Or):
        return any(eval_condition(part, state) for part in cond.parts)
    if isinstance(cond, Not):
        return not eval_condition(cond.part, state)
    raise DomainError(f"unknown condition {type(cond).__name__}")


def step_ifelse(p: Protocol, state: ExecState) -> ExecState:
    node = _node_of(p, state)
    assert isinstance(node, GccIfElse)
    for cond, child in node.branches:
        if eval_condition(cond, state):
            return ExecState(child, state.cuts, state.picks, state.allocated)
    raise ExecutionError("no if-else branch matched", node=node.nid)


def leaf_allocation(p: Protocol, state: ExecState) -> Allocation:
    node = _node_of(p, state)
    n = p.agents
    pieces: list[list[Interval]] = [[] for _ in range(n)]
    if isinstance(node, (BcLeaf, DagLeaf)):
        parts = partition_of(state.cuts)
        if len(parts) != len(node.assign):
            raise ExecutionError(
                f"leaf expects {len(node.assign)} pieces, partition has {len(parts)}",
                node=node.nid,
            )
        for part, agent in zip(parts, node.assign):
            pieces[agent - 1].append(part)
    elif isinstance(node, ExtLeaf):
        positions = cut_positions_of(state)
        for seg in node.segments:
            lo = resolve_ref(seg.left, positions)
            hi = resolve_ref(seg.right, positions)
            if lo > hi:
                raise ExecutionError("segment inverted at run time", node=node.nid)
            pieces[seg.agent - 1].append((lo, hi))
    elif isinstance(node, GccLeaf):
        for agent, interval in state.allocated:
            pieces[agent - 1].append(interval)
        for row in pieces:
            row.sort()
    else:
        raise DomainError("current node is not a leaf")
    try:
        return Allocation(tuple(tuple(row) for row in pieces))
    except DomainError as exc:
        raise ExecutionError(f"allocation invalid at leaf: {exc}", node=node.nid)


def initial_state(p: Protocol) -> ExecState:
    return ExecState(p.root if not isinstance(p, BcDag) else p.root)


# ---------------------------------------------------------------------------
# Full runs


def run(p: Protocol, strategies: Sequence[Strategy],
        vals: Sequence[Valuation]) -> tuple[Trace, Allocation]:
    """Execute ``p``; each decision is delegated to the acting agent's strategy."""
    if len(strategies) != p.agents or len(vals) != p.agents:
        raise DomainError(
            f"protocol has {p.agents} agents; got {len(strategies)} strategies"
            f" and {len(vals)} valuations"
        )
    state = initial_state(p)
    events: list[Event] = []

    def context(node, kind, **extra) -> DecisionContext:
        return DecisionContext(
            node=node,
            agent=node.agent,
            kind=kind,
            valuation=vals[node.agent - 1],
            events=tuple(events),
            partition=partition_of(state.cuts),
            cut_positions=cut_positions_of(state),
            **extra,
        )

    while True:
        kind = current_kind(p, state)
        node = _node_of(p, state)
        if kind == "leaf":
            break
        if kind == "cut":
            intervals = cut_intervals(p, state)
            if isinstance(node, GccCut):
                answer = strategies[node.agent - 1](
                    context(node, "gcc-cut", pieces=intervals)
                )
                try:
                    piece_index, z = answer
                except (TypeError, ValueError):
                    raise ExecutionError(
                        f"gcc-cut strategy must return (piece_index, position), got {answer!r}",
                        node=node.nid, agent=node.agent,
                    )
                z = frac(z)
            else:
                piece_index = 0
                z = frac(strategies[node.agent - 1](
                    context(node, "cut", pieces=intervals)
                ))
            state = step_cut(p, state, piece_index, z)
            events.append(CutMade(node.nid, node.agent, z,
                                  piece_index if isinstance(node, GccCut) else None))
        elif kind == "choose":
            index = strategies[node.agent - 1](
                context(node, "branch", branches=len(node.children))
            )
            if not isinstance(index, int):
                raise ExecutionError(f"branch strategy must return an int, got {index!r}",
                                     node=node.nid, agent=node.agent)
            state = step_choose(p, state, index)
            events.append(BranchChosen(node.nid, node.agent, index))
        elif kind == "gcc-choose":
            pieces = choose_pieces(p, state)
            if len(pieces) == 1:
                index = 0  # no actual choice; do not query the strategy
            else:
                index = strategies[node.agent - 1](
                    context(node, "gcc-choose", pieces=pieces)
                )
                if not isinstance(index, int):
                    raise ExecutionError(
                        f"piece strategy must return an int, got {index!r}",
                        node=node.nid, agent=node.agent,
                    )
            state = step_choose(p, state, index)
            events.append(PieceChosen(node.nid, node.agent, index))
        elif kind == "ifelse":
            state = step_ifelse(p, state)
        else:  # pragma: no cover
            raise DomainError(f"unhandled node kind {kind}")

    alloc = leaf_allocation(p, state)
    trace = Trace(tuple(events), tuple(pos for _, pos in state.cuts))
    return trace, alloc


def allocation_values(alloc: Allocation, vals: Sequence[Valuation]):
    """Matrix entry (i, j) = V_i(X_j); every row sums to exactly 1."""
    if len(vals) != alloc.agents:
        raise DomainError(
            f"allocation has {alloc.agents} agents but {len(vals)} valuations given"
        )
    return tuple(
        tuple(v.value_of(alloc.pieces[j]) for j in range(alloc.agents)) for v in vals
    )


def replay(p: Protocol, trace: Trace) -> Allocation:
    """Re-derive the allocation from a recorded trace, verifying every event."""
    queue = list(trace.events)
    state = initial_state(p)
    while True:
        kind = current_kind(p, state)
        node = _node_of(p, state)
        if kind == "leaf":
            break
        if kind == "ifelse":
            state = step_ifelse(p, state)
            continue
        if not queue:
            raise TraceMismatchError(f"trace ended before node {node.nid}")
        ev = queue.pop(0)
        if ev.node != node.nid or ev.agent != node.agent:
            raise TraceMismatchError(
                f"event {ev} does not match node {node.nid} (agent {node.agent})"
            )
        if kind == "cut":
            if not isinstance(ev, CutMade):
                raise TraceMismatchError(f"expected a cut event at node {node.nid}")
            state = step_cut(p, state, ev.piece or 0, ev.position)
        elif kind == "choose":
            if not isinstance(ev, BranchChosen):
                raise TraceMismatchError(f"expected a branch event at node {node.nid}")
            state = step_choose(p, state, ev.index)
        else:
            if not isinstance(ev, PieceChosen):
                raise TraceMismatchError(f"expected a piece event at node {node.nid}")
            state = step_choose(p, state, ev.index)
    if queue:
        raise TraceMismatchError(f"{len(queue)} trailing trace events")
    final_cuts = tuple(pos for _, pos in state.cuts)
    if trace.cuts and trace.cuts != final_cuts:
        raise TraceMismatchError("recorded cut list disagrees with replay")
    return leaf_allocation(p, state)
