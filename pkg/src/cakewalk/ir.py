"""Typed protocol representations and their validators.

Four forms are supported:

* ``BcTree``   -- branch-choice tree: cut / choose / leaf nodes, allocation
  happens only at leaves via a piece-index -> agent map.
* ``BcDag``    -- the same node kinds with shared children, stored as an
  id -> node map; every root-to-node path must make the same number of cuts.
* ``ExtBcTree`` -- branch-choice tree where a cut may span several pieces
  (between two possibly non-adjacent earlier cuts) and leaves allocate
  between named cuts.
* ``GccTree``  -- cut / choose / if-else trees where agents pick pieces
  directly and allocation happens at choose nodes.

Validators return a ``ValidationReport`` listing each violated invariant
with the node's path; an empty report means the protocol is valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Union

from .errors import DomainError

# ---------------------------------------------------------------------------
# Cut references (extended BC and GCC forms)


@dataclass(frozen=True)
class CutRef:
    """A boundary: the cake ends, or a cut made at an ancestor node."""

    kind: str  # "origin" | "end" | "cut"
    cut: int = -1

    def __repr__(self):
        if self.kind == "cut":
            return f"at({self.cut})"
        return self.kind


ORIGIN = CutRef("origin")
END = CutRef("end")


def at(nid: int) -> CutRef:
    return CutRef("cut", nid)


Piece = tuple[CutRef, CutRef]

# ---------------------------------------------------------------------------
# Node types


@dataclass(frozen=True)
class BcCut:
    nid: int
    agent: int
    piece: int  # 1-based index into the current left-to-right partition
    child: "BcNode"


@dataclass(frozen=True)
class BcChoose:
    nid: int
    agent: int
    children: tuple["BcNode", ...]


@dataclass(frozen=True)
class BcLeaf:
    nid: int
    assign: tuple[int, ...]  # piece k -> agent assign[k-1]


BcNode = Union[BcCut, BcChoose, BcLeaf]


@dataclass(frozen=True)
class BcTree:
    agents: int
    root: BcNode


@dataclass(frozen=True)
class DagCut:
    nid: int
    agent: int
    piece: int
    child: int


@dataclass(frozen=True)
class DagChoose:
    nid: int
    agent: int
    children: tuple[int, ...]


@dataclass(frozen=True)
class DagLeaf:
    nid: int
    assign: tuple[int, ...]


DagNode = Union[DagCut, DagChoose, DagLeaf]


@dataclass(frozen=True)
class BcDag:
    agents: int
    root: int
    nodes: dict[int, DagNode] = field(compare=False)

    def __post_init__(self):
        for nid, node in self.nodes.items():
            if node.nid != nid:
                raise DomainError(f"node map key {nid} disagrees with node id {node.nid}")


@dataclass(frozen=True)
class ExtCut:
    nid: int
    agent: int
    left: CutRef
    right: CutRef
    child: "ExtNode"


@dataclass(frozen=True)
class ExtChoose:
    nid: int
    agent: int
    children: tuple["ExtNode", ...]


@dataclass(frozen=True)
class ExtSegment:
    left: CutRef
    right: CutRef
    agent: int


@dataclass(frozen=True)
class ExtLeaf:
    nid: int
    segments: tuple[ExtSegment, ...]


ExtNode = Union[ExtCut, ExtChoose, ExtLeaf]


@dataclass(frozen=True)
class ExtBcTree:
    agents: int
    root: ExtNode


# Conditions for GCC if-else nodes -------------------------------------------


@dataclass(frozen=True)
class Less:
    left: CutRef
    right: CutRef


@dataclass(frozen=True)
class ChoseAt:
    node: int
    index: int


@dataclass(frozen=True)
class CutInAt:
    node: int
    index: int


@dataclass(frozen=True)
class Else:
    pass


@dataclass(frozen=True)
class And:
    parts: tuple["Condition", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Condition", ...]


@dataclass(frozen=True)
class Not:
    part: "Condition"


Condition = Union[Less, ChoseAt, CutInAt, Else, And, Or, Not]

ELSE = Else()


@dataclass(frozen=True)
class GccCut:
    nid: int
    agent: int
    pieces: tuple[Piece, ...]
    child: "GccNode"


@dataclass(frozen=True)
class GccChoose:
    nid: int
    agent: int
    pieces: tuple[Piece, ...]
    child: "GccNode"


@dataclass(frozen=True)
class GccIfElse:
    nid: int
    branches: tuple[tuple[Condition, "GccNode"], ...]


@dataclass(frozen=True)
class GccLeaf:
    nid: int


GccNode = Union[GccCut, GccChoose, GccIfElse, GccLeaf]


class GccMode(Enum):
    RESTRICTED = "restricted"
    EXTENSIVE = "extensive"


@dataclass(frozen=True)
class GccTree:
    agents: int
    root: GccNode


Protocol = Union[BcTree, BcDag, ExtBcTree, GccTree]

# ---------------------------------------------------------------------------
# Generic traversal


def children_of(node) -> tuple:
    if isinstance(node, (BcCut, ExtCut, GccCut, GccChoose)):
        return (node.child,)
    if isinstance(node, (BcChoose, ExtChoose)):
        return node.children
    if isinstance(node, GccIfElse):
        return tuple(child for _, child in node.branches)
    return ()


def iter_nodes(p: Protocol) -> Iterator:
    """Preorder over all nodes (for a DAG, each stored node once)."""
    if isinstance(p, BcDag):
        yield from p.nodes.values()
        return
    stack = [p.root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children_of(node)))


def replace_child(node, index: int, new_child):
    """Functional child replacement for tree nodes."""
    if isinstance(node, (BcCut, ExtCut, GccCut, GccChoose)):
        assert index == 0
        return type(node)(**{**node.__dict__, "child": new_child})
    if isinstance(node, (BcChoose, ExtChoose)):
        kids = node.children[:index] + (new_child,) + node.children[index + 1 :]
        return type(node)(**{**node.__dict__, "children": kids})
    if isinstance(node, GccIfElse):
        branches = list(node.branches)
        branches[index] = (branches[index][0], new_child)
        return GccIfElse(node.nid, tuple(branches))
    raise DomainError(f"{type(node).__name__} has no children")


class IdGen:
    """Sequential node-id source for building protocols."""

    def __init__(self, start: int = 0):
        self._next = start

    def __call__(self) -> int:
        nid = self._next
        self._next += 1
        return nid


# ---------------------------------------------------------------------------
# Validation reports


@dataclass
class Violation:
    path: str
    nid: int
    message: str

    def __str__(self):
        return f"[{self.path} #{self.nid}] {self.message}"


@dataclass
class ValidationReport:
    errors: list[Violation] = field(default_factory=list)
    warnings: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, path, nid, message):
        self.errors.append(Violation(path, nid, message))

    def warn(self, path, nid, message):
        self.warnings.append(Violation(path, nid, message))

    def __str__(self):
        if self.ok and not self.warnings:
            return "valid"
        lines = [f"error: {v}" for v in self.errors]
        lines += [f"warning: {v}" for v in self.warnings]
        return "\n".join(lines)


def _check_agent(report, path, nid, agent, n):
    if not 1 <= agent <= n:
        report.error(path, nid, f"agent {agent} out of range 1..{n}")


# ---------------------------------------------------------------------------
# BC tree validation


def validate_bc(t: BcTree) -> ValidationReport:
    report = ValidationReport()
    seen: set[int] = set()

    def walk(node, path, cuts_above):
        if node.nid in seen:
            report.error(path, node.nid, "duplicate node id")
        seen.add(node.nid)
        if isinstance(node, BcCut):
            _check_agent(report, path, node.nid, node.agent, t.agents)
            if not 1 <= node.piece <= cuts_above + 1:
                report.error(
                    path, node.nid,
                    f"cut into piece {node.piece} but only {cuts_above + 1} pieces exist",
                )
            walk(node.child, path + "/0", cuts_above + 1)
        elif isinstance(node, BcChoose):
            _check_agent(report, path, node.nid, node.agent, t.agents)
            if not node.children:
                report.error(path, node.nid, "choose node with no children")
            for i, child in enumerate(node.children):
                walk(child, f"{path}/{i}", cuts_above)
        elif isinstance(node, BcLeaf):
            if len(node.assign) != cuts_above + 1:
                report.error(
                    path, node.nid,
                    f"leaf assigns {len(node.assign)} pieces, expected {cuts_above + 1}",
                )
            for a in node.assign:
                _check_agent(report, path, node.nid, a, t.agents)
        else:
            report.error(path, node.nid, f"unknown node type {type(node).__name__}")

    walk(t.root, "root", 0)
    return report


# ---------------------------------------------------------------------------
# BC DAG validation


def validate_dag(d: BcDag) -> ValidationReport:
    report = ValidationReport()
    if d.root not in d.nodes:
        report.error("root", d.root, "root id missing from node map")
        return report

    # Reachability and edge sanity.
    reached: set[int] = set()
    stack = [d.root]
    while stack:
        nid = stack.pop()
        if nid in reached:
            continue
        reached.add(nid)
        node = d.nodes[nid]
        kids = (node.child,) if isinstance(node, DagCut) else (
            node.children if isinstance(node, DagChoose) else ()
        )
        if isinstance(node, DagChoose) and not node.children:
            report.error(f"node {nid}", nid, "choose node with no children")
        for kid in kids:
            if kid not in d.nodes:
                report.error(f"node {nid}", nid, f"edge to missing node {kid}")
            else:
                stack.append(kid)
    for nid in d.nodes:
        if nid not in reached:
            report.error(f"node {nid}", nid, "unreachable from root")
    if not report.ok:
        return report

    # Acyclicity via DFS colouring.
    WHITE, GREY, BLACK = 0, 1, 2
    colour = {nid: WHITE for nid in d.nodes}

    def dfs(nid) -> bool:
        colour[nid] = GREY
        node = d.nodes[nid]
        kids = (node.child,) if isinstance(node, DagCut) else (
            node.children if isinstance(node, DagChoose) else ()
        )
        for kid in kids:
            if colour[kid] == GREY:
                report.error(f"node {nid}", nid, f"cycle through node {kid}")
                return False
            if colour[kid] == WHITE and not dfs(kid):
                return False
        colour[nid] = BLACK
        return True

    if not dfs(d.root):
        return report

    # Every root->node path must make the same number of cuts.
    depth: dict[int, int] = {d.root: 0}
    order = [d.root]
    queue = [d.root]
    while queue:
        nid = queue.pop(0)
        node = d.nodes[nid]
        step = 1 if isinstance(node, DagCut) else 0
        kids = (node.child,) if isinstance(node, DagCut) else (
            node.children if isinstance(node, DagChoose) else ()
        )
        for kid in kids:
            want = depth[nid] + step
            if kid in depth:
                if depth[kid] != want:
                    report.error(
                        f"node {kid}", kid,
                        f"paths disagree on cut count ({depth[kid]} vs {want})",
                    )
            else:
                depth[kid] = want
                order.append(kid)
                queue.append(kid)
    if not report.ok:
        return report

    for nid, node in d.nodes.items():
        path = f"node {nid}"
        if isinstance(node, DagCut):
            _check_agent(report, path, nid, node.agent, d.agents)
            if not 1 <= node.piece <= depth[nid] + 1:
                report.error(
                    path, nid,
                    f"cut into piece {node.piece} but only {depth[nid] + 1} pieces exist",
                )
        elif isinstance(node, DagChoose):
            _check_agent(report, path, nid, node.agent, d.agents)
        elif isinstance(node, DagLeaf):
            if len(node.assign) != depth[nid] + 1:
                report.error(
                    path, nid,
                    f"leaf assigns {len(node.assign)} pieces, expected {depth[nid] + 1}",
                )
            for a in node.assign:
                _check_agent(report, path, nid, a, d.agents)
    return report


# ---------------------------------------------------------------------------
# Static cut ordering (extended BC and GCC)


class Order(Enum):
    LE = "le"          # left <= right in every execution
    GE = "ge"          # right <= left in every execution
    EQ = "eq"          # both: the two refs coincide in every execution
    UNKNOWN = "unknown"


@dataclass
class PartialOrder:
    """Sound, conservative order over the cut refs visible at one node."""

    refs: tuple[CutRef, ...]
    le: set[tuple[CutRef, CutRef]]

    def compare(self, a: CutRef, b: CutRef) -> Order:
        fwd = a == b or (a, b) in self.le
        bwd = a == b or (b, a) in self.le
        if fwd and bwd:
            return Order.EQ
        if fwd:
            return Order.LE
        if bwd:
            return Order.GE
        return Order.UNKNOWN

    def le_or_eq(self, a: CutRef, b: CutRef) -> bool:
        return self.compare(a, b) in (Order.LE, Order.EQ)


class _OrderBuilder:
    """Incrementally closed <= relation over cut refs."""

    def __init__(self):
        self.refs: list[CutRef] = [ORIGIN, END]
        self.le: set[tuple[CutRef, CutRef]] = {(ORIGIN, END)}

    def snapshot(self) -> PartialOrder:
        return PartialOrder(tuple(self.refs), set(self.le))

    def add_ref(self, ref: CutRef):
        if ref not in self.refs:
            self.refs.append(ref)

    def add_le(self, a: CutRef, b: CutRef):
        self.add_ref(a)
        self.add_ref(b)
        if (a, b) in self.le:
            return
        self.le.add((a, b))
        # Transitive closure, incremental: x <= a <= b <= y.
        before = [x for x in self.refs if x == a or (x, a) in self.le]
        after = [y for y in self.refs if y == b or (b, y) in self.le]
        for x in before:
            for y in after:
                if x != y:
                    self.le.add((x, y))

    def bounded_cut(self, ref: CutRef, lows: Iterable[CutRef], highs: Iterable[CutRef]):
        """New cut known to satisfy low <= ref <= high for each bound."""
        self.add_ref(ref)
        for low in lows:
            self.add_le(low, ref)
        for high in highs:
            self.add_le(ref, high)


def _ext_path_to(t: ExtBcTree, target_nid: int):
    """Root-to-node path (inclusive), or None if the id is absent."""

    def walk(node, acc):
        acc.append(node)
        if node.nid == target_nid:
            return True
        for child in children_of(node):
            if walk(child, acc):
                return True
        acc.pop()
        return False

    acc: list = []
    if walk(t.root, acc):
        return acc
    return None


def static_cut_order(t: ExtBcTree, at_nid: int) -> PartialOrder:
    """Order of the cuts visible at node ``at_nid``.

    Derived only from the tree structure: each ancestor cut lies between its
    two bounding refs, closed transitively.  Whenever LE is reported, every
    execution satisfies it; UNKNOWN may still be ordered at run time.
    """
    path = _ext_path_to(t, at_nid)
    if path is None:
        raise DomainError(f"node {at_nid} not found")
    builder = _OrderBuilder()
    for node in path[:-1]:
        if isinstance(node, ExtCut):
            builder.bounded_cut(at(node.nid), [node.left], [node.right])
            builder.add_le(ORIGIN, at(node.nid))
            builder.add_le(at(node.nid), END)
    return builder.snapshot()


# ---------------------------------------------------------------------------
# Extended BC validation


def validate_ext(t: ExtBcTree) -> ValidationReport:
    report = ValidationReport()
    seen: set[int] = set()

    def known(ref: CutRef, cuts_above: set[int]) -> bool:
        return ref.kind != "cut" or ref.cut in cuts_above

    def walk(node, path, cuts_above: set[int], builder: _OrderBuilder):
        if node.nid in seen:
            report.error(path, node.nid, "duplicate node id")
        seen.add(node.nid)
        order = builder.snapshot()
        if isinstance(node, ExtCut):
            _check_agent(report, path, node.nid, node.agent, t.agents)
            for ref in (node.left, node.right):
                if not known(ref, cuts_above):
                    report.error(path, node.nid, f"ref {ref} is not an ancestor cut")
            if known(node.left, cuts_above) and known(node.right, cuts_above):
                if not order.le_or_eq(node.left, node.right):
                    report.error(
                        path, node.nid,
                        f"order of {node.left} and {node.right} is not derivable",
                    )
            sub = _OrderBuilder()
            sub.refs = list(builder.refs)
            sub.le = set(builder.le)
            sub.bounded_cut(at(node.nid), [node.left, ORIGIN], [node.right, END])
            walk(node.child, path + "/0", cuts_above | {node.nid}, sub)
        elif isinstance(node, ExtChoose):
            _check_agent(report, path, node.nid, node.agent, t.agents)
            if not node.children:
                report.error(path, node.nid, "choose node with no children")
            for i, child in enumerate(node.children):
                walk(child, f"{path}/{i}", cuts_above, builder)
        elif isinstance(node, ExtLeaf):
            segs = node.segments
            if not segs:
                report.error(path, node.nid, "leaf with no segments")
                return
            if segs[0].left != ORIGIN:
                report.error(path, node.nid, "first segment must start at the origin")
            if segs[-1].right != END:
                report.error(path, node.nid, "last segment must end at the cake's end")
            for k in range(len(segs) - 1):
                if segs[k].right != segs[k + 1].left:
                    report.error(
                        path, node.nid,
                        f"segments {k} and {k + 1} do not share an endpoint",
                    )
            for k, seg in enumerate(segs):
                _check_agent(report, path, node.nid, seg.agent, t.agents)
                for ref in (seg.left, seg.right):
                    if not known(ref, cuts_above):
                        report.error(path, node.nid, f"ref {ref} is not an ancestor cut")
                if known(seg.left, cuts_above) and known(seg.right, cuts_above):
                    if not order.le_or_eq(seg.left, seg.right):
                        report.error(
                            path, node.nid,
                            f"segment {k}: order of {seg.left} and {seg.right}"
                            " is not derivable",
                        )
        else:
            report.error(path, node.nid, f"unknown node type {type(node).__name__}")

    walk(t.root, "root", set(), _OrderBuilder())
    return report


# ---------------------------------------------------------------------------
# GCC validation


def _condition_nodes(cond: Condition) -> Iterator[tuple[str, int]]:
    if isinstance(cond, ChoseAt):
        yield ("choose", cond.node)
    elif isinstance(cond, CutInAt):
        yield ("cut", cond.node)
    elif isinstance(cond, And) or isinstance(cond, Or):
        for part in cond.parts:
            yield from _condition_nodes(part)
    elif isinstance(cond, Not):
        yield from _condition_nodes(cond.part)


def _condition_refs(cond: Condition) -> Iterator[CutRef]:
    if isinstance(cond, Less):
        yield cond.left
        yield cond.right
    elif isinstance(cond, (And, Or)):
        for part in cond.parts:
            yield from _condition_refs(part)
    elif isinstance(cond, Not):
        yield from _condition_refs(cond.part)


def _refine_with_condition(builder: "_OrderBuilder", cond: Condition, ancestors):
    """Add the order facts a taken branch's condition implies (sound only
    for conjunctive positive atoms; disjunctions and negations teach nothing
    safely and are skipped)."""
    if isinstance(cond, And):
        for part in cond.parts:
            _refine_with_condition(builder, part, ancestors)
    elif isinstance(cond, Less):
        builder.add_le(cond.left, cond.right)
    elif isinstance(cond, CutInAt):
        info = ancestors.get(cond.node)
        if info is not None and info[0] == "cut":
            node = info[1]
            if 0 <= cond.index < len(node.pieces):
                lo, hi = node.pieces[cond.index]
                builder.add_le(lo, at(cond.node))
                builder.add_le(at(cond.node), hi)


def _eval_condition_static(cond: Condition, picks: dict[int, int], order: PartialOrder):
    """Three-valued evaluation against a symbolic pick assignment."""
    if isinstance(cond, Else):
        return True
    if isinstance(cond, ChoseAt) or isinstance(cond, CutInAt):
        if cond.node not in picks:
            return None
        return picks[cond.node] == cond.index
    if isinstance(cond, Less):
        rel = order.compare(cond.left, cond.right)
        if rel in (Order.EQ, Order.GE):
            return False
        return None  # LE permits equality, so strictness stays unknown
    if isinstance(cond, And):
        vals = [_eval_condition_static(p, picks, order) for p in cond.parts]
        if any(v is False for v in vals):
            return False
        if all(v is True for v in vals):
            return True
        return None
    if isinstance(cond, Or):
        vals = [_eval_condition_static(p, picks, order) for p in cond.parts]
        if any(v is True for v in vals):
            return True
        if all(v is False for v in vals):
            return False
        return None
    if isinstance(cond, Not):
        v = _eval_condition_static(cond.part, picks, order)
        return None if v is None else not v

    raise DomainError(f"unknown condition {type(cond).__name__}")


_SYMBOLIC_STATE_CAP = 4096


def validate_gcc(t: GccTree, mode: GccMode = GccMode.RESTRICTED) -> ValidationReport:
    report = ValidationReport()
    seen: set[int] = set()

    def piece_ok(path, nid, piece: Piece, cuts_above, order) -> bool:
        ok = True
        for ref in piece:
            if ref.kind == "cut" and ref.cut not in cuts_above:
                report.error(path, nid, f"ref {ref} is not an ancestor cut")
                ok = False
        if ok and not order.le_or_eq(piece[0], piece[1]):
            report.error(
                path, nid, f"order of {piece[0]} and {piece[1]} is not derivable"
            )
            ok = False
        return ok

    def provably_disjoint(a: Piece, b: Piece, order) -> bool:
        return order.le_or_eq(a[1], b[0]) or order.le_or_eq(b[1], a[0])

    def check_pieces(path, node, cuts_above, order):
        pieces = node.pieces
        if not pieces:
            report.error(path, node.nid, "empty piece set")
            return
        usable = [p for p in pieces if piece_ok(path, node.nid, p, cuts_above, order)]
        for i in range(len(usable)):
            for j in range(i + 1, len(usable)):
                if not provably_disjoint(usable[i], usable[j], order):
                    report.error(
                        path, node.nid,
                        f"pieces {usable[i]} and {usable[j]} may overlap",
                    )
        if mode is GccMode.RESTRICTED:
            for piece in usable:
                for cut_nid in cuts_above:
                    z = at(cut_nid)
                    if z == piece[0] or z == piece[1]:
                        continue
                    inside_impossible = order.le_or_eq(z, piece[0]) or order.le_or_eq(
                        piece[1], z
                    )
                    if not inside_impossible:
                        report.error(
                            path, node.nid,
                            f"piece {piece} may contain earlier cut {z}"
                            " (restricted mode)",
                        )

    def overlap_allocated(piece: Piece, allocated, order) -> bool:
        return any(not provably_disjoint(piece, other, order) for other in allocated)

    # Symbolic states: (picks, allocated piece list).  Chooses fork states;
    # ``complete`` records whether the fork set was ever truncated, since
    # refining from a truncated set would be unsound.
    def walk(node, path, cuts_above: set[int], ancestors: dict[int, tuple],
             builder: _OrderBuilder, states: list[tuple[dict, tuple]],
             complete: bool = True):
        if node.nid in seen:
            report.error(path, node.nid, "duplicate node id")
        seen.add(node.nid)
        order = builder.snapshot()
        if isinstance(node, GccCut):
            _check_agent(report, path, node.nid, node.agent, t.agents)
            check_pieces(path, node, cuts_above, order)
            for _, allocated in states:
                for piece in node.pieces:
                    if overlap_allocated(piece, allocated, order):
                        report.error(
                            path, node.nid,
                            f"cut offered piece {piece} that may already be allocated",
                        )
                        break
                else:
                    continue
                break
            sub = _OrderBuilder()
            sub.refs = list(builder.refs)
            sub.le = set(builder.le)
            z = at(node.nid)
            sub.add_le(ORIGIN, z)
            sub.add_le(z, END)
            if len(node.pieces) == 1:
                sub.add_le(node.pieces[0][0], z)
                sub.add_le(z, node.pieces[0][1])
            else:
                # Sound common bounds across all offered pieces.
                for ref in list(sub.refs):
                    if all(order.le_or_eq(ref, p[0]) for p in node.pieces):
                        sub.add_le(ref, z)
                    if all(order.le_or_eq(p[1], ref) for p in node.pieces):
                        sub.add_le(z, ref)
            new_states = states
            if len(node.pieces) > 1 and len(states) * len(node.pieces) <= _SYMBOLIC_STATE_CAP:
                new_states = [
                    ({**picks, node.nid: j}, allocated)
                    for picks, allocated in states
                    for j in range(len(node.pieces))
                ]
            walk(node.child, path + "/0", cuts_above | {node.nid},
                 {**ancestors, node.nid: ("cut", node)}, sub, new_states,
                 complete)
        elif isinstance(node, GccChoose):
            _check_agent(report, path, node.nid, node.agent, t.agents)
            check_pieces(path, node, cuts_above, order)
            for _, allocated in states:
                for piece in node.pieces:
                    if overlap_allocated(piece, allocated, order):
                        report.error(
                            path, node.nid,
                            f"choose offers piece {piece} that may already be allocated",
                        )
                        break
                else:
                    continue
                break
            new_states = []
            truncated = False
            for picks, allocated in states:
                for j, piece in enumerate(node.pieces):
                    new_states.append(({**picks, node.nid: j}, allocated + (piece,)))
                    if len(new_states) > _SYMBOLIC_STATE_CAP:
                        break
                if len(new_states) > _SYMBOLIC_STATE_CAP:
                    report.warn(path, node.nid, "symbolic state cap hit; later"
                                " re-allocation checks are partial")
                    new_states = new_states[:_SYMBOLIC_STATE_CAP]
                    truncated = True
                    break
            walk(node.child, path + "/0", cuts_above,
                 {**ancestors, node.nid: ("choose", node)}, builder,
                 new_states, complete and not truncated)
        elif isinstance(node, GccIfElse):
            if not node.branches:
                report.error(path, node.nid, "if-else with no branches")
                return
            if not isinstance(node.branches[-1][0], Else):
                report.error(path, node.nid, "last branch must be a catch-all else")
            for k, (cond, _) in enumerate(node.branches[:-1]):
                if isinstance(cond, Else):
                    report.warn(path, node.nid, f"else in branch {k} shadows later branches")
            for cond, _ in node.branches:
                for kind, ref_nid in _condition_nodes(cond):
                    info = ancestors.get(ref_nid)
                    if info is None or info[0] != kind:
                        report.error(
                            path, node.nid,
                            f"condition references non-ancestor {kind} node {ref_nid}",
                        )
                for ref in _condition_refs(cond):
                    if ref.kind == "cut" and ref.cut not in cuts_above:
                        report.error(path, node.nid, f"condition ref {ref} is not an ancestor cut")
            for k, (cond, child) in enumerate(node.branches):
                branch_states = []
                for picks, allocated in states:
                    verdict = _eval_condition_static(cond, picks, order)
                    prior_taken = any(
                        _eval_condition_static(prev, picks, order) is True
                        for prev, _ in node.branches[:k]
                    )
                    if verdict is not False and not prior_taken:
                        branch_states.append((picks, allocated))
                if not branch_states:
                    # Dead branch for every symbolic state: still check its
                    # structure, with a pristine state.
                    branch_states = [({}, ())]
                refined = _OrderBuilder()
                refined.refs = list(builder.refs)
                refined.le = set(builder.le)
                _refine_with_condition(refined, cond, ancestors)
                if complete and branch_states is not states:
                    # Every surviving state may agree on where an ancestor
                    # cut landed (e.g. in a final else branch); that pins the
                    # cut's bounds just as a positive condition would.
                    for anc_nid, info in ancestors.items():
                        if info[0] != "cut" or len(info[1].pieces) < 2:
                            continue
                        picks_seen = {picks.get(anc_nid) for picks, _ in branch_states}
                        if len(picks_seen) == 1:
                            j = picks_seen.pop()
                            if j is not None:
                                lo, hi = info[1].pieces[j]
                                refined.add_le(lo, at(anc_nid))
                                refined.add_le(at(anc_nid), hi)
                walk(child, f"{path}/{k}", cuts_above, ancestors, refined,
                     branch_states, complete)
        elif isinstance(node, GccLeaf):
            for picks, allocated in states:
                if not _covers_whole_cake(allocated, order):
                    report.warn(
                        path, node.nid,
                        "leaf may be reached with unallocated cake remaining",
                    )
                    break
        else:
            report.error(path, node.nid, f"unknown node type {type(node).__name__}")

    walk(t.root, "root", set(), {}, _OrderBuilder(), [({}, ())])
    return report


def _covers_whole_cake(allocated: tuple[Piece, ...], order: PartialOrder) -> bool:
    """Greedy chain check: allocated pieces provably tile origin..end."""
    remaining = list(allocated)
    cursor = ORIGIN
    while True:
        if cursor == END or order.compare(cursor, END) == Order.EQ:
            return True
        for i, (lo, hi) in enumerate(remaining):
            if lo == cursor or order.compare(lo, cursor) == Order.EQ:
                cursor = hi
                remaining.pop(i)
                break
        else:
            return False


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class ProtocolStats:
    nodes: int
    cuts: int
    chooses: int
    leaves: int
    depth: int
    max_branching: int

    def to_json(self):
        return {
            "nodes": self.nodes,
            "cuts": self.cuts,
            "chooses": self.chooses,
            "leaves": self.leaves,
            "depth": self.depth,
            "max_branching": self.max_branching,
        }


def stats(p: Protocol) -> ProtocolStats:
    """Exact node counts; depth counts nodes along the longest path."""
    cuts = chooses = leaves = nodes = 0
    branching = 0
    for node in iter_nodes(p):
        nodes += 1
        if isinstance(node, (BcCut, DagCut, ExtCut, GccCut)):
            cuts += 1
        elif isinstance(node, (BcChoose, DagChoose, ExtChoose, GccChoose)):
            chooses += 1
        elif isinstance(node, (BcLeaf, DagLeaf, ExtLeaf, GccLeaf)):
            leaves += 1
        if isinstance(p, BcDag):
            width = len(node.children) if isinstance(node, DagChoose) else (
                1 if isinstance(node, DagCut) else 0
            )
        else:
            width = len(children_of(node))
        branching = max(branching, width)

    if isinstance(p, BcDag):
        memo: dict[int, int] = {}

        def height(nid: int) -> int:
            if nid in memo:
                return memo[nid]
            node = p.nodes[nid]
            kids = (node.child,) if isinstance(node, DagCut) else (
                node.children if isinstance(node, DagChoose) else ()
            )
            memo[nid] = 1 + (max(map(height, kids)) if kids else 0)
            return memo[nid]

        depth = height(p.root)
    else:
        def tree_height(node) -> int:
            kids = children_of(node)
            return 1 + (max(map(tree_height, kids)) if kids else 0)

        depth = tree_height(p.root)
    return ProtocolStats(nodes, cuts, chooses, leaves, depth, branching)


# ---------------------------------------------------------------------------
# Structural equality (node ids matched by position, not value)


def structurally_equal(p1: Protocol, p2: Protocol) -> bool:
    """True when the protocols are isomorphic, ignoring raw node-id values."""
    if type(p1) is not type(p2) or p1.agents != p2.agents:
        return False
    pairing: dict[int, int] = {}

    def ref_eq(a: CutRef, b: CutRef) -> bool:
        if a.kind != b.kind:
            return False
        if a.kind != "cut":
            return True
        return pairing.get(a.cut) == b.cut

    def cond_eq(a: Condition, b: Condition) -> bool:
        if type(a) is not type(b):
            return False
        if isinstance(a, Less):
            return ref_eq(a.left, b.left) and ref_eq(a.right, b.right)
        if isinstance(a, (ChoseAt, CutInAt)):
            return pairing.get(a.node) == b.node and a.index == b.index
        if isinstance(a, Else):
            return True
        if isinstance(a, (And, Or)):
            return len(a.parts) == len(b.parts) and all(
                cond_eq(x, y) for x, y in zip(a.parts, b.parts)
            )
        if isinstance(a, Not):
            return cond_eq(a.part, b.part)
        return False

    def walk(a, b) -> bool:
        if type(a) is not type(b):
            return False
        pairing[a.nid] = b.nid
        if isinstance(a, BcCut):
            return a.agent == b.agent and a.piece == b.piece and walk(a.child, b.child)
        if isinstance(a, BcChoose) or isinstance(a, ExtChoose):
            return (
                a.agent == b.agent
                and len(a.children) == len(b.children)
                and all(walk(x, y) for x, y in zip(a.children, b.children))
            )
        if isinstance(a, BcLeaf):
            return a.assign == b.assign
        if isinstance(a, ExtCut):
            return (
                a.agent == b.agent
                and ref_eq(a.left, b.left)
                and ref_eq(a.right, b.right)
                and walk(a.child, b.child)
            )
        if isinstance(a, ExtLeaf):
            return len(a.segments) == len(b.segments) and all(
                sa.agent == sb.agent and ref_eq(sa.left, sb.left) and ref_eq(sa.right, sb.right)
                for sa, sb in zip(a.segments, b.segments)
            )
        if isinstance(a, (GccCut, GccChoose)):
            return (
                a.agent == b.agent
                and len(a.pieces) == len(b.pieces)
                and all(
                    ref_eq(pa[0], pb[0]) and ref_eq(pa[1], pb[1])
                    for pa, pb in zip(a.pieces, b.pieces)
                )
                and walk(a.child, b.child)
            )
        if isinstance(a, GccIfElse):
            return len(a.branches) == len(b.branches) and all(
                cond_eq(ca, cb) and walk(xa, xb)
                for (ca, xa), (cb, xb) in zip(a.branches, b.branches)
            )
        if isinstance(a, GccLeaf):
            return True
        return False

    if isinstance(p1, BcDag):
        def walk_dag(na: int, nb: int) -> bool:
            if na in pairing:
                return pairing[na] == nb
            pairing[na] = nb
            a, b = p1.nodes[na], p2.nodes[nb]
            if type(a) is not type(b):
                return False
            if isinstance(a, DagCut):
                return a.agent == b.agent and a.piece == b.piece and walk_dag(a.child, b.child)
            if isinstance(a, DagChoose):
                return (
                    a.agent == b.agent
                    and len(a.children) == len(b.children)
                    and all(walk_dag(x, y) for x, y in zip(a.children, b.children))
                )
            return a.assign == b.assign

        return walk_dag(p1.root, p2.root)

    return walk(p1.root, p2.root)


# ---------------------------------------------------------------------------
# Deterministic renumbering (preorder ids)


def renumber(p: Protocol) -> tuple[Protocol, dict[int, int]]:
    """Rewrite node ids to preorder positions; returns (protocol, old->new)."""
    mapping: dict[int, int] = {}
    gen = IdGen()

    def fix_ref(ref: CutRef) -> CutRef:
        return at(mapping[ref.cut]) if ref.kind == "cut" else ref

    def fix_cond(c: Condition) -> Condition:
        if isinstance(c, Less):
            return Less(fix_ref(c.left), fix_ref(c.right))
        if isinstance(c, ChoseAt):
            return ChoseAt(mapping[c.node], c.index)
        if isinstance(c, CutInAt):
            return CutInAt(mapping[c.node], c.index)
        if isinstance(c, And):
            return And(tuple(fix_cond(x) for x in c.parts))
        if isinstance(c, Or):
            return Or(tuple(fix_cond(x) for x in c.parts))
        if isinstance(c, Not):
            return Not(fix_cond(c.part))
        return c

    def walk(node):
        mapping[node.nid] = gen()
        nid = mapping[node.nid]
        if isinstance(node, BcCut):
            return BcCut(nid, node.agent, node.piece, walk(node.child))
        if isinstance(node, BcChoose):
            return BcChoose(nid, node.agent, tuple(walk(c) for c in node.children))
        if isinstance(node, BcLeaf):
            return BcLeaf(nid, node.assign)
        if isinstance(node, ExtCut):
            left, right = fix_ref(node.left), fix_ref(node.right)
            return ExtCut(nid, node.agent, left, right, walk(node.child))
        if isinstance(node, ExtChoose):
            return ExtChoose(nid, node.agent, tuple(walk(c) for c in node.children))
        if isinstance(node, ExtLeaf):
            return ExtLeaf(
                nid,
                tuple(
                    ExtSegment(fix_ref(s.left), fix_ref(s.right), s.agent)
                    for s in node.segments
                ),
            )
        if isinstance(node, GccCut):
            pieces = tuple((fix_ref(a), fix_ref(b)) for a, b in node.pieces)
            return GccCut(nid, node.agent, pieces, walk(node.child))
        if isinstance(node, GccChoose):
            pieces = tuple((fix_ref(a), fix_ref(b)) for a, b in node.pieces)
            return GccChoose(nid, node.agent, pieces, walk(node.child))
        if isinstance(node, GccIfElse):
            return GccIfElse(
                nid, tuple((fix_cond(c), walk(ch)) for c, ch in node.branches)
            )
        if isinstance(node, GccLeaf):
            return GccLeaf(nid)
        raise DomainError(f"unknown node type {type(node).__name__}")

    if isinstance(p, BcDag):
        order: list[int] = []
        seen: set[int] = set()

        def visit(nid):
            if nid in seen:
                return
            seen.add(nid)
            order.append(nid)
            node = p.nodes[nid]
            kids = (node.child,) if isinstance(node, DagCut) else (
                node.children if isinstance(node, DagChoose) else ()
            )
            for kid in kids:
                visit(kid)

        visit(p.root)
        mapping = {old: i for i, old in enumerate(order)}
        new_nodes: dict[int, DagNode] = {}
        for old in order:
            node = p.nodes[old]
            nid = mapping[old]
            if isinstance(node, DagCut):
                new_nodes[nid] = DagCut(nid, node.agent, node.piece, mapping[node.child])
            elif isinstance(node, DagChoose):
                new_nodes[nid] = DagChoose(
                    nid, node.agent, tuple(mapping[c] for c in node.children)
                )
            else:
                new_nodes[nid] = DagLeaf(nid, node.assign)
        return BcDag(p.agents, mapping[p.root], new_nodes), mapping

    # Refs and conditions point to ancestors, which preorder visits first.
    root = walk(p.root)
    if isinstance(p, BcTree):
        return BcTree(p.agents, root), mapping
    if isinstance(p, ExtBcTree):
        return ExtBcTree(p.agents, root), mapping
    if isinstance(p, GccTree):
        return GccTree(p.agents, root), mapping
    raise DomainError(f"unknown protocol type {type(p).__name__}")
