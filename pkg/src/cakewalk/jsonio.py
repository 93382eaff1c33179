"""JSON wire formats for protocols, valuations, traces, and reports.

Field order is fixed so serialized protocols are byte-stable golden files.
Node ids are renumbered to preorder on write; readers keep the stored ids.
"""

from __future__ import annotations

from .errors import DomainError
from .ir import (
    And, BcChoose, BcCut, BcDag, BcLeaf, BcTree, ChoseAt, Condition,
    CutInAt, CutRef, DagChoose, DagCut, DagLeaf, ELSE, END, Else, ExtBcTree,
    ExtChoose, ExtCut, ExtLeaf, ExtSegment, GccChoose, GccCut, GccIfElse,
    GccLeaf, GccTree, Less, Not, Or, ORIGIN, Protocol, at, renumber,
)
from .valuation import Valuation


def _ref_json(ref: CutRef):
    return ref.kind if ref.kind != "cut" else {"cut": ref.cut}


def _ref_from(obj) -> CutRef:
    if obj == "origin":
        return ORIGIN
    if obj == "end":
        return END
    if isinstance(obj, dict) and "cut" in obj:
        return at(int(obj["cut"]))
    raise DomainError(f"malformed cut ref {obj!r}")


def _cond_json(cond: Condition):
    if isinstance(cond, Else):
        return {"op": "else"}
    if isinstance(cond, Less):
        return {"op": "less", "left": _ref_json(cond.left), "right": _ref_json(cond.right)}
    if isinstance(cond, ChoseAt):
        return {"op": "chose-at", "node": cond.node, "index": cond.index}
    if isinstance(cond, CutInAt):
        return {"op": "cut-in-at", "node": cond.node, "index": cond.index}
    if isinstance(cond, And):
        return {"op": "and", "parts": [_cond_json(c) for c in cond.parts]}
    if isinstance(cond, Or):
        return {"op": "or", "parts": [_cond_json(c) for c in cond.parts]}
    if isinstance(cond, Not):
        return {"op": "not", "part": _cond_json(cond.part)}
    raise DomainError(f"unknown condition {type(cond).__name__}")


def _cond_from(obj) -> Condition:
    op = obj.get("op")
    if op == "else":
        return ELSE
    if op == "less":
        return Less(_ref_from(obj["left"]), _ref_from(obj["right"]))
    if op == "chose-at":
        return ChoseAt(int(obj["node"]), int(obj["index"]))
    if op == "cut-in-at":
        return CutInAt(int(obj["node"]), int(obj["index"]))
    if op == "and":
        return And(tuple(_cond_from(c) for c in obj["parts"]))
    if op == "or":
        return Or(tuple(_cond_from(c) for c in obj["parts"]))
    if op == "not":
        return Not(_cond_from(obj["part"]))
    raise DomainError(f"unknown condition op {op!r}")


def protocol_to_json(p: Protocol) -> dict:
    p, _ = renumber(p)

    def bc_node(node):
        if isinstance(node, BcCut):
            return {"id": node.nid, "kind": "cut", "agent": node.agent,
                    "piece": node.piece, "child": bc_node(node.child)}
        if isinstance(node, BcChoose):
            return {"id": node.nid, "kind": "choose", "agent": node.agent,
                    "children": [bc_node(c) for c in node.children]}
        return {"id": node.nid, "kind": "leaf", "assign": list(node.assign)}

    def ext_node(node):
        if isinstance(node, ExtCut):
            return {"id": node.nid, "kind": "cut", "agent": node.agent,
                    "left": _ref_json(node.left), "right": _ref_json(node.right),
                    "child": ext_node(node.child)}
        if isinstance(node, ExtChoose):
            return {"id": node.nid, "kind": "choose", "agent": node.agent,
                    "children": [ext_node(c) for c in node.children]}
        return {"id": node.nid, "kind": "leaf", "segments": [
            {"left": _ref_json(s.left), "right": _ref_json(s.right), "agent": s.agent}
            for s in node.segments
        ]}

    def gcc_node(node):
        if isinstance(node, (GccCut, GccChoose)):
            return {
                "id": node.nid,
                "kind": "cut" if isinstance(node, GccCut) else "choose",
                "agent": node.agent,
                "pieces": [
                    {"left": _ref_json(lo), "right": _ref_json(hi)}
                    for lo, hi in node.pieces
                ],
                "child": gcc_node(node.child),
            }
        if isinstance(node, GccIfElse):
            return {"id": node.nid, "kind": "ifelse", "branches": [
                {"condition": _cond_json(c), "child": gcc_node(ch)}
                for c, ch in node.branches
            ]}
        return {"id": node.nid, "kind": "leaf"}

    if isinstance(p, BcTree):
        return {"model": "bc", "agents": p.agents, "root": bc_node(p.root)}
    if isinstance(p, ExtBcTree):
        return {"model": "extbc", "agents": p.agents, "root": ext_node(p.root)}
    if isinstance(p, GccTree):
        return {"model": "gcc", "agents": p.agents, "root": gcc_node(p.root)}
    if isinstance(p, BcDag):
        nodes = []
        for nid in sorted(p.nodes):
            node = p.nodes[nid]
            if isinstance(node, DagCut):
                nodes.append({"id": nid, "kind": "cut", "agent": node.agent,
                              "piece": node.piece, "child": node.child})
            elif isinstance(node, DagChoose):
                nodes.append({"id": nid, "kind": "choose", "agent": node.agent,
                              "children": list(node.children)})
            else:
                nodes.append({"id": nid, "kind": "leaf", "assign": list(node.assign)})
        return {"model": "bcdag", "agents": p.agents, "root": p.root, "nodes": nodes}
    raise DomainError(f"unknown protocol type {type(p).__name__}")


def protocol_from_json(obj: dict) -> Protocol:
    try:
        model = obj["model"]
        agents = int(obj["agents"])
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed protocol object: {exc}")

    def bc_node(o):
        kind = o["kind"]
        if kind == "cut":
            return BcCut(int(o["id"]), int(o["agent"]), int(o["piece"]),
                         bc_node(o["child"]))
        if kind == "choose":
            return BcChoose(int(o["id"]), int(o["agent"]),
                            tuple(bc_node(c) for c in o["children"]))
        if kind == "leaf":
            return BcLeaf(int(o["id"]), tuple(int(a) for a in o["assign"]))
        raise DomainError(f"unknown bc node kind {kind!r}")

    def ext_node(o):
        kind = o["kind"]
        if kind == "cut":
            return ExtCut(int(o["id"]), int(o["agent"]), _ref_from(o["left"]),
                          _ref_from(o["right"]), ext_node(o["child"]))
        if kind == "choose":
            return ExtChoose(int(o["id"]), int(o["agent"]),
                             tuple(ext_node(c) for c in o["children"]))
        if kind == "leaf":
            return ExtLeaf(int(o["id"]), tuple(
                ExtSegment(_ref_from(s["left"]), _ref_from(s["right"]),
                           int(s["agent"]))
                for s in o["segments"]
            ))
        raise DomainError(f"unknown extbc node kind {kind!r}")

    def gcc_node(o):
        kind = o["kind"]
        if kind in ("cut", "choose"):
            pieces = tuple(
                (_ref_from(s["left"]), _ref_from(s["right"])) for s in o["pieces"]
            )
            cls = GccCut if kind == "cut" else GccChoose
            return cls(int(o["id"]), int(o["agent"]), pieces, gcc_node(o["child"]))
        if kind == "ifelse":
            return GccIfElse(int(o["id"]), tuple(
                (_cond_from(b["condition"]), gcc_node(b["child"]))
                for b in o["branches"]
            ))
        if kind == "leaf":
            return GccLeaf(int(o["id"]))
        raise DomainError(f"unknown gcc node kind {kind!r}")

    if model == "bc":
        return BcTree(agents, bc_node(obj["root"]))
    if model == "extbc":
        return ExtBcTree(agents, ext_node(obj["root"]))
    if model == "gcc":
        return GccTree(agents, gcc_node(obj["root"]))
    if model == "bcdag":
        nodes = {}
        for o in obj["nodes"]:
            nid, kind = int(o["id"]), o["kind"]
            if kind == "cut":
                nodes[nid] = DagCut(nid, int(o["agent"]), int(o["piece"]),
                                    int(o["child"]))
            elif kind == "choose":
                nodes[nid] = DagChoose(nid, int(o["agent"]),
                                       tuple(int(c) for c in o["children"]))
            elif kind == "leaf":
                nodes[nid] = DagLeaf(nid, tuple(int(a) for a in o["assign"]))
            else:
                raise DomainError(f"unknown dag node kind {kind!r}")
        return BcDag(agents, int(obj["root"]), nodes)
    raise DomainError(f"unknown protocol model {model!r}")


def valuations_to_json(vals) -> dict:
    return {"valuations": [v.to_json() for v in vals]}


def valuations_from_json(obj) -> list[Valuation]:
    if isinstance(obj, dict):
        obj = obj.get("valuations", [])
    if not isinstance(obj, list):
        raise DomainError("expected a list of valuations")
    return [Valuation.from_json(v) for v in obj]
