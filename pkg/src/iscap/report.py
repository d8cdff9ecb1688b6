"""Propagation reports (Markdown, CSV) and argument-graph export (DOT, JSON)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Optional

from .case import SafetyCase
from .propagation import PropagationResult, leaf_id, po_mr_id, po_occ_id


def fmt(x: float) -> str:
    """Three significant figures; small values as ``2.20e-7``."""
    if x == 0.0 or abs(x) >= 1e-3:
        return f"{x:.3g}"
    mant, exp = f"{x:.2e}".split("e")
    return f"{mant}e{int(exp)}"


# --------------------------------------------------------------- report


@dataclass(frozen=True)
class ReportRow:
    claim: str
    level: int
    formula: str
    inputs: tuple
    bound: float
    provenance: str


@dataclass(frozen=True)
class Report:
    rows: tuple
    warnings: tuple
    top: tuple               # one expression string per severity level
    top_values: tuple
    residual_symbolic: bool
    component: str = ""
    task: str = ""

    def bound(self, claim: str, level: int = 0) -> float:
        for r in self.rows:
            if r.claim == claim and r.level == level:
                return r.bound
        raise KeyError((claim, level))


def top_expression(value: float, residual_symbolic: bool) -> str:
    return f"γ_res + {fmt(value)}" if residual_symbolic else fmt(value)


def build_report(case: SafetyCase, result: PropagationResult) -> Report:
    rows = tuple(
        ReportRow(s.claim, s.level, s.formula, s.inputs, s.output,
                  result.provenance.get(s.claim, "computed"))
        for s in result.trace
    )
    top_vals = result.top
    return Report(
        rows=rows,
        warnings=tuple(result.warnings),
        top=tuple(top_expression(v, result.residual_symbolic) for v in top_vals),
        top_values=tuple(top_vals),
        residual_symbolic=result.residual_symbolic,
        component=case.component_name,
        task=case.task_name,
    )


def _inputs(xs: tuple) -> str:
    return ", ".join(fmt(x) for x in xs)


def render_markdown(rep: Report) -> str:
    out = [f"# Bound propagation: {rep.component} / {rep.task}", ""]
    multi = len(rep.top) > 1
    for lv, expr in enumerate(rep.top):
        tag = f" (severity {lv})" if multi else ""
        out.append(f"**γ_C{tag} = {expr}**")
    out += ["", "| claim | level | formula | inputs | bound | provenance |",
            "|---|---|---|---|---|---|"]
    for r in rep.rows:
        out.append(f"| {r.claim} | {r.level} | {r.formula} | {_inputs(r.inputs)} | "
                   f"{fmt(r.bound)} | {r.provenance} |")
    if rep.warnings:
        out += ["", "## Warnings", ""] + [f"- {w}" for w in rep.warnings]
    return "\n".join(out) + "\n"


def render_csv(rep: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["claim", "level", "formula", "inputs", "bound", "provenance"])
    for r in rep.rows:
        w.writerow([r.claim, r.level, r.formula, " ".join(repr(x) for x in r.inputs),
                    repr(r.bound), r.provenance])
    for lv, expr in enumerate(rep.top):
        w.writerow(["G-C(expression)", lv, "", "", expr, ""])
    return buf.getvalue()


def render_report(rep: Report, kind: str = "md") -> str:
    if kind == "md":
        return render_markdown(rep)
    if kind == "csv":
        return render_csv(rep)
    raise ValueError(f"unknown report format {kind!r}")


# ------------------------------------------------------------------ GSN

GOAL, STRATEGY, SOLUTION, CONTEXT, ASSUMPTION, AWAY_GOAL = (
    "goal", "strategy", "solution", "context", "assumption", "away_goal")
SUPPORTED_BY = "supported_by"
IN_CONTEXT_OF = "in_context_of"


@dataclass
class GsnNode:
    id: str
    kind: str
    text: str
    bound: Optional[tuple] = None
    module: Optional[str] = None   # owning module for away goals


@dataclass
class GsnGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)   # (parent, child, relation)
    root: str = "G-C"

    def add(self, node: GsnNode, parent: Optional[str] = None,
            rel: str = SUPPORTED_BY) -> GsnNode:
        self.nodes.append(node)
        if parent is not None:
            self.edges.append((parent, node.id, rel))
        return node

    def node(self, nid: str) -> GsnNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def is_acyclic(self) -> bool:
        ts = TopologicalSorter({n.id: set() for n in self.nodes})
        for a, b, _ in self.edges:
            ts.add(b, a)
        try:
            tuple(ts.static_order())
        except CycleError:
            return False
        return True

    def roots(self) -> list:
        children = {b for _, b, _ in self.edges}
        return [n.id for n in self.nodes if n.id not in children]


def build_gsn(case: SafetyCase, result: Optional[PropagationResult] = None) -> GsnGraph:
    """Argument graph for ``case``; bounds are attached when ``result`` is given."""
    b = (lambda cid: result.bounds.get(cid)) if result is not None else (lambda cid: None)
    g = GsnGraph()
    g.add(GsnNode("G-C", GOAL,
                  f"{case.component_name} contributes at most γ_C to the {case.task_name} "
                  f"failure rate", b("G-C")))
    if not case.hmps:
        return g
    g.add(GsnNode("Ctx-Sys", CONTEXT, f"perception component {case.component_name}, "
                  f"task {case.task_name}"), "G-C", IN_CONTEXT_OF)
    g.add(GsnNode("S-HMP", STRATEGY, "argue over disjoint hazardous misperception patterns"),
          "G-C")
    g.add(GsnNode("A-Disjoint", ASSUMPTION, "HMPs are pairwise disjoint"),
          "S-HMP", IN_CONTEXT_OF)
    g.add(GsnNode("G-Res", GOAL, "residual contribution outside the identified HMPs",
                  b("G-Res")), "S-HMP")
    g.add(GsnNode("Sn-Res", SOLUTION, "residual risk analysis"), "G-Res")
    for h in case.hmps:
        i = h.id
        g.add(GsnNode(f"G-HMP_{i}", GOAL, f"crashes in {h.hbss.label} caused by "
                      f"{h.mp.description or 'the misperception pattern'}", b(f"G-HMP_{i}")),
              "S-HMP")
        g.add(GsnNode(f"S-HMP_{i}-Struct", STRATEGY,
                      "chain rule over crash rate, MP rate and HBSS exposure"), f"G-HMP_{i}")
        s = f"S-HMP_{i}-Struct"
        g.add(GsnNode(f"G-MP_{i}-CR", GOAL, "crash rate given the MP in the HBSS",
                      b(f"G-MP_{i}-CR")), s)
        g.add(GsnNode(f"Sn-MP_{i}-CR", SOLUTION, "crash-rate analysis"), f"G-MP_{i}-CR")
        g.add(GsnNode(f"G-HBSS_{i}", AWAY_GOAL, f"exposure of {h.hbss.label}",
                      b(f"G-HBSS_{i}"), module="ADS"), s)
        g.add(GsnNode(f"G-MP_{i}-N", GOAL, "only the MP causes the hazardous behaviour"), s)
        ev = h.necessity_record
        g.add(GsnNode(f"Sn-MP_{i}-N", SOLUTION,
                      f"{ev.kind}: {ev.summary} ({ev.status})" if ev else "necessity analysis"),
              f"G-MP_{i}-N")
        g.add(GsnNode(f"G-MP_{i}-MR", GOAL, "MP rate within the HBSS", b(f"G-MP_{i}-MR")), s)
        g.add(GsnNode(f"S-MP_{i}-PO", STRATEGY, "weighted sum over perception-only conditions"),
              f"G-MP_{i}-MR")
        for po in h.po_partition:
            j = po.id
            occ = po_occ_id(i, j)
            g.add(GsnNode(occ, GOAL, f"occurrence of PO {j} within the HBSS", b(occ)),
                  f"S-MP_{i}-PO")
            g.add(GsnNode(f"Sn-PO_{i},{j}", SOLUTION, "PO occurrence estimate"), occ)
            mr = po_mr_id(i, j)
            g.add(GsnNode(mr, GOAL, f"MP rate under PO {j}", b(mr)), f"S-MP_{i}-PO")
            g.add(GsnNode(f"S-PO_{i},{j}-fMP", STRATEGY, "linking expression over fMP rates"), mr)
            lk = po.linking
            g.add(GsnNode(f"Ctx-Link_{i},{j}", CONTEXT,
                          f"{lk.kind}" + (f" n={lk.n_max}" if lk.n_max is not None else "")),
                  f"S-PO_{i},{j}-fMP", IN_CONTEXT_OF)
            for ref in h.mp.fmp_refs:
                lid = leaf_id(i, j, ref.fmp_id)
                g.add(GsnNode(lid, AWAY_GOAL, f"rate of fMP {ref.fmp_id} under PO {j}",
                              b(lid), module=f"{case.component_name}-unit"),
                      f"S-PO_{i},{j}-fMP")
    return g


def _label(n: GsnNode) -> str:
    s = f"{n.id}\\n{n.text}"
    if n.bound:
        s += "\\nγ ≤ " + ", ".join(fmt(v) for v in n.bound)
    if n.module:
        s += f"\\n[{n.module}]"
    return s.replace('"', '\\"')


_DOT_SHAPE = {
    GOAL: 'shape=box',
    AWAY_GOAL: 'shape=box, style=dashed',
    STRATEGY: 'shape=parallelogram',
    SOLUTION: 'shape=circle',
    CONTEXT: 'shape=box, style=rounded',
    ASSUMPTION: 'shape=ellipse',
}


def to_dot(g: GsnGraph) -> str:
    out = ["digraph gsn {", "  rankdir=TB;"]
    for n in g.nodes:
        out.append(f'  "{n.id}" [{_DOT_SHAPE[n.kind]}, label="{_label(n)}"];')
    for a, b, rel in g.edges:
        style = " [arrowhead=empty]" if rel == IN_CONTEXT_OF else ""
        out.append(f'  "{a}" -> "{b}"{style};')
    out.append("}")
    return "\n".join(out) + "\n"


def to_json(g: GsnGraph) -> str:
    doc = {
        "root": g.root,
        "nodes": [{"id": n.id, "kind": n.kind, "text": n.text,
                   "bound": list(n.bound) if n.bound else None, "module": n.module}
                  for n in g.nodes],
        "edges": [{"from": a, "to": b, "relation": r} for a, b, r in g.edges],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


GSN_FORMATS = {"dot": to_dot, "json": to_json}


def export_gsn(g: GsnGraph, kind: str = "dot") -> str:
    if kind not in GSN_FORMATS:
        raise ValueError(f"unknown graph format {kind!r}; choose dot or json")
    return GSN_FORMATS[kind](g)
