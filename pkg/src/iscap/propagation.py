"""Bottom-up bound propagation and top-down budget allocation.

Per HMP ``i`` and severity level, :func:`propagate` computes

* ``γ_{i,j,MR} = F_{i,j}(γ_{i,j,k})`` for each PO ``j`` (summed over fMPs
  when the pattern references more than one),
* ``γ_{i,Nom,PO↑} = 1 - Σ_{j≠Nom} γ_{i,j,PO↓}``,
* ``γ_{i,MR} = Σ_j γ_{i,j,MR} γ_{i,j,PO↑}``,
* ``γ_i = γ_{i,CR} γ_{i,MR} γ_{i,HBSS}``,
* ``γ_C = γ_res + Σ_i γ_i``.

Every arithmetic step is recorded as a :class:`TraceStep` whose formula
name indexes :data:`FORMULAS`, so :func:`replay` can rebuild each
output from its recorded inputs exactly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from . import stats
from .case import (ALL_OR_NOTHING, CUSTOM_TAIL, INDEPENDENT_BINOMIAL, Bound, FmpClaim,
                   HmpEntry, LinkingExprRef, PoEntry, SafetyCase, with_fmp_bounds)

log = logging.getLogger(__name__)

DEFAULT_Q = 99.0


class PropagationError(ValueError):
    pass


class InfeasibleAllocation(ValueError):
    pass


# ------------------------------------------------------------- formulas


def _custom_tail(p: float, *flat: float) -> float:
    pts = list(zip(flat[0::2], flat[1::2]))
    if p <= pts[0][0]:
        return pts[0][1]
    for (p0, b0), (p1, b1) in zip(pts, pts[1:]):
        if p <= p1:
            if p1 == p0:
                return max(b0, b1)
            return b0 + (b1 - b0) * (p - p0) / (p1 - p0)
    return pts[-1][1] if pts[-1][0] >= 1.0 else 1.0


def _product(*xs: float) -> float:
    out = 1.0
    for x in xs:
        out *= x
    return out


FORMULAS = {
    "asserted": lambda v: v,
    "normal_upper": lambda m, n, z: m + z * math.sqrt(m * (1.0 - m) / n),
    "exact_upper": lambda m, n, q: stats.clopper_pearson(m, int(n), q, stats.UPPER),
    "binomial_tail": lambda n, k, p: stats.binomial_tail(int(n), int(k), p),
    "identity": lambda p: p,
    "custom_tail": _custom_tail,
    "union_sum": lambda *xs: math.fsum(xs),
    "nominal_complement": lambda *lows: 1.0 - math.fsum(lows),
    "weighted_sum": lambda *xs: math.fsum(a * b for a, b in zip(xs[0::2], xs[1::2])),
    "product": _product,
    "sum": lambda *xs: math.fsum(xs),
}


@dataclass(frozen=True)
class TraceStep:
    claim: str
    level: int
    formula: str
    inputs: tuple
    output: float
    clamped: bool = False


def _clip(x: float) -> float:
    return min(1.0, max(0.0, x))


def replay_step(s: TraceStep) -> float:
    return _clip(FORMULAS[s.formula](*s.inputs))


def replay(trace: Sequence[TraceStep]) -> dict:
    """Recompute every step from its inputs; returns ``(claim, level) -> value``."""
    return {(s.claim, s.level): replay_step(s) for s in trace}


def _step(claim: str, level: int, formula: str, *inputs: float) -> TraceStep:
    raw = FORMULAS[formula](*inputs)
    out = _clip(raw)
    return TraceStep(claim, level, formula, tuple(inputs), out, clamped=raw > 1.0)


@dataclass(frozen=True)
class PropagationResult:
    bounds: dict
    trace: tuple
    warnings: tuple = ()
    residual_symbolic: bool = False
    provenance: dict = field(default_factory=dict, compare=False)
    recomputed: frozenset = field(default=frozenset(), compare=False)
    blocks: dict = field(default_factory=dict, compare=False, repr=False)

    def value(self, claim: str, level: int = 0) -> float:
        return self.bounds[claim][level]

    @property
    def top(self) -> tuple:
        return self.bounds["G-C"]


# ------------------------------------------------------------ claim ids


def leaf_id(h: str, p: str, k: str) -> str:
    return f"G-fMP_{h},{p},{k}-MR"


def po_mr_id(h: str, p: str) -> str:
    return f"G-PO_{h},{p}-MR"


def po_occ_id(h: str, p: str) -> str:
    return f"G-PO_{h},{p}"


# --------------------------------------------------------------- leaves


def link_k_min(link: LinkingExprRef, threshold: int) -> int:
    return link.k_min if link.k_min is not None else threshold


def link_step(claim: str, level: int, link: LinkingExprRef, threshold: int, p: float) -> TraceStep:
    if link.kind == INDEPENDENT_BINOMIAL:
        return _step(claim, level, "binomial_tail", float(link.n_max),
                     float(link_k_min(link, threshold)), p)
    if link.kind == ALL_OR_NOTHING:
        return _step(claim, level, "identity", p)
    if link.kind == CUSTOM_TAIL:
        flat = [x for pair in sorted(link.table) for x in pair]
        return _step(claim, level, "custom_tail", p, *flat)
    raise PropagationError(f"{claim}: unknown linking kind {link.kind!r}")


def eval_linking(link: LinkingExprRef, p: float, threshold: int = 1) -> float:
    """Drive-level MP bound from a per-frame fMP bound ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"fMP bound must be in [0, 1], got {p}")
    return link_step("link", 0, link, threshold, p).output


def invert_linking(link: LinkingExprRef, target: float, threshold: int = 1) -> float:
    """Largest fMP bound ``p`` with ``eval_linking(link, p) <= target``.

    Bisection on the monotone tail; raises :class:`InfeasibleAllocation`
    if even ``p = 0`` overshoots the target.
    """
    if link.kind == CUSTOM_TAIL:
        pts = sorted(link.table)
        if any(b1 < b0 for (_, b0), (_, b1) in zip(pts, pts[1:])):
            raise InfeasibleAllocation("custom-tail table is not monotone, cannot be inverted")
    if target >= 1.0:
        return 1.0
    F = lambda p: eval_linking(link, p, threshold)  # noqa: E731
    if F(0.0) > target:
        raise InfeasibleAllocation(
            f"target {target:.3g} is below the linking expression's floor {F(0.0):.3g}")
    if F(1.0) <= target:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if F(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


def _leaf_step(hid: str, po: PoEntry, fmp_id: str, level: int):
    claim = leaf_id(hid, po.id, fmp_id)
    c: Optional[FmpClaim] = po.claim(fmp_id)
    if c is None:
        raise PropagationError(f"{claim}: missing fMP claim")
    if c.bound is not None:
        return _step(claim, level, "asserted", c.bound.at(level)), c.bound.provenance
    if c.metric_value is not None and c.sample_size is not None:
        q = c.confidence_q if c.confidence_q is not None else DEFAULT_Q
        if c.sample_size > stats.MIN_NORMAL_N:
            return (_step(claim, level, "normal_upper", c.metric_value, float(c.sample_size),
                          stats.z_quantile(q)), "estimated")
        return (_step(claim, level, "exact_upper", c.metric_value, float(c.sample_size), q),
                "estimated")
    raise PropagationError(f"{claim}: missing leaf bound")


def _require(b: Optional[Bound], claim: str, level: int) -> float:
    if b is None:
        raise PropagationError(f"{claim}: missing bound")
    return b.at(level)


# ---------------------------------------------------------------- engine


def _po_block(h: HmpEntry, po: PoEntry, level: int):
    """Leaf, MR and occurrence steps of one PO entry."""
    steps, prov = [], {}
    mr = po_mr_id(h.id, po.id)
    if po.mr_bound is not None and po.mr_bound.provenance == "asserted":
        steps.append(_step(mr, level, "asserted", po.mr_bound.at(level)))
        prov[mr] = "asserted"
    else:
        parts = []
        refs = h.mp.fmp_refs
        for ref in refs:
            leaf, pv = _leaf_step(h.id, po, ref.fmp_id, level)
            steps.append(leaf)
            prov[leaf.claim] = pv
            cid = mr if len(refs) == 1 else f"{mr}/{ref.fmp_id}"
            s = link_step(cid, level, po.linking, ref.threshold, leaf.output)
            steps.append(s)
            prov[cid] = "computed"
            parts.append(s.output)
        if len(refs) > 1:
            steps.append(_step(mr, level, "union_sum", *parts))
            prov[mr] = "computed"
    occ = po_occ_id(h.id, po.id)
    if po.is_nominal:
        lows = [_require(p.occurrence_lower, po_occ_id(h.id, p.id), level)
                for p in h.po_partition if not p.is_nominal]
        steps.append(_step(occ, level, "nominal_complement", *lows))
        prov[occ] = "computed"
    else:
        steps.append(_step(occ, level, "asserted", _require(po.occurrence_upper, occ, level)))
        prov[occ] = po.occurrence_upper.provenance
    return tuple(steps), prov


def _hmp_block(h: HmpEntry, level: int, po_blocks: Sequence):
    steps, prov = [], {}
    pairs = []
    for po, block in zip(h.po_partition, po_blocks):
        by = {s.claim: s.output for s in block}
        pairs += [by[po_mr_id(h.id, po.id)], by[po_occ_id(h.id, po.id)]]
    cr = f"G-MP_{h.id}-CR"
    hb = f"G-HBSS_{h.id}"
    mr = f"G-MP_{h.id}-MR"
    g = f"G-HMP_{h.id}"
    s_cr = _step(cr, level, "asserted", _require(h.crash_rate_bound, cr, level))
    s_hb = _step(hb, level, "asserted", _require(h.hbss_exposure_bound, hb, level))
    s_mr = _step(mr, level, "weighted_sum", *pairs)
    s_g = _step(g, level, "product", s_cr.output, s_mr.output, s_hb.output)
    steps = [s_cr, s_hb, s_mr, s_g]
    prov.update({cr: h.crash_rate_bound.provenance, hb: h.hbss_exposure_bound.provenance,
                 mr: "computed", g: "computed"})
    return tuple(steps), prov


def _run(case: SafetyCase, prior: Optional[PropagationResult] = None,
         dirty: frozenset = frozenset(), workers: Optional[int] = None) -> PropagationResult:
    L = case.severity_levels
    if not case.hmps_disjoint and len(case.hmps) > 1:
        raise PropagationError("HMPs are not declared disjoint")
    old = prior.blocks if prior is not None else {}
    recomputed = set()

    def reuse(key):
        return prior is not None and key in old and key not in dirty

    def hmp_job(h: HmpEntry):
        blocks, prov, ordered = {}, {}, []
        for lv in range(L):
            po_blocks = []
            for po in h.po_partition:
                key = (h.id, po.id, lv)
                if reuse(key):
                    steps, pv = old[key]
                else:
                    steps, pv = _po_block(h, po, lv)
                    recomputed.update(s.claim for s in steps)
                blocks[key] = (steps, pv)
                prov.update(pv)
                po_blocks.append(steps)
                ordered.extend(steps)
            key = (h.id, None, lv)
            if reuse(key):
                steps, pv = old[key]
            else:
                steps, pv = _hmp_block(h, lv, po_blocks)
                recomputed.update(s.claim for s in steps)
            blocks[key] = (steps, pv)
            prov.update(pv)
            ordered.extend(steps)
        return blocks, prov, ordered

    if workers and workers > 1 and len(case.hmps) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(hmp_job, case.hmps))
    else:
        results = [hmp_job(h) for h in case.hmps]

    blocks, prov, trace = {}, {}, []
    for b, pv, ordered in results:
        blocks.update(b)
        prov.update(pv)
        trace.extend(ordered)

    top_dirty = prior is None or bool(dirty)
    for lv in range(L):
        key = (None, None, lv)
        if not top_dirty and key in old:
            steps, pv = old[key]
        else:
            gammas = [blocks[(h.id, None, lv)][0][-1].output for h in case.hmps]
            steps = []
            if case.residual_bound is not None:
                steps.append(_step("G-Res", lv, "asserted", case.residual_bound.at(lv)))
            res = [case.residual_bound.at(lv)] if case.residual_bound is not None else []
            steps.append(_step("G-C", lv, "sum", *res, *gammas))
            steps = tuple(steps)
            pv = {"G-C": "computed"}
            if case.residual_bound is not None:
                pv["G-Res"] = case.residual_bound.provenance
            recomputed.update(s.claim for s in steps)
        blocks[key] = (steps, pv)
        prov.update(pv)
        trace.extend(steps)

    bounds = {}
    for s in trace:
        bounds.setdefault(s.claim, [None] * L)[s.level] = s.output
    warnings = []
    for s in trace:
        if s.clamped:
            msg = f"{s.claim}[level {s.level}]: computed value above 1, clamped to 1"
            log.warning(msg)
            warnings.append(msg)
    return PropagationResult(
        bounds={k: tuple(v) for k, v in bounds.items()},
        trace=tuple(trace),
        warnings=tuple(warnings),
        residual_symbolic=case.residual_bound is None,
        provenance=prov,
        recomputed=frozenset(recomputed),
        blocks=blocks,
    )


def propagate(case: SafetyCase, workers: Optional[int] = None) -> PropagationResult:
    """Propagate leaf bounds to the top claim.

    A missing ``residual_bound`` is treated as an unspecified additive
    term: ``G-C`` then holds only the HMP contributions and
    ``residual_symbolic`` is set.  HMP subtrees may run on ``workers``
    threads; the result is identical either way.
    """
    return _run(case, workers=workers)


def reuse_delta(case: SafetyCase, prior: PropagationResult, changes: Mapping) -> PropagationResult:
    """Re-propagate after replacing some fMP leaf bounds.

    ``changes`` maps ``(hmp_id, po_id, fmp_id)`` to a :class:`Bound` (or a
    plain float for single-level cases).  Only the PO blocks holding a
    changed leaf, their HMP block and the top claim are recomputed; the
    ``recomputed`` attribute lists the claims that were.
    """
    norm = {k: (v if isinstance(v, Bound) else Bound.of(v, provenance="estimated"))
            for k, v in changes.items()}
    updated = with_fmp_bounds(case, norm)
    dirty = set()
    for h_id, p_id, _ in norm:
        for lv in range(case.severity_levels):
            dirty.add((h_id, p_id, lv))
            dirty.add((h_id, None, lv))
    return _run(updated, prior=prior, dirty=frozenset(dirty))


# ------------------------------------------------------------ allocation


@dataclass(frozen=True)
class Allocation:
    targets: dict          # (hmp, po, fmp) -> per-level fMP targets
    budgets: dict          # claim id -> per-level budget
    top_budget: tuple


# relative headroom kept back at each split so float rounding never overshoots
_SLACK = 1e-10


def _weights(spec: Optional[Mapping], keys: Sequence[str], where: str) -> dict:
    if not spec:
        return {k: 1.0 / len(keys) for k in keys}
    missing = [k for k in keys if k not in spec]
    extra = [k for k in spec if k not in keys]
    if missing or extra:
        raise ValueError(f"{where}: weights must cover exactly {list(keys)}")
    w = {k: float(spec[k]) for k in keys}
    if any(v <= 0 for v in w.values()):
        raise ValueError(f"{where}: weights must be positive")
    if abs(math.fsum(w.values()) - 1.0) > 1e-9:
        raise ValueError(f"{where}: weights must sum to 1")
    return w


def allocate(case: SafetyCase, top_budget, weights: Optional[Mapping] = None) -> Allocation:
    """Split a top-level budget down to per-fMP bound targets.

    ``weights`` may contain ``"hmps": {hmp: w}``, ``"pos": {hmp: {po: w}}``
    and ``"fmps": {hmp: {po: {fmp: w}}}``; missing levels split evenly.
    The residual, crash-rate, exposure and PO-occurrence bounds are taken
    from the case.  Feeding the targets back through :func:`propagate`
    (see :func:`apply_allocation`) never exceeds ``top_budget``.
    """
    weights = weights or {}
    L = case.severity_levels
    tb = (float(top_budget),) * L if isinstance(top_budget, (int, float)) else tuple(top_budget)
    if len(tb) != L:
        raise ValueError(f"budget needs {L} severity slots")
    if not case.hmps:
        raise InfeasibleAllocation("case has no HMPs to allocate to")
    w_h = _weights(weights.get("hmps"), [h.id for h in case.hmps], "hmps")
    targets, budgets = {}, {}
    for lv in range(L):
        res = case.residual_bound.at(lv) if case.residual_bound is not None else 0.0
        avail = tb[lv] - res
        if avail <= 0.0:
            raise InfeasibleAllocation(
                f"budget {tb[lv]:.3g} does not exceed the residual bound {res:.3g}")
        for h in case.hmps:
            t_h = avail * w_h[h.id] * (1.0 - _SLACK)
            budgets.setdefault(f"G-HMP_{h.id}", [None] * L)[lv] = t_h
            denom = _require(h.crash_rate_bound, f"G-MP_{h.id}-CR", lv) * \
                _require(h.hbss_exposure_bound, f"G-HBSS_{h.id}", lv)
            t_mr = t_h / denom * (1.0 - _SLACK) if denom > 0 else math.inf
            budgets.setdefault(f"G-MP_{h.id}-MR", [None] * L)[lv] = t_mr
            pos = list(h.po_partition)
            w_p = _weights((weights.get("pos") or {}).get(h.id), [p.id for p in pos], f"pos[{h.id}]")
            lows = [_require(p.occurrence_lower, po_occ_id(h.id, p.id), lv)
                    for p in pos if not p.is_nominal]
            for po in pos:
                if po.mr_bound is not None and po.mr_bound.provenance == "asserted":
                    raise ValueError(f"{po_mr_id(h.id, po.id)}: cannot allocate over an asserted MR bound")
                if po.is_nominal:
                    up = _clip(1.0 - math.fsum(lows))
                else:
                    up = _require(po.occurrence_upper, po_occ_id(h.id, po.id), lv)
                t_po = t_mr * w_p[po.id] / up * (1.0 - _SLACK) if up > 0 else math.inf
                budgets.setdefault(po_mr_id(h.id, po.id), [None] * L)[lv] = t_po
                refs = h.mp.fmp_refs
                w_k = _weights(((weights.get("fmps") or {}).get(h.id) or {}).get(po.id),
                               [r.fmp_id for r in refs], f"fmps[{h.id}][{po.id}]")
                for r in refs:
                    t_k = t_po * w_k[r.fmp_id]
                    p = invert_linking(po.linking, t_k, r.threshold)
                    targets.setdefault((h.id, po.id, r.fmp_id), [None] * L)[lv] = p
    return Allocation(
        targets={k: tuple(v) for k, v in targets.items()},
        budgets={k: tuple(v) for k, v in budgets.items()},
        top_budget=tb,
    )


def apply_allocation(case: SafetyCase, alloc: Allocation) -> SafetyCase:
    """Case whose fMP leaves are the allocated targets."""
    return with_fmp_bounds(
        case, {k: Bound(value=v, provenance="computed") for k, v in alloc.targets.items()})
