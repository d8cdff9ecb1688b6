"""Claim-tree data model for a perception-component safety case.

A :class:`SafetyCase` holds one :class:`HmpEntry` per hazardous
misperception pattern.  Each HMP is factorised into crash rate,
misperception rate and scenario exposure, and its misperception rate is
split over a partition of perception-only (PO) conditions whose leaves
are frame-level misperception pattern (fMP) claims.

Everything here is an immutable value; the operations return new cases.
Frame-level conditions are kept as DSL source text (see :mod:`iscap.dsl`)
and may be given once (shared across severity levels) or as one string
per severity level.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional, Sequence, Union

from . import dsl

UPPER = "upper"
LOWER = "lower"
DIRECTIONS = (UPPER, LOWER)
PROVENANCES = ("asserted", "computed", "estimated")
EVIDENCE_KINDS = ("analysis", "simulation", "external")
EVIDENCE_STATUS = ("supported", "pending")

INDEPENDENT_BINOMIAL = "independent-binomial"
ALL_OR_NOTHING = "all-or-nothing"
CUSTOM_TAIL = "custom-tail"
LINK_KINDS = (INDEPENDENT_BINOMIAL, ALL_OR_NOTHING, CUSTOM_TAIL)

# A condition shared by all severity levels, or one per level.
Condition = Union[str, tuple]


class CaseFormatError(ValueError):
    """The case-spec document is structurally unreadable."""


@dataclass(frozen=True)
class Bound:
    """A probability bound with one slot per severity level."""

    value: tuple
    direction: str = UPPER
    provenance: str = "asserted"
    confidence_q: Optional[float] = None

    @classmethod
    def of(cls, v: float, **kw) -> "Bound":
        return cls(value=(float(v),), **kw)

    @property
    def levels(self) -> int:
        return len(self.value)

    def at(self, level: int) -> float:
        return self.value[level]


@dataclass(frozen=True)
class EvidenceRecord:
    kind: str = "analysis"
    summary: str = ""
    status: str = "pending"


@dataclass(frozen=True)
class PredicateRef:
    """Opaque drive-level predicate plus an optional frame-level filter.

    The label is never evaluated; ``frame_filter`` is the executable DSL
    over-approximation used to select test frames.
    """

    label: str
    frame_filter: Optional[Condition] = None


@dataclass(frozen=True)
class FmpRef:
    fmp_id: str
    threshold: int = 1
    condition: Optional[Condition] = None


@dataclass(frozen=True)
class MpSpec:
    """Misperception pattern: at least ``threshold`` occurrences of some fMP.

    With several references the pattern is their disjunction.
    """

    fmp_refs: tuple = ()
    description: str = ""

    def ref(self, fmp_id: str) -> FmpRef:
        for r in self.fmp_refs:
            if r.fmp_id == fmp_id:
                return r
        raise KeyError(fmp_id)


@dataclass(frozen=True)
class LinkingExprRef:
    """How a per-frame fMP bound turns into a drive-level MP bound.

    ``k_min`` may be left unset for independent-binomial links, in which
    case the fMP's threshold count is used.
    """

    kind: str = INDEPENDENT_BINOMIAL
    n_max: Optional[int] = None
    k_min: Optional[int] = None
    table: tuple = ()


@dataclass(frozen=True)
class FmpClaim:
    fmp_id: str
    bound: Optional[Bound] = None
    metric_value: Optional[float] = None
    sample_size: Optional[int] = None
    confidence_q: Optional[float] = None


@dataclass(frozen=True)
class PoEntry:
    id: str
    is_nominal: bool = False
    condition: Optional[Condition] = None
    occurrence_lower: Optional[Bound] = None
    occurrence_upper: Optional[Bound] = None
    mr_bound: Optional[Bound] = None
    linking: LinkingExprRef = field(default_factory=LinkingExprRef)
    fmp_claims: tuple = ()
    # Recorded only; P(PO | HBSS) is used either way.
    independent_of_hbss: bool = False

    def claim(self, fmp_id: str) -> Optional[FmpClaim]:
        for c in self.fmp_claims:
            if c.fmp_id == fmp_id:
                return c
        return None


@dataclass(frozen=True)
class HmpEntry:
    id: str
    hbss: PredicateRef
    mp: MpSpec
    crash_rate_bound: Optional[Bound] = None
    hbss_exposure_bound: Optional[Bound] = None
    necessity_record: Optional[EvidenceRecord] = None
    po_partition: tuple = ()

    def po(self, po_id: str) -> PoEntry:
        for p in self.po_partition:
            if p.id == po_id:
                return p
        raise KeyError(po_id)

    @property
    def nominal(self) -> Optional[PoEntry]:
        noms = [p for p in self.po_partition if p.is_nominal]
        return noms[0] if len(noms) == 1 else None


@dataclass(frozen=True)
class SafetyCase:
    component_name: str
    task_name: str
    severity_levels: int = 1
    top_bound: Optional[Bound] = None
    residual_bound: Optional[Bound] = None
    hmps: tuple = ()
    notes: str = ""
    hmps_disjoint: bool = False

    def hmp(self, hmp_id: str) -> HmpEntry:
        for h in self.hmps:
            if h.id == hmp_id:
                return h
        raise KeyError(hmp_id)


def condition_at(cond: Optional[Condition], level: int) -> Optional[str]:
    if cond is None or isinstance(cond, str):
        return cond
    return cond[level]


# ---------------------------------------------------------------- validation


def _iter_bounds(case: SafetyCase):
    yield "G-C", case.top_bound
    yield "G-Res", case.residual_bound
    for h in case.hmps:
        yield f"G-MP_{h.id}-CR", h.crash_rate_bound
        yield f"G-HBSS_{h.id}", h.hbss_exposure_bound
        for po in h.po_partition:
            yield f"G-PO_{h.id},{po.id}[lower]", po.occurrence_lower
            yield f"G-PO_{h.id},{po.id}[upper]", po.occurrence_upper
            yield f"G-PO_{h.id},{po.id}-MR", po.mr_bound
            for c in po.fmp_claims:
                yield f"G-fMP_{h.id},{po.id},{c.fmp_id}-MR", c.bound


def _iter_conditions(case: SafetyCase):
    for h in case.hmps:
        yield f"HBSS_{h.id}", h.hbss.frame_filter
        for r in h.mp.fmp_refs:
            yield f"fMP_{h.id},{r.fmp_id}", r.condition
        for po in h.po_partition:
            yield f"PO_{h.id},{po.id}", po.condition


def validate(case: SafetyCase) -> list:
    """Return structural violations of ``case``; an empty list means valid."""
    out = []
    L = case.severity_levels
    if not isinstance(L, int) or L < 1:
        out.append(f"case: severity_levels must be a positive integer, got {L!r}")
        L = None
    if not case.hmps_disjoint and len(case.hmps) > 1:
        out.append("case: HMPs not declared disjoint (run disjointify or assert hmps_disjoint)")

    for claim, b in _iter_bounds(case):
        if b is None:
            continue
        if L is not None and b.levels != L:
            out.append(f"{claim}: bound has {b.levels} severity slots, expected {L}")
        if any(not (0.0 <= v <= 1.0) for v in b.value):
            out.append(f"{claim}: bound out of [0,1]: {list(b.value)}")
        if b.direction not in DIRECTIONS:
            out.append(f"{claim}: unknown bound direction {b.direction!r}")
        if b.provenance not in PROVENANCES:
            out.append(f"{claim}: unknown provenance {b.provenance!r}")

    for name, cond in _iter_conditions(case):
        if cond is None:
            continue
        srcs = [cond] if isinstance(cond, str) else list(cond)
        if not isinstance(cond, str) and L is not None and len(srcs) != L:
            out.append(f"{name}: condition has {len(srcs)} severity variants, expected {L}")
        for src in srcs:
            try:
                dsl.parse(src)
            except dsl.DslError as exc:
                out.append(f"{name}: invalid condition {src!r}: {exc}")

    seen = set()
    for h in case.hmps:
        if h.id in seen:
            out.append(f"G-HMP_{h.id}: duplicate HMP id")
        seen.add(h.id)
        out.extend(_validate_hmp(h))
    return out


def _validate_hmp(h: HmpEntry) -> list:
    out = []
    g = f"G-HMP_{h.id}"
    if h.crash_rate_bound is None:
        out.append(f"G-MP_{h.id}-CR: missing crash-rate bound")
    if h.hbss_exposure_bound is None:
        out.append(f"G-HBSS_{h.id}: missing exposure bound")
    if h.necessity_record is None:
        out.append(f"G-MP_{h.id}-N: missing necessity evidence record")
    else:
        rec = h.necessity_record
        if rec.kind not in EVIDENCE_KINDS:
            out.append(f"G-MP_{h.id}-N: unknown evidence kind {rec.kind!r}")
        if rec.status not in EVIDENCE_STATUS:
            out.append(f"G-MP_{h.id}-N: unknown evidence status {rec.status!r}")
    if not h.mp.fmp_refs:
        out.append(f"{g}: misperception pattern references no fMP")
    for r in h.mp.fmp_refs:
        if not isinstance(r.threshold, int) or r.threshold < 1:
            out.append(f"{g}: fMP {r.fmp_id} threshold must be >= 1, got {r.threshold!r}")

    noms = [p for p in h.po_partition if p.is_nominal]
    if not noms:
        out.append(f"S-MP_{h.id}-PO: missing nominal PO entry")
    elif len(noms) > 1:
        out.append(f"S-MP_{h.id}-PO: duplicate nominal PO entries {[p.id for p in noms]}")

    ids = set()
    for po in h.po_partition:
        c = f"G-PO_{h.id},{po.id}"
        if po.id in ids:
            out.append(f"{c}: duplicate PO id")
        ids.add(po.id)
        if po.is_nominal:
            if po.condition is not None:
                out.append(f"{c}: nominal PO must not carry a condition")
            if po.occurrence_upper is not None:
                out.append(f"{c}: nominal upper occurrence bound is derived, not asserted")
        else:
            if po.condition is None:
                out.append(f"{c}: non-nominal PO needs a condition")
            if po.occurrence_lower is None or po.occurrence_upper is None:
                out.append(f"{c}: non-nominal PO needs both lower and upper occurrence bounds")
            else:
                lo, up = po.occurrence_lower.value, po.occurrence_upper.value
                if any(a > b for a, b in zip(lo, up)):
                    out.append(f"{c}: lower occurrence bound exceeds upper")
        out.extend(_validate_link(c, po.linking))
        for r in h.mp.fmp_refs:
            claim = po.claim(r.fmp_id)
            leaf = f"G-fMP_{h.id},{po.id},{r.fmp_id}-MR"
            if claim is None:
                out.append(f"{leaf}: missing fMP claim")
            elif claim.bound is None and (claim.metric_value is None or claim.sample_size is None):
                out.append(f"{leaf}: needs a bound or a recorded metric (m, N)")
            elif claim.metric_value is not None and not 0.0 <= claim.metric_value <= 1.0:
                out.append(f"{leaf}: metric value out of [0,1]")
            elif claim.sample_size is not None and claim.sample_size < 1:
                out.append(f"{leaf}: sample size must be >= 1")
        for claim in po.fmp_claims:
            if claim.fmp_id not in {r.fmp_id for r in h.mp.fmp_refs}:
                out.append(f"{c}: fMP claim {claim.fmp_id} not referenced by MP_{h.id}")
    lows = [p.occurrence_lower for p in h.po_partition
            if not p.is_nominal and p.occurrence_lower is not None]
    if lows:
        n = lows[0].levels
        for lv in range(n):
            if sum(b.value[lv] for b in lows if b.levels == n) > 1.0:
                out.append(f"S-MP_{h.id}-PO: non-nominal lower occurrence bounds sum above 1")
                break
    return out


def _validate_link(claim: str, link: LinkingExprRef) -> list:
    out = []
    ctx = claim.replace("G-PO_", "Ctx-Link_")
    if link.kind not in LINK_KINDS:
        return [f"{ctx}: unknown linking kind {link.kind!r}"]
    if link.kind == INDEPENDENT_BINOMIAL:
        if link.n_max is None or link.n_max < 1:
            out.append(f"{ctx}: independent-binomial needs n_max >= 1")
        elif link.k_min is not None and not 1 <= link.k_min <= link.n_max:
            out.append(f"{ctx}: need n_max >= k_min >= 1")
    if link.kind == CUSTOM_TAIL:
        if len(link.table) < 1:
            out.append(f"{ctx}: custom-tail needs at least one (p, bound) pair")
        for p, b in link.table:
            if not (0.0 <= p <= 1.0 and 0.0 <= b <= 1.0):
                out.append(f"{ctx}: custom-tail entries must lie in [0,1]")
                break
    return out


# ------------------------------------------------------------ disjointify


def _paren(label: str) -> str:
    return f"({label})" if any(ch in label for ch in " ∧∨¬") else label


def _and_filters(a: Optional[Condition], b: Optional[Condition]) -> Optional[Condition]:
    if a is None:
        return b
    if b is None:
        return a
    if isinstance(a, str) and isinstance(b, str):
        return f"({a}) and ({b})"
    n = len(a) if not isinstance(a, str) else len(b)
    return tuple(f"({condition_at(a, i)}) and ({condition_at(b, i)})" for i in range(n))


def _merge_mp(a: MpSpec, b: MpSpec, la: str, lb: str) -> MpSpec:
    refs = {r.fmp_id: r for r in a.fmp_refs}
    order = [r.fmp_id for r in a.fmp_refs]
    for r in b.fmp_refs:
        if r.fmp_id in refs:
            # the disjunction is implied by the weaker threshold
            refs[r.fmp_id] = replace(refs[r.fmp_id], threshold=min(refs[r.fmp_id].threshold, r.threshold))
        else:
            refs[r.fmp_id] = r
            order.append(r.fmp_id)
    return MpSpec(fmp_refs=tuple(refs[k] for k in order), description=f"MP_{la} ∨ MP_{lb}")


def _overlap_entry(a: HmpEntry, b: HmpEntry) -> HmpEntry:
    mp = _merge_mp(a.mp, b.mp, a.id, b.id)
    levels = a.crash_rate_bound.levels if a.crash_rate_bound else 1
    exposure = None
    if a.hbss_exposure_bound and b.hbss_exposure_bound:
        exposure = Bound(
            value=tuple(min(x, y) for x, y in zip(a.hbss_exposure_bound.value,
                                                  b.hbss_exposure_bound.value)),
            provenance="computed",
        )
    template = a.nominal or (a.po_partition[0] if a.po_partition else None)
    link = template.linking if template else LinkingExprRef()
    nominal = PoEntry(
        id="Nom", is_nominal=True, linking=link,
        fmp_claims=tuple(FmpClaim(fmp_id=r.fmp_id) for r in mp.fmp_refs),
    )
    return HmpEntry(
        id=f"{a.id}&{b.id}",
        hbss=PredicateRef(
            label=f"{_paren(a.hbss.label)} ∧ {_paren(b.hbss.label)}",
            frame_filter=_and_filters(a.hbss.frame_filter, b.hbss.frame_filter),
        ),
        mp=mp,
        crash_rate_bound=Bound(value=(1.0,) * levels),
        hbss_exposure_bound=exposure,
        necessity_record=EvidenceRecord(
            kind="analysis", status="pending",
            summary=f"necessity of MP_{a.id} ∨ MP_{b.id} under the overlap scenario",
        ),
        po_partition=(nominal,),
    )


def disjointify(hmps: Sequence[HmpEntry], overlaps: Iterable[tuple] = ()) -> list:
    """Resolve declared HMP overlaps into a disjoint family.

    Each overlap ``(i, j)`` adds ``<HBSS_i ∧ HBSS_j, MP_i ∨ MP_j>`` and
    rewrites HMP_i and HMP_j with the other's scenario negated.  Overlaps
    are applied pairwise in declaration order, each one seeing the
    rewrites of the previous ones.  New overlap entries are appended
    after the originals and start with a conservative crash rate of 1,
    exposure ``min`` of the parents, a nominal-only PO partition whose
    fMP leaves still need bounds, and pending necessity evidence.
    Frame filters are only ever conjoined, never negated, so every
    rewritten filter stays an over-approximation.
    """
    current = list(hmps)
    for i, j in overlaps:
        ids = [h.id for h in current]
        for x in (i, j):
            if x not in ids:
                raise KeyError(f"unknown HMP id {x!r} in overlap ({i}, {j})")
        if i == j:
            raise ValueError(f"HMP {i!r} cannot overlap itself")
        a = current[ids.index(i)]
        b = current[ids.index(j)]
        la, lb = _paren(a.hbss.label), _paren(b.hbss.label)
        overlap = _overlap_entry(a, b)
        current[ids.index(i)] = replace(a, hbss=replace(a.hbss, label=f"{la} ∧ ¬{lb}"))
        current[ids.index(j)] = replace(b, hbss=replace(b.hbss, label=f"¬{la} ∧ {lb}"))
        # later overlaps may name the new entry
        current.append(overlap)
    return current


def disjointify_case(case: SafetyCase, overlaps: Iterable[tuple] = ()) -> SafetyCase:
    return replace(case, hmps=tuple(disjointify(case.hmps, overlaps)), hmps_disjoint=True)


# -------------------------------------------------------- severity levels


def _expand_bound(b: Optional[Bound], L: int) -> Optional[Bound]:
    if b is None:
        return None
    return replace(b, value=tuple(b.value[0] for _ in range(L)))


def expand_severity(case: SafetyCase, L: int) -> SafetyCase:
    """Turn a single-level case into ``L`` parallel levels.

    Bounds become ``L``-slot copies of their single value.  Conditions
    stay shared; give per-level variants afterwards for anything that
    really depends on severity.
    """
    if not isinstance(L, int) or L < 1:
        raise ValueError(f"number of severity levels must be >= 1, got {L!r}")
    if case.severity_levels != 1:
        raise ValueError("expand_severity expects a single-level case")
    if L == 1:
        return case

    def po_(p: PoEntry) -> PoEntry:
        return replace(
            p,
            occurrence_lower=_expand_bound(p.occurrence_lower, L),
            occurrence_upper=_expand_bound(p.occurrence_upper, L),
            mr_bound=_expand_bound(p.mr_bound, L),
            fmp_claims=tuple(replace(c, bound=_expand_bound(c.bound, L)) for c in p.fmp_claims),
        )

    hmps = tuple(
        replace(
            h,
            crash_rate_bound=_expand_bound(h.crash_rate_bound, L),
            hbss_exposure_bound=_expand_bound(h.hbss_exposure_bound, L),
            po_partition=tuple(po_(p) for p in h.po_partition),
        )
        for h in case.hmps
    )
    return replace(
        case,
        severity_levels=L,
        top_bound=_expand_bound(case.top_bound, L),
        residual_bound=_expand_bound(case.residual_bound, L),
        hmps=hmps,
    )


def with_fmp_bounds(case: SafetyCase, changes: dict) -> SafetyCase:
    """Replace leaf bounds; ``changes`` maps (hmp, po, fmp) ids to a Bound."""
    todo = dict(changes)
    hmps = []
    for h in case.hmps:
        pos = []
        for p in h.po_partition:
            claims = []
            for c in p.fmp_claims:
                key = (h.id, p.id, c.fmp_id)
                if key in todo:
                    c = replace(c, bound=todo.pop(key))
                claims.append(c)
            pos.append(replace(p, fmp_claims=tuple(claims)))
        hmps.append(replace(h, po_partition=tuple(pos)))
    if todo:
        raise KeyError(f"unknown fMP claims: {sorted(todo)}")
    return replace(case, hmps=tuple(hmps))


# ---------------------------------------------------------- serialization


def _bound_to_json(b: Optional[Bound]) -> Optional[dict]:
    if b is None:
        return None
    d = {"value": list(b.value), "direction": b.direction, "provenance": b.provenance}
    if b.confidence_q is not None:
        d["confidence_q"] = b.confidence_q
    return d


def _bound_from_json(d: Any, where: str) -> Optional[Bound]:
    if d is None:
        return None
    if isinstance(d, (int, float)):
        return Bound.of(d)
    if not isinstance(d, dict) or "value" not in d:
        raise CaseFormatError(f"{where}: bound must be a number or an object with 'value'")
    v = d["value"]
    vals = (float(v),) if isinstance(v, (int, float)) else tuple(float(x) for x in v)
    return Bound(
        value=vals,
        direction=d.get("direction", UPPER),
        provenance=d.get("provenance", "asserted"),
        confidence_q=d.get("confidence_q"),
    )


def _cond_to_json(c: Optional[Condition]):
    return list(c) if isinstance(c, tuple) else c


def _cond_from_json(c) -> Optional[Condition]:
    return tuple(c) if isinstance(c, list) else c


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def case_to_dict(case: SafetyCase) -> dict:
    def link(l: LinkingExprRef) -> dict:
        return _drop_none({
            "kind": l.kind, "n_max": l.n_max, "k_min": l.k_min,
            "table": [list(t) for t in l.table] if l.table else None,
        })

    def claim(c: FmpClaim) -> dict:
        return _drop_none({
            "fmp_id": c.fmp_id, "bound": _bound_to_json(c.bound),
            "m": c.metric_value, "N": c.sample_size, "q": c.confidence_q,
        })

    def po(p: PoEntry) -> dict:
        d = _drop_none({
            "id": p.id,
            "is_nominal": p.is_nominal,
            "condition": _cond_to_json(p.condition),
            "occurrence_lower": _bound_to_json(p.occurrence_lower),
            "occurrence_upper": _bound_to_json(p.occurrence_upper),
            "mr_bound": _bound_to_json(p.mr_bound),
            "linking": link(p.linking),
            "fmp_claims": [claim(c) for c in p.fmp_claims],
        })
        if p.independent_of_hbss:
            d["independent_of_hbss"] = True
        return d

    def hmp(h: HmpEntry) -> dict:
        return _drop_none({
            "id": h.id,
            "hbss": _drop_none({"label": h.hbss.label,
                                "frame_filter": _cond_to_json(h.hbss.frame_filter)}),
            "mp": {
                "fmp_refs": [_drop_none({"fmp_id": r.fmp_id, "threshold": r.threshold,
                                         "condition": _cond_to_json(r.condition)})
                             for r in h.mp.fmp_refs],
                "description": h.mp.description,
            },
            "crash_rate_bound": _bound_to_json(h.crash_rate_bound),
            "hbss_exposure_bound": _bound_to_json(h.hbss_exposure_bound),
            "necessity_record": dataclasses.asdict(h.necessity_record) if h.necessity_record else None,
            "po_partition": [po(p) for p in h.po_partition],
        })

    return _drop_none({
        "component": case.component_name,
        "task": case.task_name,
        "severity_levels": case.severity_levels,
        "top_bound": _bound_to_json(case.top_bound),
        "residual_bound": _bound_to_json(case.residual_bound),
        "hmps_disjoint": case.hmps_disjoint,
        "notes": case.notes or None,
        "hmps": [hmp(h) for h in case.hmps],
    })


def case_from_dict(d: dict) -> SafetyCase:
    if not isinstance(d, dict):
        raise CaseFormatError("case spec must be a JSON object")
    try:
        hmps = tuple(_hmp_from_dict(h) for h in d.get("hmps", []))
        return SafetyCase(
            component_name=d["component"],
            task_name=d["task"],
            severity_levels=d.get("severity_levels", 1),
            top_bound=_bound_from_json(d.get("top_bound"), "top_bound"),
            residual_bound=_bound_from_json(d.get("residual_bound"), "residual_bound"),
            hmps=hmps,
            notes=d.get("notes", ""),
            hmps_disjoint=bool(d.get("hmps_disjoint", False)),
        )
    except KeyError as exc:
        raise CaseFormatError(f"missing required key {exc.args[0]!r}") from None
    except (TypeError, AttributeError) as exc:
        raise CaseFormatError(f"malformed case spec: {exc}") from None


def _hmp_from_dict(h: dict) -> HmpEntry:
    hid = h["id"]
    hb = h["hbss"]
    hbss = PredicateRef(hb) if isinstance(hb, str) else PredicateRef(
        label=hb["label"], frame_filter=_cond_from_json(hb.get("frame_filter")))
    mp_d = h["mp"]
    mp = MpSpec(
        fmp_refs=tuple(
            FmpRef(fmp_id=r["fmp_id"], threshold=r.get("threshold", 1),
                   condition=_cond_from_json(r.get("condition")))
            for r in mp_d.get("fmp_refs", [])
        ),
        description=mp_d.get("description", ""),
    )
    rec = h.get("necessity_record")
    return HmpEntry(
        id=hid,
        hbss=hbss,
        mp=mp,
        crash_rate_bound=_bound_from_json(h.get("crash_rate_bound"), f"{hid}.crash_rate_bound"),
        hbss_exposure_bound=_bound_from_json(h.get("hbss_exposure_bound"), f"{hid}.hbss_exposure_bound"),
        necessity_record=EvidenceRecord(**rec) if rec is not None else None,
        po_partition=tuple(_po_from_dict(p, hid) for p in h.get("po_partition", [])),
    )


def _po_from_dict(p: dict, hid: str) -> PoEntry:
    where = f"{hid}.{p['id']}"
    ln = p.get("linking", {})
    link = LinkingExprRef(
        kind=ln.get("kind", INDEPENDENT_BINOMIAL),
        n_max=ln.get("n_max"),
        k_min=ln.get("k_min"),
        table=tuple(tuple(float(x) for x in t) for t in ln.get("table", [])),
    )
    claims = tuple(
        FmpClaim(
            fmp_id=c["fmp_id"],
            bound=_bound_from_json(c.get("bound"), f"{where}.{c['fmp_id']}"),
            metric_value=c.get("m"),
            sample_size=c.get("N"),
            confidence_q=c.get("q"),
        )
        for c in p.get("fmp_claims", [])
    )
    return PoEntry(
        id=p["id"],
        is_nominal=bool(p.get("is_nominal", False)),
        condition=_cond_from_json(p.get("condition")),
        occurrence_lower=_bound_from_json(p.get("occurrence_lower"), f"{where}.occurrence_lower"),
        occurrence_upper=_bound_from_json(p.get("occurrence_upper"), f"{where}.occurrence_upper"),
        mr_bound=_bound_from_json(p.get("mr_bound"), f"{where}.mr_bound"),
        linking=link,
        fmp_claims=claims,
        independent_of_hbss=bool(p.get("independent_of_hbss", False)),
    )


def render(case: SafetyCase) -> str:
    return json.dumps(case_to_dict(case), indent=2, ensure_ascii=False) + "\n"


def parse(text: str) -> SafetyCase:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"not valid JSON: {exc}") from None
    return case_from_dict(d)


def load_case(path) -> SafetyCase:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def save_case(case: SafetyCase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render(case))
