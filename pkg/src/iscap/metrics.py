"""Risk-aware performance metrics and PO occurrence proportions."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from . import dsl
from .frames import partition


@dataclass(frozen=True)
class MetricResult:
    m: float
    N: int
    satisfied_count: int
    fmp_id: str = ""
    po_id: str = ""
    hmp_id: str = ""


def _count(frames, expr, cfg) -> int:
    return sum(1 for f in frames if dsl.evaluate(expr, f, cfg))


def compute_metric(tds: Sequence, fmp, *, fmp_id: str = "", po_id: str = "",
                   hmp_id: str = "", cfg: dsl.EvalConfig = dsl.DEFAULT_EVAL,
                   workers: Optional[int] = None) -> MetricResult:
    """Fraction of frames in ``tds`` on which the fMP condition holds.

    Frames must already be matched.  With ``workers`` the frames are
    evaluated in chunks on a thread pool; counting is order-free so the
    result does not depend on the split.
    """
    if len(tds) == 0:
        raise ValueError(f"empty test dataset for fMP {fmp_id or '?'} / PO {po_id or '?'}")
    expr = dsl.parse(fmp) if isinstance(fmp, str) else fmp
    if workers and workers > 1:
        size = -(-len(tds) // workers)
        chunks = [tds[i:i + size] for i in range(0, len(tds), size)]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            k = sum(ex.map(lambda c: _count(c, expr, cfg), chunks))
    else:
        k = _count(tds, expr, cfg)
    return MetricResult(m=k / len(tds), N=len(tds), satisfied_count=k,
                        fmp_id=fmp_id, po_id=po_id, hmp_id=hmp_id)


def metric_from_outcomes(outcomes: Sequence[bool], **ids) -> MetricResult:
    """Replay recorded per-frame fMP outcomes."""
    if len(outcomes) == 0:
        raise ValueError("no recorded outcomes")
    k = sum(1 for o in outcomes if o)
    return MetricResult(m=k / len(outcomes), N=len(outcomes), satisfied_count=k, **ids)


def occurrence_from_counts(counts: Mapping[str, int], nominal_id: str = "Nom") -> dict:
    """``po_id -> (proportion, N)`` from stratum sizes; N is the total.

    The nominal proportion is the complement of the non-nominal ones.
    """
    total = sum(counts.values())
    if total == 0:
        raise ValueError("empty frame set")
    out = {pid: (c / total, total) for pid, c in counts.items() if pid != nominal_id}
    out[nominal_id] = (1.0 - sum(p for p, _ in out.values()), total)
    return out


def po_occurrence(frames_all_hbss: Sequence, po_entries: Sequence,
                  cfg: dsl.EvalConfig = dsl.DEFAULT_EVAL) -> dict:
    """PO proportions over frames already restricted to the HBSS."""
    if len(frames_all_hbss) == 0:
        raise ValueError("empty frame set")
    parts = partition(frames_all_hbss, None, po_entries, cfg)
    nominal = next((p.id for p in po_entries if p.is_nominal), "Nom")
    return occurrence_from_counts({k: len(v) for k, v in parts.items()}, nominal)
