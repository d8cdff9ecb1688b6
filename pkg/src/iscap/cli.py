"""``iscap`` command line.

Exit status is 0 on success, 1 for domain or validation failures and 2
when an input cannot be read or an output cannot be written.  Set
``ISCAP_LOG`` (e.g. ``INFO``, ``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import case as case_mod
from . import dsl, frames, metrics, propagation, report, sca, sim, stats

log = logging.getLogger("iscap")

OK, FAIL, IO_FAIL = 0, 1, 2


class CliError(Exception):
    def __init__(self, msg: str, code: int = FAIL):
        super().__init__(msg)
        self.code = code


# ------------------------------------------------------------- helpers


def _read_json(path, what: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc.strerror or exc}", IO_FAIL) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} {path} is not valid JSON: {exc}") from None


def _load_case(path) -> case_mod.SafetyCase:
    if path is None:
        raise CliError("--case is required")
    try:
        return case_mod.load_case(path)
    except OSError as exc:
        raise CliError(f"cannot read case {path}: {exc.strerror or exc}", IO_FAIL) from None
    except case_mod.CaseFormatError as exc:
        raise CliError(f"malformed case {path}: {exc}") from None


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        frames.ensure_dir(out)
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror or exc}", IO_FAIL) from None


def _check_valid(c: case_mod.SafetyCase) -> None:
    bad = case_mod.validate(c)
    if bad:
        for v in bad:
            print(v, file=sys.stderr)
        raise CliError(f"case has {len(bad)} violation(s)")


def _text_or_json(args, default: str = "text") -> str:
    kind = args.format or default
    if kind not in ("text", "json"):
        raise CliError(f"unknown output format {kind!r}; choose text or json")
    return kind


# ------------------------------------------------------------ commands


def cmd_validate(args) -> int:
    c = _load_case(args.case)
    bad = case_mod.validate(c)
    for v in bad:
        print(v)
    if not bad:
        print(f"{args.case}: ok")
    return FAIL if bad else OK


def cmd_propagate(args) -> int:
    c = _load_case(args.case)
    _check_valid(c)
    try:
        res = propagation.propagate(c, workers=args.workers)
    except propagation.PropagationError as exc:
        raise CliError(str(exc)) from None
    rep = report.build_report(c, res)
    text = report.render_report(rep, args.report)
    for w in rep.warnings:
        log.warning(w)
    if args.out is None:
        # both report formats already carry the γ_C expression
        sys.stdout.write(text)
        return OK
    _emit(text, args.out)
    for lv, expr in enumerate(rep.top):
        tag = f"[{lv}]" if len(rep.top) > 1 else ""
        print(f"γ_C{tag} = {expr}")
    return OK


def cmd_allocate(args) -> int:
    c = _load_case(args.case)
    _check_valid(c)
    if args.budget is None:
        raise CliError("--budget is required")
    weights = _read_json(args.weights, "weights file") if args.weights else None
    try:
        alloc = propagation.allocate(c, args.budget, weights)
        check = propagation.propagate(propagation.apply_allocation(c, alloc))
    except (propagation.InfeasibleAllocation, propagation.PropagationError, ValueError) as exc:
        raise CliError(f"allocation failed: {exc}") from None
    doc = {
        "top_budget": list(alloc.top_budget),
        "targets": [{"hmp": h, "po": p, "fmp": k, "target": list(v)}
                    for (h, p, k), v in alloc.targets.items()],
        "budgets": {k: list(v) for k, v in alloc.budgets.items()},
        "propagated_top": list(check.top),
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    for t in doc["targets"]:
        log.info("%s/%s/%s target %s", t["hmp"], t["po"], t["fmp"], t["target"])
    over = [v for v, b in zip(check.top, alloc.top_budget) if v > b]
    if over:
        raise CliError("propagated top bound exceeds budget")
    return OK


def _load_frames(args) -> list:
    try:
        if args.from_kitti:
            fs = frames.load_kitti(args.from_kitti[0], args.from_kitti[1],
                                   ego_speed=args.ego_speed)
        elif args.dataset:
            fs = frames.load_dataset(args.dataset)
        else:
            raise CliError("give --dataset or --from-kitti LABEL_DIR PRED_DIR")
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc.strerror or exc}", IO_FAIL) from None
    except frames.DatasetError as exc:
        raise CliError(f"malformed dataset: {exc}") from None
    return frames.match_all(fs, args.iou)


def _leaf_bound(m: float, n: int, q: float, where: str) -> stats.ConfidenceBound:
    if n <= stats.MIN_NORMAL_N or m in (0.0, 1.0):
        log.warning("%s: N=%d, m=%g; using the exact Clopper-Pearson bound", where, n, m)
        return stats.proportion_bound(m, n, q, stats.UPPER, method=stats.EXACT)
    return stats.proportion_bound(m, n, q, stats.UPPER)


def run_metrics(c: case_mod.SafetyCase, fs: list, q: float = 99.0,
                cfg: dsl.EvalConfig = dsl.DEFAULT_EVAL, workers=None,
                with_occurrence: bool = False):
    """Compute every (HMP, PO, fMP) metric; returns ``(rows, updated case)``."""
    rows, changes, hmps = [], {}, []
    for h in c.hmps:
        if any(r.condition is None for r in h.mp.fmp_refs):
            raise CliError(f"G-HMP_{h.id}: every fMP needs an executable condition")
        parts_by_level = []
        for lv in range(c.severity_levels):
            try:
                parts_by_level.append(frames.partition(fs, h.hbss.frame_filter,
                                                       h.po_partition, cfg, lv))
            except frames.PartitionError as exc:
                raise CliError(f"G-HMP_{h.id}: PO partition not disjoint: {exc}") from None
        new_pos = []
        for po in h.po_partition:
            for ref in h.mp.fmp_refs:
                vals, ms, ns = [], [], []
                for lv, parts in enumerate(parts_by_level):
                    tds = parts[po.id]
                    where = propagation.leaf_id(h.id, po.id, ref.fmp_id)
                    if not tds:
                        log.warning("%s: empty test dataset, leaving the claim unchanged", where)
                        break
                    r = metrics.compute_metric(tds, case_mod.condition_at(ref.condition, lv),
                                               fmp_id=ref.fmp_id, po_id=po.id, hmp_id=h.id,
                                               cfg=cfg, workers=workers)
                    cb = _leaf_bound(r.m, r.N, q, where)
                    vals.append(cb.gamma)
                    ms.append(r.m)
                    ns.append(r.N)
                    rows.append({"hmp": h.id, "po": po.id, "fmp": ref.fmp_id, "level": lv,
                                 "count": r.satisfied_count, "m": r.m, "N": r.N,
                                 "sigma": cb.sigma_q, "bound": cb.gamma, "method": cb.method})
                else:
                    changes[(h.id, po.id, ref.fmp_id)] = (vals, ms, ns)
            new_pos.append(po)
        if with_occurrence:
            new_pos = _occurrence_update(h, new_pos, parts_by_level, q, rows)
        hmps.append(dataclasses.replace(h, po_partition=tuple(new_pos)))
    out = dataclasses.replace(c, hmps=tuple(hmps))
    out = _write_claims(out, changes, q)
    return rows, out


def _occurrence_update(h, pos, parts_by_level, q, rows):
    new = []
    for po in pos:
        if po.is_nominal:
            new.append(po)
            continue
        lo, hi = [], []
        for lv, parts in enumerate(parts_by_level):
            total = sum(len(v) for v in parts.values())
            if total == 0:
                raise CliError(f"G-HMP_{h.id}: no frames satisfy the HBSS filter")
            k = len(parts[po.id])
            m = k / total
            method = stats.EXACT if total <= stats.MIN_NORMAL_N or k in (0, total) else stats.NORMAL
            lo.append(stats.proportion_bound(m, total, q, stats.LOWER, method=method).gamma)
            hi.append(stats.proportion_bound(m, total, q, stats.UPPER, method=method).gamma)
            rows.append({"hmp": h.id, "po": po.id, "fmp": None, "level": lv, "count": k,
                         "m": m, "N": total, "lower": lo[-1], "bound": hi[-1], "method": method})
        new.append(dataclasses.replace(
            po,
            occurrence_lower=case_mod.Bound(tuple(lo), case_mod.LOWER, "estimated", q),
            occurrence_upper=case_mod.Bound(tuple(hi), case_mod.UPPER, "estimated", q)))
    return new


def _write_claims(c, changes, q):
    hmps = []
    for h in c.hmps:
        pos = []
        for po in h.po_partition:
            claims = []
            for cl in po.fmp_claims:
                key = (h.id, po.id, cl.fmp_id)
                if key in changes:
                    vals, ms, ns = changes[key]
                    # sample stats are recorded for the first severity level
                    cl = case_mod.FmpClaim(
                        fmp_id=cl.fmp_id,
                        bound=case_mod.Bound(tuple(vals), case_mod.UPPER, "estimated", q),
                        metric_value=ms[0], sample_size=ns[0], confidence_q=q)
                claims.append(cl)
            have = {cl.fmp_id for cl in claims}
            for (hh, pp, k), (vals, ms, ns) in changes.items():
                if hh == h.id and pp == po.id and k not in have:
                    claims.append(case_mod.FmpClaim(
                        fmp_id=k, bound=case_mod.Bound(tuple(vals), case_mod.UPPER, "estimated", q),
                        metric_value=ms[0], sample_size=ns[0], confidence_q=q))
            pos.append(dataclasses.replace(po, fmp_claims=tuple(claims)))
        hmps.append(dataclasses.replace(h, po_partition=tuple(pos)))
    return dataclasses.replace(c, hmps=tuple(hmps))


def cmd_metrics(args) -> int:
    c = _load_case(args.case)
    fs = _load_frames(args)
    cfg = dsl.EvalConfig(excuse_occluded=args.excuse_occluded)
    rows, updated = run_metrics(c, fs, q=args.q, cfg=cfg, workers=args.workers,
                                with_occurrence=args.with_occurrence)
    kind = _text_or_json(args)
    if kind == "json":
        text = json.dumps({"frames": len(fs), "metrics": rows}, indent=2) + "\n"
    else:
        lines = [f"{len(fs)} frames"]
        for r in rows:
            name = r["fmp"] or "occurrence"
            lines.append(f"{r['hmp']}/{r['po']}/{name}[{r['level']}]: m={r['m']:.4g} "
                         f"({r['count']}/{r['N']}) bound={report.fmt(r['bound'])} [{r['method']}]")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    if args.write_back:
        target = args.write_back
        try:
            case_mod.save_case(updated, target)
        except OSError as exc:
            raise CliError(f"cannot write {target}: {exc.strerror or exc}", IO_FAIL) from None
        log.info("wrote updated case to %s", target)
    return OK


def _sca_params(args) -> sca.ScaParams:
    d = _read_json(args.params, "parameter file") if args.params else {}
    try:
        return sca.ScaParams.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


def cmd_sca(args) -> int:
    p = _sca_params(args)
    r = sca.worst_case_interruption(p, ds=args.ds, dt=args.dt, adversary=args.adversary)
    kind = _text_or_json(args)
    x_sc = sca.standstill_distance(p)
    n_max = sca.max_drive_frames(p)
    if r is None:
        doc = {"hazard": False, "x_sc": x_sc, "n_max_frames": n_max}
        text = (json.dumps(doc, indent=2) + "\n" if kind == "json"
                else "v_init = 0: ego starts at rest, no braking interruption can be hazardous\n")
        _emit(text, args.out)
        return OK
    doc = {"hazard": True, "x_sc": x_sc, **r.as_dict()}
    if kind == "json":
        text = json.dumps(doc, indent=2) + "\n"
    else:
        text = (f"x_sc               {x_sc:.4f} m\n"
                f"t_crash            {r.t_crash:.2f} s\n"
                f"start distance     {r.start_distance:.2f} m travelled "
                f"(gap {r.start_gap:.2f} m, speed {r.start_speed:.2f} m/s)\n"
                f"interruption       {r.interruption_frames} frames\n"
                f"n_crash            {r.n_crash}\n"
                f"n_max              {r.n_max_frames} frames\n")
    _emit(text, args.out)
    return OK


def _sim_config(args) -> sim.SimConfig:
    d = _read_json(args.config, "simulation config") if args.config else {}
    for key in ("p_fna", "trials", "seed", "correlation", "n_crash", "rebrake"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    try:
        return sim.SimConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    r = sim.simulate(cfg, workers=args.workers)
    n_max = sca.max_drive_frames(cfg.sca)
    doc = r.summary()
    doc.update(seed=cfg.seed, p_fna=cfg.p_fna, correlation=cfg.correlation)
    if cfg.correlation == sim.INDEPENDENT:
        doc["analytic_bound"] = stats.binomial_tail(n_max, r.n_crash, cfg.p_fna)
        doc["sampling_sigma"] = sim.sampling_sigma(r.crash_rate, r.trials)
    if args.check_necessity:
        nec = sim.check_necessity(cfg, workers=args.workers)
        doc["necessity_counterexamples"] = len(nec.counterexamples)
        doc["min_fna_in_crash"] = nec.min_fna_in_crash
    if _text_or_json(args) == "json":
        text = json.dumps(doc, indent=2) + "\n"
    else:
        text = "".join(f"{k:26s} {v}\n" for k, v in doc.items())
    _emit(text, args.out)
    if args.check_necessity and doc["necessity_counterexamples"]:
        raise CliError(f"{doc['necessity_counterexamples']} crash(es) with fewer than "
                       f"{r.n_crash} FNA frames")
    return OK


def cmd_export_gsn(args) -> int:
    kind = args.format or "dot"
    if kind not in report.GSN_FORMATS:
        raise CliError(f"unknown graph format {kind!r}; choose dot or json")
    c = _load_case(args.case)
    res = None
    if not case_mod.validate(c):
        try:
            res = propagation.propagate(c)
        except propagation.PropagationError as exc:
            log.warning("exporting without bounds: %s", exc)
    else:
        log.warning("case has violations; exporting without bounds")
    g = report.build_gsn(c, res)
    _emit(report.export_gsn(g, kind), args.out)
    return OK


# -------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="case spec (JSON)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", help="output format (text|json; dot|json for export-gsn)")
    common.add_argument("--seed", type=int, help="RNG seed for simulate")
    common.add_argument("--workers", type=int, default=None, help="worker threads")

    ap = argparse.ArgumentParser(prog="iscap", description="Perception safety-case bound tool.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a case spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("propagate", parents=[common], help="propagate bounds to the top claim")
    p.add_argument("--report", choices=("md", "csv"), default="md")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("allocate", parents=[common], help="split a top budget into fMP targets")
    p.add_argument("--budget", type=float)
    p.add_argument("--weights", help="JSON weights file")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("metrics", parents=[common], help="compute fMP metrics on a dataset")
    p.add_argument("--dataset", help="JSONL frame dataset")
    p.add_argument("--from-kitti", nargs=2, metavar=("LABEL_DIR", "PRED_DIR"))
    p.add_argument("--ego-speed", type=float, default=0.0, help="ego speed for KITTI frames")
    p.add_argument("--write-back", metavar="PATH", help="write the case with computed leaves")
    p.add_argument("--with-occurrence", action="store_true",
                   help="also estimate PO occurrence bounds")
    p.add_argument("--q", type=float, default=99.0, help="confidence level in percent")
    p.add_argument("--iou", type=float, default=0.5, help="matching IoU threshold")
    p.add_argument("--excuse-occluded", action="store_true",
                   help="do not count misses on occluded objects")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sca", parents=[common], help="worst-case braking interruption")
    p.add_argument("--params", help="JSON ScaParams file")
    p.add_argument("--adversary", choices=(sca.ACCELERATE, sca.COAST), default=sca.ACCELERATE)
    p.add_argument("--ds", type=float, default=0.01)
    p.add_argument("--dt", type=float, default=0.01)
    p.set_defaults(func=cmd_sca)

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo drive oracle")
    p.add_argument("--config", help="JSON SimConfig file")
    p.add_argument("--p", dest="p_fna", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--correlation", choices=(sim.INDEPENDENT, sim.ALL_OR_NOTHING))
    p.add_argument("--n-crash", type=int)
    p.add_argument("--rebrake", choices=(sim.AS_NEEDED, sim.EMERGENCY))
    p.add_argument("--check-necessity", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-gsn", parents=[common], help="export the argument graph")
    p.set_defaults(func=cmd_export_gsn)
    return ap


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    def __init__(self):
        super().__init__()
        self.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, _value):
        pass


def _setup_logging() -> None:
    level = os.environ.get("ISCAP_LOG", "WARNING").upper()
    pkg = logging.getLogger("iscap")
    pkg.setLevel(getattr(logging, level, logging.WARNING))
    if not any(isinstance(h, _StderrHandler) for h in pkg.handlers):
        pkg.addHandler(_StderrHandler())


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"iscap {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
