"""Recompute the stopped-car-ahead case study end to end.

    python scripts/reproduce_case_study.py

Prints the kinematic analysis, the leaf bounds recomputed from the
recorded metric values, the linking tails and the propagated top claim.
"""

from iscap import example_case_path
from iscap.case import load_case
from iscap.propagation import propagate
from iscap.report import build_report, fmt, render_markdown
from iscap.sca import ScaParams, standstill_distance, worst_case_interruption
from iscap.stats import binomial_tail, proportion_bound


def main():
    p = ScaParams()
    r = worst_case_interruption(p)
    print("== kinematics")
    print(f"x_sc = {standstill_distance(p):.4f} m, t_crash = {r.t_crash:.2f} s, "
          f"start at {r.start_distance:.2f} m travelled (gap {r.start_gap:.2f} m)")
    print(f"interruption = {r.interruption_frames} frames, n_crash = {r.n_crash}, "
          f"n_max = {r.n_max_frames}")

    case = load_case(example_case_path())
    h = case.hmp("SCA")
    print("\n== leaf bounds (99% normal approximation)")
    print(f"{'PO':6s} {'m':>6s} {'N':>6s} {'sigma':>8s} {'gamma':>8s} {'tail':>10s}")
    for po in h.po_partition:
        c = po.claim("FNA")
        cb = proportion_bound(c.metric_value, c.sample_size, c.confidence_q)
        tail = binomial_tail(r.n_max_frames, r.n_crash, c.bound.at(0))
        print(f"{po.id:6s} {c.metric_value:6.3f} {c.sample_size:6d} {cb.sigma_q:8.4f} "
              f"{cb.gamma:8.4f} {fmt(tail):>10s}")

    crowd = proportion_bound(0.035, 3769, 99)
    print(f"\nCrowd occurrence 0.035 of 3769: sigma {crowd.sigma_q:.4f}, "
          f"bounds [{0.035 - crowd.sigma_q:.3f}, {crowd.gamma:.3f}]")

    print("\n== propagation")
    print(render_markdown(build_report(case, propagate(case))))


if __name__ == "__main__":
    main()
