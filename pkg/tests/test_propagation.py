from dataclasses import replace

import pytest
from hypothesis import assume, given, strategies as st

from iscap import propagation as pg
from iscap.case import Bound, FmpClaim, FmpRef, LinkingExprRef, SafetyCase, with_fmp_bounds
from iscap.stats import binomial_tail

from strategies import cases


def leaf_keys(case):
    return [(h.id, p.id, c.fmp_id) for h in case.hmps for p in h.po_partition for c in p.fmp_claims]


# --- case study replay

def test_sca_case_values(sca_case):
    r = pg.propagate(sca_case)
    assert r.value("G-PO_SCA,Nom") == 0.973
    assert r.value("G-PO_SCA,Nom-MR") == pytest.approx(1.153138e-5, rel=1e-6)
    assert r.value("G-PO_SCA,Crowd-MR") == pytest.approx(2.061357e-3, rel=1e-6)
    mr = 0.973 * binomial_tail(55, 14, 0.067) + 0.043 * binomial_tail(55, 14, 0.110)
    assert r.value("G-MP_SCA-MR") == pytest.approx(mr, rel=1e-12)
    assert r.value("G-HMP_SCA") == pytest.approx(mr * 0.0022, rel=1e-12)
    assert r.residual_symbolic
    assert r.top == (r.value("G-HMP_SCA"),)


def test_trace_replays_exactly(sca_case):
    r = pg.propagate(sca_case)
    assert pg.replay(r.trace) == {(s.claim, s.level): s.output for s in r.trace}


def test_leaf_from_recorded_metric(sca_case):
    h = sca_case.hmp("SCA")
    pos = tuple(replace(p, fmp_claims=tuple(replace(c, bound=None) for c in p.fmp_claims))
                for p in h.po_partition)
    case = replace(sca_case, hmps=(replace(h, po_partition=pos),))
    r = pg.propagate(case)
    assert r.value("G-fMP_SCA,Nom,FNA-MR") == pytest.approx(0.06687, abs=5e-5)
    assert r.value("G-fMP_SCA,Crowd,FNA-MR") == pytest.approx(0.11024, abs=5e-5)
    assert r.provenance["G-fMP_SCA,Nom,FNA-MR"] == "estimated"
    steps = {s.claim: s for s in r.trace}
    assert steps["G-fMP_SCA,Nom,FNA-MR"].formula == "normal_upper"
    # full-precision leaves move the top claim by a few percent only
    assert r.top[0] == pytest.approx(2.20e-7, rel=0.05)


def test_small_sample_leaf_uses_exact(sca_case):
    h = sca_case.hmp("SCA")
    pos = tuple(replace(p, fmp_claims=(FmpClaim("FNA", metric_value=0.1, sample_size=20),))
                for p in h.po_partition)
    r = pg.propagate(replace(sca_case, hmps=(replace(h, po_partition=pos),)))
    assert {s.claim: s.formula for s in r.trace}["G-fMP_SCA,Nom,FNA-MR"] == "exact_upper"


def test_empty_case():
    r = pg.propagate(SafetyCase("C", "T", residual_bound=Bound.of(0.006)))
    assert r.top == (0.006,)
    r = pg.propagate(SafetyCase("C", "T"))
    assert r.top == (0.0,) and r.residual_symbolic


def test_asserted_po_mr(sca_case):
    h = sca_case.hmp("SCA")
    pos = tuple(replace(p, mr_bound=Bound.of(1e-3)) if p.id == "Crowd" else p for p in h.po_partition)
    r = pg.propagate(replace(sca_case, hmps=(replace(h, po_partition=pos),)))
    assert r.value("G-PO_SCA,Crowd-MR") == 1e-3
    assert "G-fMP_SCA,Crowd,FNA-MR" not in r.bounds


def test_multi_fmp_union(sca_case):
    h = sca_case.hmp("SCA")
    mp = replace(h.mp, fmp_refs=h.mp.fmp_refs + (FmpRef("FPA", 3, "exists(class=car)"),))
    pos = tuple(replace(p, fmp_claims=p.fmp_claims + (FmpClaim("FPA", Bound.of(0.01)),))
                for p in h.po_partition)
    r = pg.propagate(replace(sca_case, hmps=(replace(h, mp=mp, po_partition=pos),)))
    expect = binomial_tail(55, 14, 0.067) + binomial_tail(55, 14, 0.01)
    assert r.value("G-PO_SCA,Nom-MR") == pytest.approx(expect, rel=1e-12)
    assert "G-PO_SCA,Nom-MR/FPA" in r.bounds


def test_k_min_defaults_to_threshold(sca_case):
    h = sca_case.hmp("SCA")
    pos = tuple(replace(p, linking=LinkingExprRef(n_max=55)) for p in h.po_partition)
    r = pg.propagate(replace(sca_case, hmps=(replace(h, po_partition=pos),)))
    assert r.top == pg.propagate(sca_case).top


def test_clamp_warns(sca_case):
    h = sca_case.hmp("SCA")
    case = replace(sca_case, residual_bound=Bound.of(0.9),
                   hmps=(replace(h, hbss_exposure_bound=Bound.of(1.0), crash_rate_bound=Bound.of(1.0)),))
    case = with_fmp_bounds(case, {("SCA", "Nom", "FNA"): Bound.of(0.9), ("SCA", "Crowd", "FNA"): Bound.of(0.9)})
    r = pg.propagate(case)
    assert r.top == (1.0,)
    assert any(w.startswith("G-C[") for w in r.warnings)


def test_missing_bound_error(sca_case):
    h = sca_case.hmp("SCA")
    with pytest.raises(pg.PropagationError, match="G-MP_SCA-CR"):
        pg.propagate(replace(sca_case, hmps=(replace(h, crash_rate_bound=None),)))


def test_severity_levels(sca_case):
    from iscap.case import expand_severity
    two = expand_severity(sca_case, 2)
    two = with_fmp_bounds(two, {("SCA", "Nom", "FNA"): Bound((0.067, 0.03))})
    r = pg.propagate(two)
    assert r.top[0] == pytest.approx(pg.propagate(sca_case).top[0], rel=1e-12)
    assert r.top[1] < r.top[0]


# --- linking

def test_linking_kinds():
    assert pg.eval_linking(LinkingExprRef("all-or-nothing"), 0.3) == 0.3
    ct = LinkingExprRef("custom-tail", table=((0.1, 0.01), (0.5, 0.2)))
    assert pg.eval_linking(ct, 0.05) == 0.01
    assert pg.eval_linking(ct, 0.3) == pytest.approx(0.105)
    assert pg.eval_linking(ct, 0.6) == 1.0
    assert pg.eval_linking(LinkingExprRef(n_max=55, k_min=14), 0.067) == pytest.approx(1.153138e-5, rel=1e-6)
    with pytest.raises(ValueError):
        pg.eval_linking(ct, 1.5)


@given(st.integers(1, 80), st.data(), st.floats(1e-12, 1.0))
def test_invert_linking(n, data, target):
    k = data.draw(st.integers(1, n))
    link = LinkingExprRef(n_max=n, k_min=k)
    p = pg.invert_linking(link, target)
    assert pg.eval_linking(link, p) <= target
    if p < 1.0:
        assert pg.eval_linking(link, min(1.0, p * (1 + 1e-6) + 1e-15)) >= target * (1 - 1e-6)


def test_invert_custom_tail_floor():
    ct = LinkingExprRef("custom-tail", table=((0.0, 0.01), (1.0, 1.0)))
    with pytest.raises(pg.InfeasibleAllocation):
        pg.invert_linking(ct, 0.001)


# --- properties

@given(cases(), st.data())
def test_replay_property(case, data):
    r = pg.propagate(case)
    assert pg.replay(r.trace) == {(s.claim, s.level): s.output for s in r.trace}


@given(cases(), st.data(), st.floats(0.0, 1.0))
def test_monotone_in_leaf_bounds(case, data, frac):
    keys = leaf_keys(case)
    assume(keys)
    key = data.draw(st.sampled_from(keys))
    h, p, k = key
    old = case.hmp(h).po(p).claim(k).bound
    bumped = Bound(tuple(v + frac * (1.0 - v) for v in old.value), provenance="estimated")
    before = pg.propagate(case).top
    after = pg.propagate(with_fmp_bounds(case, {key: bumped})).top
    assert all(a >= b - 1e-15 for a, b in zip(after, before))


@given(cases(), st.data())
def test_monotone_in_exposure(case, data):
    assume(case.hmps)
    i = data.draw(st.integers(0, len(case.hmps) - 1))
    h = case.hmps[i]
    up = Bound(tuple(min(1.0, v * 2 + 0.01) for v in h.hbss_exposure_bound.value))
    hmps = list(case.hmps)
    hmps[i] = replace(h, hbss_exposure_bound=up)
    before = pg.propagate(case).top
    after = pg.propagate(replace(case, hmps=tuple(hmps))).top
    assert all(a >= b - 1e-15 for a, b in zip(after, before))


@given(cases(), st.floats(1e-9, 1.0))
def test_allocate_then_propagate_within_budget(case, budget):
    assume(case.hmps)
    try:
        alloc = pg.allocate(case, budget)
    except pg.InfeasibleAllocation:
        assume(False)
    r = pg.propagate(pg.apply_allocation(case, alloc))
    assert all(v <= budget for v in r.top)


@given(cases(), st.data())
def test_reuse_delta_matches_full(case, data):
    keys = leaf_keys(case)
    assume(keys)
    key = data.draw(st.sampled_from(keys))
    L = case.severity_levels
    nb = Bound(tuple(data.draw(st.floats(0, 1)) for _ in range(L)), provenance="estimated")
    prior = pg.propagate(case)
    delta = pg.reuse_delta(case, prior, {key: nb})
    full = pg.propagate(with_fmp_bounds(case, {key: nb}))
    assert delta == full
    untouched = {s.claim for s in prior.trace if s.claim.startswith("G-fMP_")
                 and not s.claim.startswith(f"G-fMP_{key[0]},{key[1]},")}
    assert not (untouched & delta.recomputed)


def test_reuse_delta_locality(sca_case):
    prior = pg.propagate(sca_case)
    r = pg.reuse_delta(sca_case, prior, {("SCA", "Crowd", "FNA"): 0.2})
    assert "G-PO_SCA,Nom-MR" not in r.recomputed
    assert {"G-PO_SCA,Crowd-MR", "G-MP_SCA-MR", "G-HMP_SCA", "G-C"} <= r.recomputed


def test_workers_identical():
    from hypothesis import find
    case = find(cases(max_hmps=3), lambda c: len(c.hmps) == 3)
    assert pg.propagate(case, workers=4) == pg.propagate(case)


# --- allocation examples

def test_allocate_sca(sca_case):
    alloc = pg.allocate(sca_case, 1e-6)
    r = pg.propagate(pg.apply_allocation(sca_case, alloc))
    assert r.top[0] <= 1e-6
    assert r.top[0] == pytest.approx(1e-6, rel=1e-6)
    t_nom = alloc.targets[("SCA", "Nom", "FNA")][0]
    t_crowd = alloc.targets[("SCA", "Crowd", "FNA")][0]
    # even split between POs: the rarer PO gets the looser per-frame target
    assert t_crowd > t_nom


def test_allocate_weights(sca_case):
    w = {"pos": {"SCA": {"Nom": 0.9, "Crowd": 0.1}}}
    a = pg.allocate(sca_case, 1e-6, w)
    b = pg.allocate(sca_case, 1e-6)
    assert a.targets[("SCA", "Nom", "FNA")][0] > b.targets[("SCA", "Nom", "FNA")][0]
    with pytest.raises(ValueError):
        pg.allocate(sca_case, 1e-6, {"pos": {"SCA": {"Nom": 0.5}}})


def test_allocate_infeasible(sca_case):
    case = replace(sca_case, residual_bound=Bound.of(1e-5))
    with pytest.raises(pg.InfeasibleAllocation):
        pg.allocate(case, 1e-5)
    with pytest.raises(pg.InfeasibleAllocation):
        pg.allocate(SafetyCase("C", "T"), 1e-5)
