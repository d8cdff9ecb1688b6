import pytest
from hypothesis import given, strategies as st

from iscap import dsl
from iscap.dsl import And, Compare, Count, EgoSpeed, Exists, Filter, FnAhead, Not, Num, Or
from iscap.frames import FrameRecord, ObjectBox, match

# --- strategies

filters = st.builds(
    Filter,
    cls=st.sampled_from(dsl.CLASSES),
    max_dist=st.none() | st.sampled_from([0.0, 5.0, 12.5, 40.0, 1e3]),
    matched=st.none() | st.booleans(),
    ahead=st.booleans(),
)
terms = st.one_of(
    st.builds(Num, st.sampled_from([0.0, 1.0, 2.0, 3.5, 10.0, 0.25])),
    st.just(EgoSpeed()),
    st.builds(Count, filters),
)
atoms = st.one_of(
    st.builds(Compare, st.sampled_from(dsl.COMPARATORS), terms, terms),
    st.just(FnAhead()),
    st.builds(Exists, filters),
)


def _extend(children):
    seqs = st.lists(children, min_size=2, max_size=3).map(tuple)
    return st.one_of(st.builds(Not, children), st.builds(And, seqs), st.builds(Or, seqs))


exprs = st.recursive(atoms, _extend, max_leaves=8)


def _flat(e):
    # the parser flattens nested same-kind connectives only through parens
    if isinstance(e, Not):
        return Not(_flat(e.operand))
    if isinstance(e, (And, Or)):
        return type(e)(tuple(_flat(t) for t in e.terms))
    return e


def _box(cls, x, y, **kw):
    return ObjectBox(cls, x, y, 4.0, 1.8, **kw)


boxes = st.builds(
    ObjectBox,
    cls=st.sampled_from(["car", "pedestrian", "cyclist", "other"]),
    x=st.floats(-10, 60), y=st.floats(-8, 8),
    l=st.just(4.0), w=st.just(1.8), occluded=st.booleans(),
)
frame_st = st.builds(
    lambda gt, pred, v: match(FrameRecord("f", v, tuple(gt), tuple(pred))),
    st.lists(boxes, max_size=6), st.lists(boxes, max_size=6), st.floats(0, 30),
)


# --- round trip and algebra

@given(exprs)
def test_render_parse_round_trip(e):
    assert dsl.parse(dsl.render(e)) == _flat(e)


@given(exprs)
def test_render_is_canonical(e):
    src = dsl.render(e)
    assert dsl.render(dsl.parse(src)) == src


@given(st.lists(exprs, min_size=2, max_size=3), frame_st)
def test_de_morgan(parts, frame):
    a = Not(And(tuple(parts)))
    b = Or(tuple(Not(p) for p in parts))
    assert dsl.evaluate(a, frame) == dsl.evaluate(b, frame)
    c = Not(Or(tuple(parts)))
    d = And(tuple(Not(p) for p in parts))
    assert dsl.evaluate(c, frame) == dsl.evaluate(d, frame)


@given(exprs, frame_st)
def test_text_and_tree_agree(e, frame):
    assert dsl.evaluate(dsl.render(e), frame) == dsl.evaluate(e, frame)


# --- parsing details

def test_canonical_example():
    assert dsl.render(dsl.parse("count(class = any, dist <= 40) > 10")) == "count(dist<=40) > 10"


def test_precedence():
    e = dsl.parse("fn_ahead() or exists(class=car) and not exists()")
    assert isinstance(e, Or)
    assert isinstance(e.terms[1], And)
    assert isinstance(e.terms[1].terms[1], Not)


def test_syntax_error_position():
    with pytest.raises(dsl.DslSyntaxError) as ei:
        dsl.parse("exists(class=car) and\n  count(ahead) >")
    err = ei.value
    assert (err.line, err.col) == (2, 17)
    assert "number" in err.expected


def test_unknown_identifier():
    with pytest.raises(dsl.DslNameError) as ei:
        dsl.parse("exists(colour=red)")
    assert ei.value.col == 8


def test_unknown_class_is_name_error():
    with pytest.raises(dsl.DslNameError):
        dsl.parse("exists(class=truck)")


def test_duplicate_filter_item():
    with pytest.raises(dsl.DslSyntaxError):
        dsl.parse("exists(ahead, ahead)")


def test_trailing_garbage():
    with pytest.raises(dsl.DslSyntaxError) as ei:
        dsl.parse("fn_ahead() fn_ahead()")
    assert "or" in ei.value.expected


def test_non_text_source():
    with pytest.raises(dsl.DslError):
        dsl.parse(3)


# --- evaluation

def test_leading_object_and_fn_ahead():
    f = FrameRecord("a", 5.0,
                    objects_gt=(_box("car", 30, 0.5), _box("car", 12, -1.0), _box("car", 8, 3.0)),
                    objects_pred=(_box("car", 30, 0.5),))
    f = match(f)
    assert dsl.leading_index(f) == 1
    assert dsl.fn_ahead(f)
    assert dsl.evaluate("exists(class=car, ahead, unmatched)", f)
    assert dsl.evaluate("count(class=car, matched) == 1", f)
    # the car at (8, 3) is 8.54 m away
    assert not dsl.evaluate("count(dist<=8.5) > 0", f)
    assert dsl.evaluate("count(dist<=10) == 1 and ego_speed >= 5", f)


def test_leading_tie_goes_to_lower_index():
    f = FrameRecord("t", 0.0, objects_gt=(_box("car", 10, 1.0), _box("car", 10, -1.0)))
    assert dsl.leading_index(f) == 0


def test_fn_ahead_false_without_lead():
    f = match(FrameRecord("e", 0.0, objects_gt=(_box("car", -5, 0.0),)))
    assert not dsl.fn_ahead(f)


def test_occlusion_excuse():
    f = match(FrameRecord("o", 0.0, objects_gt=(_box("car", 10, 0.0, occluded=True),)))
    assert dsl.fn_ahead(f)
    assert not dsl.fn_ahead(f, dsl.EvalConfig(excuse_occluded=True))


def test_needs_matching():
    f = FrameRecord("u", 0.0, objects_gt=(_box("car", 10, 0.0),))
    with pytest.raises(ValueError):
        dsl.evaluate("fn_ahead()", f)
