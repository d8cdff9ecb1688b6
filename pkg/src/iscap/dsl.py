"""Frame-level predicate language.

Grammar::

    expr     := or_expr
    or_expr  := and_expr ('or' and_expr)*
    and_expr := unary ('and' unary)*
    unary    := 'not' unary | atom
    atom     := comparison | builtin | '(' expr ')'
    comparison := term CMP term          CMP in < <= > >= ==
    term     := 'count' '(' filter ')' | 'ego_speed' | NUMBER
    builtin  := 'fn_ahead' '(' ')' | 'exists' '(' filter ')'
    filter   := [item (',' item)*]
    item     := 'class' '=' (car|pedestrian|cyclist|other|any)
              | 'dist' '<=' NUMBER | 'matched' | 'unmatched' | 'ahead'

``count`` and ``exists`` range over ground-truth objects.  ``matched``
refers to whether a ground-truth object has a true-positive prediction,
``ahead`` to the leading object in the ego corridor.

Example::

    >>> render(parse("count(class = any, dist <= 40) > 10"))
    'count(dist<=40) > 10'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

CLASSES = ("car", "pedestrian", "cyclist", "other", "any")
COMPARATORS = ("<", "<=", ">", ">=", "==")
KEYWORDS = {
    "and", "or", "not", "count", "exists", "fn_ahead", "ego_speed",
    "class", "dist", "matched", "unmatched", "ahead", *CLASSES,
}


class DslError(ValueError):
    pass


class DslSyntaxError(DslError):
    def __init__(self, msg: str, line: int, col: int, expected=()):
        self.line = line
        self.col = col
        self.expected = frozenset(expected)
        exp = f" (expected one of: {', '.join(sorted(self.expected))})" if expected else ""
        super().__init__(f"line {line}, column {col}: {msg}{exp}")


class DslNameError(DslSyntaxError):
    pass


# ------------------------------------------------------------------ AST


@dataclass(frozen=True)
class Filter:
    cls: str = "any"
    max_dist: Optional[float] = None
    matched: Optional[bool] = None
    ahead: bool = False


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class EgoSpeed:
    pass


@dataclass(frozen=True)
class Count:
    filter: Filter = Filter()


Term = Union[Num, EgoSpeed, Count]


@dataclass(frozen=True)
class Compare:
    op: str
    left: Term
    right: Term


@dataclass(frozen=True)
class FnAhead:
    pass


@dataclass(frozen=True)
class Exists:
    filter: Filter = Filter()


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    terms: tuple


@dataclass(frozen=True)
class Or:
    terms: tuple


Expr = Union[Compare, FnAhead, Exists, Not, And, Or]


# ---------------------------------------------------------------- lexer

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|==|<|>|=)"
    r"|(?P<punct>[(),])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, ident, op, punct, eof
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        col = pos - line_start + 1
        if m is None:
            raise DslSyntaxError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "ws":
            for i, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        else:
            toks.append(_Tok(kind, text, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# --------------------------------------------------------------- parser


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, expected, tok: Optional[_Tok] = None):
        tok = tok or self.tok
        what = "end of input" if tok.kind == "eof" else f"{tok.text!r}"
        raise DslSyntaxError(f"unexpected {what}", tok.line, tok.col, expected)

    def _is(self, text: str) -> bool:
        return self.tok.kind in ("ident", "op", "punct") and self.tok.text == text

    def _take(self, text: str):
        if not self._is(text):
            self._fail({text})
        self.i += 1

    def parse(self) -> Expr:
        e = self.or_expr()
        if self.tok.kind != "eof":
            self._fail({"and", "or", "end of input"})
        return e

    def or_expr(self) -> Expr:
        terms = [self.and_expr()]
        while self._is("or"):
            self.i += 1
            terms.append(self.and_expr())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def and_expr(self) -> Expr:
        terms = [self.unary()]
        while self._is("and"):
            self.i += 1
            terms.append(self.unary())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def unary(self) -> Expr:
        if self._is("not"):
            self.i += 1
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if self._is("("):
            self.i += 1
            e = self.or_expr()
            self._take(")")
            return e
        if self._is("fn_ahead"):
            self.i += 1
            self._take("(")
            self._take(")")
            return FnAhead()
        if self._is("exists"):
            self.i += 1
            return Exists(self.filter_args())
        if tok.kind == "num" or self._is("count") or self._is("ego_speed"):
            left = self.term()
            if not (self.tok.kind == "op" and self.tok.text in COMPARATORS):
                self._fail(set(COMPARATORS))
            op = self.tok.text
            self.i += 1
            return Compare(op, left, self.term())
        self._check_name(tok)
        self._fail({"not", "(", "fn_ahead", "exists", "count", "ego_speed", "number"})

    def _check_name(self, tok: _Tok):
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            raise DslNameError(f"unknown identifier {tok.text!r}", tok.line, tok.col)

    def term(self) -> Term:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if self._is("ego_speed"):
            self.i += 1
            return EgoSpeed()
        if self._is("count"):
            self.i += 1
            return Count(self.filter_args())
        self._check_name(tok)
        self._fail({"count", "ego_speed", "number"})

    def filter_args(self) -> Filter:
        self._take("(")
        items = {}
        if self._is(")"):
            self.i += 1
            return Filter()
        while True:
            tok = self.tok
            key, val = self.filter_item()
            if key in items:
                raise DslSyntaxError(f"duplicate filter item {tok.text!r}", tok.line, tok.col)
            items[key] = val
            if self._is(","):
                self.i += 1
                continue
            if self._is(")"):
                self.i += 1
                break
            self._fail({",", ")"})
        return Filter(**items)

    def filter_item(self):
        tok = self.tok
        if self._is("class"):
            self.i += 1
            self._take("=")
            c = self.tok
            if c.kind == "ident" and c.text in CLASSES:
                self.i += 1
                return "cls", c.text
            self._check_name(c)
            self._fail(set(CLASSES))
        if self._is("dist"):
            self.i += 1
            self._take("<=")
            n = self.tok
            if n.kind != "num":
                self._fail({"number"})
            self.i += 1
            return "max_dist", float(n.text)
        if self._is("matched") or self._is("unmatched"):
            self.i += 1
            return "matched", tok.text == "matched"
        if self._is("ahead"):
            self.i += 1
            return "ahead", True
        self._check_name(tok)
        self._fail({"class", "dist", "matched", "unmatched", "ahead"})


def parse(source: str) -> Expr:
    """Parse DSL source into an expression tree.

    Raises :class:`DslSyntaxError` (with line/column and the expected
    token set) or :class:`DslNameError` for an unknown identifier.
    """
    if not isinstance(source, str):
        raise DslError(f"predicate source must be text, got {type(source).__name__}")
    return _Parser(source).parse()


# -------------------------------------------------------------- printer


def _num(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _render_filter(f: Filter) -> str:
    items = []
    if f.cls != "any":
        items.append(f"class={f.cls}")
    if f.max_dist is not None:
        items.append(f"dist<={_num(f.max_dist)}")
    if f.matched is not None:
        items.append("matched" if f.matched else "unmatched")
    if f.ahead:
        items.append("ahead")
    return "(" + ", ".join(items) + ")"


def _render_term(t: Term) -> str:
    if isinstance(t, Num):
        return _num(t.value)
    if isinstance(t, EgoSpeed):
        return "ego_speed"
    return "count" + _render_filter(t.filter)


def render(e: Expr) -> str:
    """Canonical source for ``e``; ``parse(render(e)) == e``."""
    if isinstance(e, Compare):
        return f"{_render_term(e.left)} {e.op} {_render_term(e.right)}"
    if isinstance(e, FnAhead):
        return "fn_ahead()"
    if isinstance(e, Exists):
        return "exists" + _render_filter(e.filter)
    if isinstance(e, Not):
        inner = render(e.operand)
        return f"not ({inner})" if isinstance(e.operand, (And, Or)) else f"not {inner}"
    if isinstance(e, And):
        return " and ".join(f"({render(t)})" if isinstance(t, (And, Or)) else render(t)
                            for t in e.terms)
    if isinstance(e, Or):
        return " or ".join(f"({render(t)})" if isinstance(t, Or) else render(t)
                           for t in e.terms)
    raise TypeError(f"not an expression node: {e!r}")


# ------------------------------------------------------------ evaluator


@dataclass(frozen=True)
class EvalConfig:
    """Geometry knobs for ``ahead`` and ``fn_ahead``.

    ``excuse_occluded`` makes ``fn_ahead()`` false when the leading object
    is flagged occluded in the ground truth.
    """

    corridor_half_width: float = 1.5
    excuse_occluded: bool = False


DEFAULT_EVAL = EvalConfig()


def leading_index(frame, half_width: float = 1.5) -> Optional[int]:
    """Index of the nearest ground-truth object ahead in the ego corridor."""
    best = None
    for i, ob in enumerate(frame.objects_gt):
        if ob.x > 0.0 and abs(ob.y) <= half_width:
            if best is None or ob.x < frame.objects_gt[best].x:
                best = i
    return best


def _selected(f: Filter, frame, cfg: EvalConfig) -> list:
    lead = leading_index(frame, cfg.corridor_half_width) if f.ahead else None
    if f.matched is not None and frame.match_table is None:
        raise ValueError(f"frame {frame.frame_id}: match status used before matching")
    out = []
    for i, ob in enumerate(frame.objects_gt):
        if f.cls != "any" and ob.cls != f.cls:
            continue
        if f.max_dist is not None and math.hypot(ob.x, ob.y) > f.max_dist:
            continue
        if f.matched is not None and (frame.match_table[i] is not None) != f.matched:
            continue
        if f.ahead and i != lead:
            continue
        out.append(i)
    return out


def _term(t: Term, frame, cfg: EvalConfig) -> float:
    if isinstance(t, Num):
        return t.value
    if isinstance(t, EgoSpeed):
        return frame.ego_speed
    return float(len(_selected(t.filter, frame, cfg)))


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
}


def fn_ahead(frame, cfg: EvalConfig = DEFAULT_EVAL) -> bool:
    """The leading object exists and no prediction is TP-matched to it."""
    lead = leading_index(frame, cfg.corridor_half_width)
    if lead is None:
        return False
    if frame.match_table is None:
        raise ValueError(f"frame {frame.frame_id}: fn_ahead() needs matching")
    if cfg.excuse_occluded and frame.objects_gt[lead].occluded:
        return False
    return frame.match_table[lead] is None


def evaluate(expr, frame, cfg: EvalConfig = DEFAULT_EVAL) -> bool:
    """Truth value of ``expr`` (tree or source text) on one frame."""
    if isinstance(expr, str):
        expr = parse(expr)
    if isinstance(expr, Compare):
        return _CMP[expr.op](_term(expr.left, frame, cfg), _term(expr.right, frame, cfg))
    if isinstance(expr, FnAhead):
        return fn_ahead(frame, cfg)
    if isinstance(expr, Exists):
        return bool(_selected(expr.filter, frame, cfg))
    if isinstance(expr, Not):
        return not evaluate(expr.operand, frame, cfg)
    if isinstance(expr, And):
        return all(evaluate(t, frame, cfg) for t in expr.terms)
    if isinstance(expr, Or):
        return any(evaluate(t, frame, cfg) for t in expr.terms)
    raise TypeError(f"not an expression node: {expr!r}")
