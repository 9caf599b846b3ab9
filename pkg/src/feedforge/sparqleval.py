"""SPARQL SELECT evaluator over an in-memory Graph.

Implements the slice of SPARQL 1.1 that this project's query builder emits
plus a little headroom for hand-written expert queries: basic graph patterns,
OPTIONAL, FILTER, BIND, DISTINCT, ORDER BY (ASC/DESC, multiple keys), LIMIT,
OFFSET, numeric/string expressions, and the functions CONTAINS, LCASE, UCASE,
STR, STRSTARTS, BOUND, ABS. The Virtuoso-style `?var bif:contains "'phrase'"`
pattern is supported as a case-insensitive substring match so both query
dialects behave identically over the mock data.

Per SPARQL semantics, expression type errors inside FILTER make the filter
false for that row rather than failing the whole query.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from functools import cmp_to_key
from typing import Optional, Union

from .rdf import BNode, Graph, IRI, Literal, RDF_TYPE, Term, XSD_DECIMAL

Solution = dict[str, Term]


class SparqlEvalError(ValueError):
    """Query text is outside the supported subset or malformed."""


class _TypeError(Exception):
    """Internal: expression type error; FILTER treats it as false."""


_TOKENS = re.compile(r"""
    (?P<comment>\#[^\n]*)
  | (?P<iri><[^<>"{}|^`\\\s]*>)
  | (?P<string>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<var>[?$][A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<pname>[A-Za-z_][\w-]*)?:(?P<plocal>[\w][\w-]*(?:\.[\w-]+)*)?
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|&&|\|\||[=<>*/+\-!])
  | (?P<punct>[{}().,;^])
  | (?P<ws>\s+)
""", re.VERBOSE)

_KEYWORDS = {
    "SELECT", "DISTINCT", "REDUCED", "WHERE", "OPTIONAL", "FILTER", "BIND",
    "AS", "ORDER", "BY", "ASC", "DESC", "LIMIT", "OFFSET", "PREFIX", "BASE",
    "UNION", "A",
}


@dataclass
class _Tok:
    kind: str
    text: str


def _tokenize(query: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(query):
        m = _TOKENS.match(query, pos)
        if not m or m.end() == pos:
            raise SparqlEvalError(f"cannot tokenize at {query[pos:pos+25]!r}")
        kind = m.lastgroup
        text = m.group(0)
        # a bare ":" (default prefix) leaves every named subgroup unmatched
        if kind in ("pname", "plocal", None):
            kind = "pname"
        if kind == "word" and text.upper() in _KEYWORDS:
            kind = "kw"
            text = text.upper()
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, text))
        pos = m.end()
    return toks


# pattern atoms

@dataclass
class _TriplePattern:
    s: Union[str, Term]   # str means variable name
    p: Union[str, Term]
    o: Union[str, Term]


@dataclass
class _FullText:
    var: str
    phrase: str


@dataclass
class _Filter:
    expr: "_Expr"


@dataclass
class _Bind:
    expr: "_Expr"
    var: str


@dataclass
class _Group:
    items: list


_Expr = tuple  # ("op", ...) trees; see _Parser._expr


class _Parser:
    def __init__(self, query: str):
        self.toks = _tokenize(query)
        self.i = 0
        self.prefixes: dict[str, str] = {"bif": "bif:"}

    def peek(self) -> _Tok:
        return self.toks[self.i] if self.i < len(self.toks) else _Tok("eof", "")

    def next(self) -> _Tok:
        t = self.peek()
        self.i += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None) -> _Tok:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            raise SparqlEvalError(f"expected {text or kind}, got {t.text!r}")
        return t

    # top level

    def parse(self):
        while self.peek().kind == "kw" and self.peek().text == "PREFIX":
            self.next()
            pn = self.expect("pname").text
            if not pn.endswith(":"):
                pn = pn.split(":")[0] + ":"
            iri = self.expect("iri").text
            self.prefixes[pn[:-1]] = iri[1:-1]
        self.expect("kw", "SELECT")
        distinct = False
        if self.peek().kind == "kw" and self.peek().text in ("DISTINCT", "REDUCED"):
            distinct = self.next().text == "DISTINCT"
        variables: list[str] = []
        while self.peek().kind == "var":
            variables.append(self.next().text[1:])
        if not variables:
            raise SparqlEvalError("projection must list variables explicitly")
        if self.peek().kind == "kw" and self.peek().text == "WHERE":
            self.next()
        group = self._group()
        order = []
        if self.peek().kind == "kw" and self.peek().text == "ORDER":
            self.next()
            self.expect("kw", "BY")
            while True:
                t = self.peek()
                if t.kind == "kw" and t.text in ("ASC", "DESC"):
                    direction = self.next().text
                    self.expect("punct", "(")
                    expr = self._expr()
                    self.expect("punct", ")")
                    order.append((direction, expr))
                elif t.kind == "var":
                    order.append(("ASC", ("var", self.next().text[1:])))
                else:
                    break
        limit = offset = None
        while self.peek().kind == "kw" and self.peek().text in ("LIMIT", "OFFSET"):
            kw = self.next().text
            num = self.expect("number").text
            if kw == "LIMIT":
                limit = int(num)
            else:
                offset = int(num)
        if self.peek().kind != "eof":
            raise SparqlEvalError(f"trailing content: {self.peek().text!r}")
        return variables, distinct, group, order, limit, offset

    # group graph pattern

    def _group(self) -> _Group:
        self.expect("punct", "{")
        items: list = []
        while True:
            t = self.peek()
            if t.kind == "punct" and t.text == "}":
                self.next()
                return _Group(items)
            if t.kind == "eof":
                raise SparqlEvalError("unterminated group")
            if t.kind == "kw" and t.text == "OPTIONAL":
                self.next()
                items.append(("optional", self._group()))
            elif t.kind == "kw" and t.text == "FILTER":
                self.next()
                self.expect("punct", "(")
                expr = self._expr()
                self.expect("punct", ")")
                items.append(_Filter(expr))
            elif t.kind == "kw" and t.text == "BIND":
                self.next()
                self.expect("punct", "(")
                expr = self._expr()
                self.expect("kw", "AS")
                var = self.expect("var").text[1:]
                self.expect("punct", ")")
                items.append(_Bind(expr, var))
            elif t.kind == "kw" and t.text == "UNION":
                raise SparqlEvalError("UNION is not supported")
            elif t.kind == "punct" and t.text == "{":
                raise SparqlEvalError("nested groups/subqueries are not supported")
            else:
                items.extend(self._triples_block())
                if self.peek().kind == "punct" and self.peek().text == ".":
                    self.next()
        raise AssertionError

    def _term(self) -> Union[str, Term]:
        t = self.next()
        if t.kind == "var":
            return t.text[1:]
        if t.kind == "iri":
            return IRI(t.text[1:-1])
        if t.kind == "pname":
            prefix, _, local = t.text.partition(":")
            if prefix == "bif":
                return ("bif", local)
            if prefix not in self.prefixes:
                raise SparqlEvalError(f"unknown prefix {prefix!r}")
            return IRI(self.prefixes[prefix] + local)
        if t.kind == "kw" and t.text == "A":
            return RDF_TYPE
        if t.kind == "string":
            return Literal(_unquote(t.text))
        if t.kind == "number":
            return Literal(t.text, datatype=XSD_DECIMAL)
        raise SparqlEvalError(f"unexpected term {t.text!r}")

    def _triples_block(self) -> list:
        subject = self._term()
        if isinstance(subject, tuple):
            raise SparqlEvalError("bif: cannot start a triple")
        out: list = []
        while True:
            predicate = self._term()
            if isinstance(predicate, tuple) and predicate[0] == "bif":
                if predicate[1] != "contains":
                    raise SparqlEvalError(f"unsupported bif:{predicate[1]}")
                obj = self._term()
                if not isinstance(obj, Literal):
                    raise SparqlEvalError("bif:contains needs a literal pattern")
                if not isinstance(subject, str):
                    raise SparqlEvalError("bif:contains needs a variable subject")
                out.append(_FullText(subject, obj.value.strip("'")))
            else:
                obj = self._term()
                if isinstance(obj, tuple):
                    raise SparqlEvalError("bif: term cannot be an object")
                out.append(_TriplePattern(subject, predicate, obj))
                while self.peek().kind == "punct" and self.peek().text == ",":
                    self.next()
                    obj = self._term()
                    out.append(_TriplePattern(subject, predicate, obj))
            if self.peek().kind == "punct" and self.peek().text == ";":
                self.next()
                # tolerate dangling ; before }
                if self.peek().kind == "punct" and self.peek().text in "}.":
                    break
                continue
            break
        return out

    # expressions, precedence: || < && < comparison < additive < multiplicative < unary

    def _expr(self) -> _Expr:
        left = self._and()
        while self.peek().kind == "op" and self.peek().text == "||":
            self.next()
            left = ("||", left, self._and())
        return left

    def _and(self) -> _Expr:
        left = self._cmp()
        while self.peek().kind == "op" and self.peek().text == "&&":
            self.next()
            left = ("&&", left, self._cmp())
        return left

    def _cmp(self) -> _Expr:
        left = self._add()
        if self.peek().kind == "op" and self.peek().text in ("=", "!=", "<", "<=", ">", ">="):
            op = self.next().text
            return ("cmp", op, left, self._add())
        return left

    def _add(self) -> _Expr:
        left = self._mul()
        while self.peek().kind == "op" and self.peek().text in ("+", "-"):
            op = self.next().text
            left = ("arith", op, left, self._mul())
        return left

    def _mul(self) -> _Expr:
        left = self._unary()
        while self.peek().kind == "op" and self.peek().text in ("*", "/"):
            op = self.next().text
            left = ("arith", op, left, self._unary())
        return left

    def _unary(self) -> _Expr:
        t = self.peek()
        if t.kind == "op" and t.text == "!":
            self.next()
            return ("!", self._unary())
        if t.kind == "op" and t.text == "-":
            self.next()
            return ("neg", self._unary())
        return self._primary()

    def _primary(self) -> _Expr:
        t = self.next()
        if t.kind == "punct" and t.text == "(":
            e = self._expr()
            self.expect("punct", ")")
            return e
        if t.kind == "var":
            return ("var", t.text[1:])
        if t.kind == "number":
            return ("num", Decimal(t.text))
        if t.kind == "string":
            return ("str", _unquote(t.text))
        if t.kind == "iri":
            return ("iri", IRI(t.text[1:-1]))
        if t.kind == "word":
            fn = t.text.upper()
            self.expect("punct", "(")
            args = []
            if not (self.peek().kind == "punct" and self.peek().text == ")"):
                args.append(self._expr())
                while self.peek().kind == "punct" and self.peek().text == ",":
                    self.next()
                    args.append(self._expr())
            self.expect("punct", ")")
            return ("fn", fn, args)
        raise SparqlEvalError(f"unexpected expression token {t.text!r}")


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    return body.replace('\\"', '"').replace("\\'", "'").replace("\\\\", "\\")


# evaluation

def _match_term(pattern: Union[str, Term], term: Term, sol: Solution) -> Optional[Solution]:
    if isinstance(pattern, str):
        bound = sol.get(pattern)
        if bound is None:
            new = dict(sol)
            new[pattern] = term
            return new
        return sol if bound == term else None
    return sol if pattern == term else None


def _eval_bgp(graph: Graph, pattern: _TriplePattern, sols: list[Solution]) -> list[Solution]:
    out: list[Solution] = []
    for sol in sols:
        s = sol.get(pattern.s) if isinstance(pattern.s, str) else pattern.s
        p = sol.get(pattern.p) if isinstance(pattern.p, str) else pattern.p
        o = sol.get(pattern.o) if isinstance(pattern.o, str) else pattern.o
        for (ts, tp, to) in graph.triples(
                s if isinstance(s, (IRI, BNode)) else None,
                p if isinstance(p, IRI) else None,
                o if isinstance(o, (IRI, BNode, Literal)) else None):
            step = _match_term(pattern.s, ts, sol)
            if step is None:
                continue
            step = _match_term(pattern.p, tp, step)
            if step is None:
                continue
            step = _match_term(pattern.o, to, step)
            if step is not None:
                out.append(step)
    return out


def _eval_fulltext(item: _FullText, sols: list[Solution]) -> list[Solution]:
    out = []
    needle = item.phrase.lower()
    for sol in sols:
        term = sol.get(item.var)
        if isinstance(term, Literal) and needle in term.value.lower():
            out.append(sol)
    return out


def _to_value(term: Term):
    if isinstance(term, Literal):
        if term.is_numeric:
            try:
                return term.as_decimal()
            except InvalidOperation:
                raise _TypeError
        return term.value
    if isinstance(term, IRI):
        return term
    raise _TypeError


def _eval_expr(expr: _Expr, sol: Solution):
    op = expr[0]
    if op == "var":
        term = sol.get(expr[1])
        if term is None:
            raise _TypeError
        return _to_value(term)
    if op == "num":
        return expr[1]
    if op == "str":
        return expr[1]
    if op == "iri":
        return expr[1]
    if op == "&&":
        return _ebv(expr[1], sol) and _ebv(expr[2], sol)
    if op == "||":
        return _ebv(expr[1], sol) or _ebv(expr[2], sol)
    if op == "!":
        return not _ebv(expr[1], sol)
    if op == "neg":
        v = _eval_expr(expr[1], sol)
        if not isinstance(v, Decimal):
            raise _TypeError
        return -v
    if op == "cmp":
        return _compare(expr[1], _eval_expr(expr[2], sol), _eval_expr(expr[3], sol))
    if op == "arith":
        a, b = _eval_expr(expr[2], sol), _eval_expr(expr[3], sol)
        if not isinstance(a, Decimal) or not isinstance(b, Decimal):
            raise _TypeError
        try:
            return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[expr[1]]
        except (InvalidOperation, ZeroDivisionError):
            raise _TypeError
    if op == "fn":
        return _eval_fn(expr[1], expr[2], sol)
    raise SparqlEvalError(f"unknown expression node {op!r}")


def _eval_fn(name: str, args: list, sol: Solution):
    if name == "BOUND":
        if args and args[0][0] == "var":
            return args[0][1] in sol
        raise SparqlEvalError("BOUND needs a variable")
    values = [_eval_expr(a, sol) for a in args]
    if name == "STR":
        v = values[0]
        if isinstance(v, IRI):
            return v.value
        if isinstance(v, Decimal):
            return str(v)
        return v
    if name == "LCASE":
        if not isinstance(values[0], str):
            raise _TypeError
        return values[0].lower()
    if name == "UCASE":
        if not isinstance(values[0], str):
            raise _TypeError
        return values[0].upper()
    if name == "CONTAINS":
        if not all(isinstance(v, str) for v in values[:2]):
            raise _TypeError
        return values[1] in values[0]
    if name == "STRSTARTS":
        if not all(isinstance(v, str) for v in values[:2]):
            raise _TypeError
        return values[0].startswith(values[1])
    if name == "ABS":
        if not isinstance(values[0], Decimal):
            raise _TypeError
        return abs(values[0])
    raise SparqlEvalError(f"unsupported function {name}")


def _compare(op: str, a, b) -> bool:
    if isinstance(a, IRI) and isinstance(b, IRI):
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        raise _TypeError
    if isinstance(a, bool) or isinstance(b, bool):
        raise _TypeError
    if isinstance(a, Decimal) != isinstance(b, Decimal):
        raise _TypeError
    try:
        return {"=": a == b, "!=": a != b, "<": a < b,
                "<=": a <= b, ">": a > b, ">=": a >= b}[op]
    except TypeError:
        raise _TypeError


def _ebv(expr: _Expr, sol: Solution) -> bool:
    try:
        v = _eval_expr(expr, sol)
    except _TypeError:
        return False
    if isinstance(v, bool):
        return v
    if isinstance(v, Decimal):
        return v != 0
    if isinstance(v, str):
        return bool(v)
    return False


def _eval_group(graph: Graph, group: _Group, seed: list[Solution]) -> list[Solution]:
    sols = seed
    filters: list[_Filter] = []
    for item in group.items:
        if isinstance(item, _TriplePattern):
            sols = _eval_bgp(graph, item, sols)
        elif isinstance(item, _FullText):
            sols = _eval_fulltext(item, sols)
        elif isinstance(item, _Filter):
            filters.append(item)
        elif isinstance(item, _Bind):
            new_sols = []
            for sol in sols:
                if item.var in sol:
                    raise SparqlEvalError(f"BIND reuses bound variable ?{item.var}")
                try:
                    value = _eval_expr(item.expr, sol)
                except _TypeError:
                    new_sols.append(sol)
                    continue
                new = dict(sol)
                new[item.var] = _value_to_term(value)
                new_sols.append(new)
            sols = new_sols
        elif isinstance(item, tuple) and item[0] == "optional":
            inner: _Group = item[1]
            merged = []
            for sol in sols:
                extended = _eval_group(graph, inner, [sol])
                merged.extend(extended if extended else [sol])
            sols = merged
        else:
            raise SparqlEvalError(f"unsupported group item {item!r}")
    for f in filters:
        sols = [s for s in sols if _ebv(f.expr, s)]
    return sols


def _value_to_term(value) -> Term:
    if isinstance(value, (IRI, BNode, Literal)):
        return value
    if isinstance(value, Decimal):
        return Literal(str(value), datatype=XSD_DECIMAL)
    if isinstance(value, bool):
        return Literal("true" if value else "false",
                       datatype="http://www.w3.org/2001/XMLSchema#boolean")
    if isinstance(value, str):
        return Literal(value)
    raise SparqlEvalError(f"cannot convert {value!r} to an RDF term")


def _sort_key_cmp(order):
    def term_rank(term: Optional[Term]):
        if term is None:
            return (0, "")
        if isinstance(term, BNode):
            return (1, term.label)
        if isinstance(term, IRI):
            return (2, term.value)
        if isinstance(term, Literal):
            if term.is_numeric:
                try:
                    return (3, term.as_decimal())
                except InvalidOperation:
                    return (4, term.value)
            return (4, term.value)
        return (5, "")

    def one(direction, expr, a: Solution, b: Solution) -> int:
        def evaluate(sol):
            try:
                return _value_to_term(_eval_expr(expr, sol))
            except _TypeError:
                return None
        ka, kb = term_rank(evaluate(a)), term_rank(evaluate(b))
        if ka[0] != kb[0]:
            result = -1 if ka[0] < kb[0] else 1
        elif ka[1] == kb[1]:
            return 0
        else:
            result = -1 if ka[1] < kb[1] else 1
        return -result if direction == "DESC" else result

    def compare(a: Solution, b: Solution) -> int:
        for direction, expr in order:
            r = one(direction, expr, a, b)
            if r:
                return r
        return 0

    return cmp_to_key(compare)


def evaluate(graph: Graph, query: str) -> tuple[list[str], list[Solution]]:
    """Run a SELECT query; returns (projected variables, solution rows)."""
    variables, distinct, group, order, limit, offset = _Parser(query).parse()
    sols = _eval_group(graph, group, [{}])
    if order:
        sols = sorted(sols, key=_sort_key_cmp(order))
    projected: list[Solution] = []
    for sol in sols:
        projected.append({v: sol[v] for v in variables if v in sol})
    if distinct:
        seen = set()
        unique = []
        for sol in projected:
            key = tuple(sorted((k, str(v)) for k, v in sol.items()))
            if key not in seen:
                seen.add(key)
                unique.append(sol)
        projected = unique
    if offset:
        projected = projected[offset:]
    if limit is not None:
        projected = projected[:limit]
    return variables, projected
