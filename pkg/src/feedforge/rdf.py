"""Minimal RDF term model and Turtle-subset parser.

Covers what the bundled dataset and tests need: @prefix directives, IRIs,
prefixed names, the `a` keyword, string literals with escapes, language tags,
^^-typed literals, bare numeric/boolean literals, predicate-object lists with
`;` and `,`, labeled blank nodes, and comments. Collections, anonymous blank
nodes, and multi-line strings are out of scope and raise a parse error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterator, Optional, Union

XSD = "http://www.w3.org/2001/XMLSchema#"
XSD_INTEGER = XSD + "integer"
XSD_DECIMAL = XSD + "decimal"
XSD_DOUBLE = XSD + "double"
XSD_BOOLEAN = XSD + "boolean"
XSD_STRING = XSD + "string"

NUMERIC_DATATYPES = frozenset({
    XSD_INTEGER, XSD_DECIMAL, XSD_DOUBLE, XSD + "float",
    XSD + "long", XSD + "int", XSD + "short", XSD + "byte",
    XSD + "nonNegativeInteger", XSD + "positiveInteger",
})


class TurtleParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class IRI:
    value: str

    def __str__(self):
        return f"<{self.value}>"


@dataclass(frozen=True)
class BNode:
    label: str

    def __str__(self):
        return f"_:{self.label}"


@dataclass(frozen=True)
class Literal:
    value: str
    datatype: Optional[str] = None
    lang: Optional[str] = None

    def __str__(self):
        if self.lang:
            return f'"{self.value}"@{self.lang}'
        if self.datatype:
            return f'"{self.value}"^^<{self.datatype}>'
        return f'"{self.value}"'

    @property
    def is_numeric(self) -> bool:
        return self.datatype in NUMERIC_DATATYPES

    def as_decimal(self) -> Decimal:
        return Decimal(self.value)


Term = Union[IRI, BNode, Literal]
Triple = tuple[Term, IRI, Term]


class Graph:
    """A set of triples with pattern scans. None in a pattern is a wildcard."""

    def __init__(self, triples: Optional[list[Triple]] = None):
        self._triples: list[Triple] = []
        self._seen: set[Triple] = set()
        for t in triples or []:
            self.add(t)

    def add(self, triple: Triple) -> None:
        if triple not in self._seen:
            self._seen.add(triple)
            self._triples.append(triple)

    def __len__(self):
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def triples(self, s: Optional[Term] = None, p: Optional[Term] = None,
                o: Optional[Term] = None) -> Iterator[Triple]:
        for t in self._triples:
            if s is not None and t[0] != s:
                continue
            if p is not None and t[1] != p:
                continue
            if o is not None and t[2] != o:
                continue
            yield t

    def value(self, s: Term, p: IRI) -> Optional[Term]:
        for t in self.triples(s, p, None):
            return t[2]
        return None


RDF_TYPE = IRI("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")

_TOKEN_RE = re.compile(r"""
    (?P<comment>\#[^\n]*)
  | (?P<iri><[^<>"{}|^`\\\s]*>)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<kwprefix>@prefix|@base)
  | (?P<langtag>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
  | (?P<dtype>\^\^)
  | (?P<number>[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<bool>\b(?:true|false)\b)
  | (?P<bnode>_:[\w][\w-]*)
  | (?P<kw>\ba(?=[\s<]))
  | (?P<pname>[A-Za-z_][\w-]*(?:\.[\w-]+)*)?:(?P<plocal>[\w][\w-]*(?:\.[\w-]+)*)?
  | (?P<punct>[;,.\[\]()])
  | (?P<ws>\s+)
""", re.VERBOSE)

_STRING_ESCAPES = {
    '"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r",
    "b": "\b", "f": "\f", "'": "'",
}


def _unescape(raw: str, line: int) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        code = raw[i + 1]
        if code in _STRING_ESCAPES:
            out.append(_STRING_ESCAPES[code])
            i += 2
        elif code == "u":
            out.append(chr(int(raw[i + 2:i + 6], 16)))
            i += 6
        elif code == "U":
            out.append(chr(int(raw[i + 2:i + 10], 16)))
            i += 10
        else:
            raise TurtleParseError(f"unknown escape \\{code}", line)
    return "".join(out)


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, str, int]] = []
        line = 1
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == pos:
                raise TurtleParseError(f"cannot tokenize at {text[pos:pos+20]!r}", line)
            kind = m.lastgroup
            raw = m.group(0)
            # a bare ":" (default prefix) leaves every named subgroup unmatched
            if kind in ("plocal", "pname", None):
                kind = "pname"
            if kind == "kwprefix":
                kind = "kw"
            if kind not in ("ws", "comment"):
                self.items.append((kind, raw, line))
            line += raw.count("\n")
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.items[self.i] if self.i < len(self.items) else ("eof", "", -1)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok


def parse_turtle(text: str) -> Graph:
    tokens = _Tokens(text)
    prefixes: dict[str, str] = {}
    graph = Graph()

    def expect(kind, value=None):
        k, v, line = tokens.next()
        if k != kind or (value is not None and v != value):
            raise TurtleParseError(f"expected {value or kind}, got {v!r}", line)
        return v, line

    def resolve_pname(raw: str, line: int) -> IRI:
        prefix, _, local = raw.partition(":")
        if prefix not in prefixes:
            raise TurtleParseError(f"unknown prefix {prefix!r}", line)
        return IRI(prefixes[prefix] + local)

    def parse_term(k, v, line, *, as_predicate=False) -> Term:
        if k == "iri":
            return IRI(v[1:-1])
        if k == "pname":
            return resolve_pname(v, line)
        if k == "kw" and v == "a":
            return RDF_TYPE
        if as_predicate:
            raise TurtleParseError(f"invalid predicate {v!r}", line)
        if k == "bnode":
            return BNode(v[2:])
        if k == "string":
            value = _unescape(v[1:-1], line)
            nk, nv, _ = tokens.peek()
            if nk == "langtag":
                tokens.next()
                return Literal(value, lang=nv[1:])
            if nk == "dtype":
                tokens.next()
                dk, dv, dline = tokens.next()
                dt = parse_term(dk, dv, dline)
                if not isinstance(dt, IRI):
                    raise TurtleParseError("datatype must be an IRI", dline)
                return Literal(value, datatype=dt.value)
            return Literal(value)
        if k == "number":
            if "." in v or "e" in v or "E" in v:
                dt = XSD_DOUBLE if ("e" in v or "E" in v) else XSD_DECIMAL
            else:
                dt = XSD_INTEGER
            return Literal(v, datatype=dt)
        if k == "bool":
            return Literal(v, datatype=XSD_BOOLEAN)
        raise TurtleParseError(f"unexpected token {v!r}", line)

    while True:
        k, v, line = tokens.peek()
        if k == "eof":
            break
        if k == "kw" and v == "@prefix":
            tokens.next()
            pk, pv, pline = tokens.next()
            if pk != "pname" or not pv.endswith(":"):
                raise TurtleParseError(f"bad prefix name {pv!r}", pline)
            iri, _ = expect("iri")
            prefixes[pv[:-1]] = iri[1:-1]
            expect("punct", ".")
            continue
        if k == "kw" and v == "@base":
            raise TurtleParseError("@base is not supported", line)

        sk, sv, sline = tokens.next()
        subject = parse_term(sk, sv, sline)
        if isinstance(subject, Literal):
            raise TurtleParseError("literal cannot be a subject", sline)

        while True:
            pk, pv, pline = tokens.next()
            predicate = parse_term(pk, pv, pline, as_predicate=True)
            while True:
                ok_, ov, oline = tokens.next()
                obj = parse_term(ok_, ov, oline)
                graph.add((subject, predicate, obj))
                nk, nv, _ = tokens.peek()
                if nk == "punct" and nv == ",":
                    tokens.next()
                    continue
                break
            nk, nv, nline = tokens.next()
            if nk == "punct" and nv == ";":
                # allow a dangling ; before the final .
                ahead_k, ahead_v, _ = tokens.peek()
                if ahead_k == "punct" and ahead_v == ".":
                    tokens.next()
                    break
                continue
            if nk == "punct" and nv == ".":
                break
            raise TurtleParseError(f"expected ; , or . got {nv!r}", nline)
    return graph
