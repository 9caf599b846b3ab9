"""Compile search requests into deterministic SPARQL SELECT queries.

Two keyword dialects are supported: `fulltext_index` emits the Virtuoso
full-text predicate (bif:contains) and `standard11` emits a case-insensitive
substring FILTER using only SPARQL 1.1 constructs. Everything else is shared.

The graph patterns target GoodRelations-style offer data and are a fixture of
this module (the bundled dataset and any endpoint this tool queries must
follow them):

    ?entity a gr:Offering .                      # offering type
    ?entity gr:name ?title .                     # title
    ?entity gr:description ?description .        # optional
    ?entity gr:hasPriceSpecification ?priceSpec .
    ?priceSpec gr:hasCurrencyValue ?price .      # decimal amount
    ?priceSpec gr:hasCurrency ?currency .        # ISO-4217 literal
    ?entity foaf:depiction ?image .              # optional product picture
    ?entity foaf:page ?page .                    # optional shop page
    ?entity gr:availableAtOrFrom ?store .
    ?store geo:lat ?lat . ?store geo:long ?long  # WGS 84 store coordinates

Keyword safety is by rejection, not escaping: quotes, backslashes and control
characters never make it into a query, so a keyword can only ever appear as
an inert quoted literal. Every produced query carries an ORDER BY with a full
tie-break on ?entity, which keeps feed bytes reproducible across runs even
when the endpoint's natural result order is not stable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .currency import RateTable, UnknownCurrencyError, XRO, conversion_clause
from .geo import BoundingBox, bounding_box
from .model import SearchMode, SearchRequest, SortOrder, validate_request

GR = "http://purl.org/goodrelations/v1#"
FOAF = "http://xmlns.com/foaf/0.1/"
WGS84 = "http://www.w3.org/2003/01/geo/wgs84_pos#"

# The only variables feed templates know how to consume.
CANONICAL_VARIABLES = (
    "entity", "title", "description", "price", "currency",
    "image", "page", "lat", "long", "updated",
)


class SparqlDialect(str, Enum):
    FULLTEXT_INDEX = "fulltext_index"
    STANDARD11 = "standard11"


class QueryBuildError(ValueError):
    """A query could not be compiled from the given inputs."""


class UnsafeKeywordError(QueryBuildError):
    """Keyword contains characters that could escape a quoted literal."""


class ExpertQueryError(QueryBuildError):
    """A raw expert query was rejected; .variable carries the offending name."""

    def __init__(self, message: str, variable: Optional[str] = None):
        super().__init__(message)
        self.variable = variable


@dataclass(frozen=True)
class SparqlQuery:
    """A complete SELECT query plus the metadata feed templates need."""

    text: str
    dialect: SparqlDialect
    output_variables: tuple[str, ...]
    limit: int

    def __post_init__(self):
        object.__setattr__(self, "output_variables", tuple(self.output_variables))
        unknown = [v for v in self.output_variables if v not in CANONICAL_VARIABLES]
        if unknown:
            raise QueryBuildError(f"non-canonical output variables: {unknown}")
        stripped = strip_string_literals(self.text)
        if len(re.findall(r"\bSELECT\b", stripped, re.IGNORECASE)) != 1:
            raise QueryBuildError("query must contain exactly one SELECT clause")
        if not self.text.rstrip().endswith(f"LIMIT {self.limit}"):
            raise QueryBuildError(f"query must terminate with LIMIT {self.limit}")


def strip_string_literals(text: str) -> str:
    """Blank out string literal contents (and # comments), preserving offsets.

    Used wherever query structure must be inspected without being fooled by
    quoted content: clause fingerprinting, top-level LIMIT detection.
    """
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in "\"'":
            quote = ch
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == quote:
                    break
                j += 1
            for k in range(i + 1, min(j, n)):
                out[k] = " "
            i = j + 1
        elif ch == "<":
            # IRIs cannot contain whitespace or quotes; anything else is the
            # comparison operator. Blank IRI contents so a # fragment inside
            # is not mistaken for a comment.
            j = i + 1
            while j < n and text[j] not in " \t\r\n\"'<":
                if text[j] == ">":
                    break
                j += 1
            if j < n and text[j] == ">":
                for k in range(i + 1, j):
                    out[k] = " "
                i = j + 1
            else:
                i += 1
        elif ch == "#":
            j = i
            while j < n and text[j] != "\n":
                out[j] = " "
                j += 1
            i = j
        else:
            i += 1
    return "".join(out)


def sanitize_keyword(keyword: str) -> str:
    """Trim and vet a search keyword; rejection is the injection defense."""
    kw = (keyword or "").strip()
    if not kw:
        raise QueryBuildError("keyword must be non-empty")
    for ch in kw:
        if ch in "\"'\\" or ord(ch) < 0x20 or ord(ch) == 0x7F:
            raise UnsafeKeywordError(
                f"keyword contains a forbidden character: {ch!r}")
    return kw


def _keyword_clause(keyword: str, dialect: SparqlDialect) -> str:
    if dialect is SparqlDialect.FULLTEXT_INDEX:
        # Virtuoso full-text index predicate; inner quotes make it a phrase.
        return f"  ?title bif:contains \"'{keyword}'\" ."
    return f'  FILTER(CONTAINS(LCASE(STR(?title)), LCASE("{keyword}")))'


def _prologue(*, with_geo: bool = False, with_rates: bool = False) -> list[str]:
    lines = [f"PREFIX gr: <{GR}>", f"PREFIX foaf: <{FOAF}>"]
    if with_geo:
        lines.append(f"PREFIX geo: <{WGS84}>")
    if with_rates:
        lines.append(f"PREFIX xro: <{XRO}>")
    return lines


def _render_number(value) -> str:
    return str(value)


def build_basic(keyword: str, limit: int, dialect: SparqlDialect) -> SparqlQuery:
    """Keyword-only offer search: title match plus every optional offer field."""
    kw = sanitize_keyword(keyword)
    if not isinstance(limit, int) or limit < 1:
        raise QueryBuildError(f"limit must be a positive integer, got {limit!r}")
    output = ("entity", "title", "description", "price", "currency", "image", "page")
    lines = _prologue()
    lines += [
        "",
        "SELECT " + " ".join(f"?{v}" for v in output),
        "WHERE {",
        "  ?entity a gr:Offering .",
        "  ?entity gr:name ?title .",
        _keyword_clause(kw, dialect),
        "  OPTIONAL { ?entity gr:description ?description . }",
        "  OPTIONAL { ?entity gr:hasPriceSpecification ?priceSpec ."
        " ?priceSpec gr:hasCurrencyValue ?price ."
        " ?priceSpec gr:hasCurrency ?currency . }",
        "  OPTIONAL { ?entity foaf:depiction ?image . }",
        "  OPTIONAL { ?entity foaf:page ?page . }",
        "}",
        "ORDER BY ASC(?entity)",
        f"LIMIT {limit}",
    ]
    return SparqlQuery("\n".join(lines), dialect, output, limit)


def build_extended(req: SearchRequest, dialect: SparqlDialect,
                   rates: Optional[RateTable] = None) -> SparqlQuery:
    """Keyword search with price bounds, currency conversion, image and
    location constraints, and price sorting.

    Price bounds and sorting act on the converted price when a target
    currency is set; conversion happens inside the query against the
    endpoint's materialized rate graph. Any price-related constraint makes
    the price patterns mandatory (an offer without a price cannot satisfy or
    order by one).
    """
    if req.mode is not SearchMode.EXTENDED:
        raise QueryBuildError(f"build_extended requires mode=extended, got {req.mode.value}")
    violations = validate_request(req)
    if violations:
        raise QueryBuildError(
            "invalid request: " + "; ".join(v.message for v in violations))
    target = req.target_currency
    if target is not None:
        if rates is None:
            raise QueryBuildError(
                f"currency conversion to {target} requires a rate table")
        if target not in rates:
            raise UnknownCurrencyError(target)

    kw = sanitize_keyword(req.keyword)
    priced = (req.price_min is not None or req.price_max is not None
              or req.sort is not SortOrder.NONE or target is not None)

    output = ["entity", "title", "description", "price", "currency", "image", "page"]
    if req.location is not None:
        output += ["lat", "long"]

    body: list[str] = [
        "  ?entity a gr:Offering .",
        "  ?entity gr:name ?title .",
        _keyword_clause(kw, dialect),
        "  OPTIONAL { ?entity gr:description ?description . }",
    ]

    if priced and target is not None:
        body += [
            "  ?entity gr:hasPriceSpecification ?priceSpec .",
            "  ?priceSpec gr:hasCurrencyValue ?srcAmount .",
            "  ?priceSpec gr:hasCurrency ?srcCurrency .",
            conversion_clause("srcAmount", target),
        ]
    elif priced:
        body += [
            "  ?entity gr:hasPriceSpecification ?priceSpec .",
            "  ?priceSpec gr:hasCurrencyValue ?price .",
            "  ?priceSpec gr:hasCurrency ?currency .",
        ]
    else:
        body.append(
            "  OPTIONAL { ?entity gr:hasPriceSpecification ?priceSpec ."
            " ?priceSpec gr:hasCurrencyValue ?price ."
            " ?priceSpec gr:hasCurrency ?currency . }")

    bounds = []
    if req.price_min is not None:
        bounds.append(f"?price >= {_render_number(req.price_min)}")
    if req.price_max is not None:
        bounds.append(f"?price <= {_render_number(req.price_max)}")
    if bounds:
        body.append(f"  FILTER({' && '.join(bounds)})")

    if req.require_image:
        body.append("  ?entity foaf:depiction ?image .")
    else:
        body.append("  OPTIONAL { ?entity foaf:depiction ?image . }")
    body.append("  OPTIONAL { ?entity foaf:page ?page . }")

    if req.location is not None:
        box = bounding_box(req.location.point, req.location.radius_km)
        body += [
            "  ?entity gr:availableAtOrFrom ?store .",
            "  ?store geo:lat ?lat .",
            "  ?store geo:long ?long .",
            f"  FILTER({_box_filter(box)})",
        ]

    if req.sort is SortOrder.PRICE_ASC:
        order = "ORDER BY ASC(?price) ASC(?entity)"
    elif req.sort is SortOrder.PRICE_DESC:
        order = "ORDER BY DESC(?price) ASC(?entity)"
    else:
        order = "ORDER BY ASC(?entity)"

    lines = _prologue(with_geo=req.location is not None, with_rates=target is not None)
    lines += ["", "SELECT " + " ".join(f"?{v}" for v in output), "WHERE {"]
    lines += body
    lines += ["}", order, f"LIMIT {req.limit}"]
    return SparqlQuery("\n".join(lines), dialect, tuple(output), req.limit)


def _box_filter(box: BoundingBox) -> str:
    parts = [f"?lat >= {box.lat_min!r}", f"?lat <= {box.lat_max!r}"]
    if box.wraps:
        parts.append(f"(?long >= {box.lon_min!r} || ?long <= {box.lon_max!r})")
    elif (box.lon_min, box.lon_max) != (-180.0, 180.0):
        parts += [f"?long >= {box.lon_min!r}", f"?long <= {box.lon_max!r}"]
    return " && ".join(parts)


_PROLOGUE_RE = re.compile(
    r"^\s*(?:(?:PREFIX\s+[^\s<]*\s*<[^>]*>|BASE\s*<[^>]*>)\s*)*",
    re.IGNORECASE)
_VAR_RE = re.compile(r"^[?$]([A-Za-z_][A-Za-z0-9_]*)$")


def validate_expert(raw_query: str, max_limit: int = 100,
                    dialect: Optional[SparqlDialect] = None) -> SparqlQuery:
    """Vet a raw expert query: SELECT form only, whitelisted projection,
    bounded LIMIT.

    Only the projection and the query form are parsed; the WHERE clause is
    the author's responsibility (the endpoint reports its own syntax
    errors). The projection must name at least ?entity and ?title and stay
    inside the canonical variable set. A top-level LIMIT larger than
    max_limit is clamped in place; a missing one is appended.
    """
    text = (raw_query or "").strip()
    if not text:
        raise ExpertQueryError("raw query must be non-empty")
    stripped = strip_string_literals(text)

    after_prologue = _PROLOGUE_RE.match(stripped).end()
    form_match = re.match(r"\s*([A-Za-z]+)", stripped[after_prologue:])
    form = form_match.group(1).upper() if form_match else ""
    if form != "SELECT":
        raise ExpertQueryError(
            f"only SELECT queries are accepted, got {form or 'nothing'}")
    if len(re.findall(r"\bSELECT\b", stripped, re.IGNORECASE)) > 1:
        raise ExpertQueryError("subqueries are not supported")

    select_end = after_prologue + form_match.end()
    where_match = re.search(r"\bWHERE\b|\{", stripped[select_end:], re.IGNORECASE)
    if not where_match:
        raise ExpertQueryError("cannot find the WHERE clause")
    projection = text[select_end:select_end + where_match.start()]

    variables: list[str] = []
    for token in projection.split():
        if token.upper() in ("DISTINCT", "REDUCED"):
            continue
        match = _VAR_RE.match(token)
        if not match:
            raise ExpertQueryError(
                f"projection must be a plain variable list, cannot parse {token!r}")
        name = match.group(1)
        if name not in CANONICAL_VARIABLES:
            raise ExpertQueryError(
                f"variable ?{name} is outside the allowed set "
                f"({', '.join('?' + v for v in CANONICAL_VARIABLES)})",
                variable=name)
        if name not in variables:
            variables.append(name)
    if not variables:
        raise ExpertQueryError("projection lists no variables")
    for required in ("entity", "title"):
        if required not in variables:
            raise ExpertQueryError(
                f"projection must include ?{required}", variable=required)

    # Find a top-level LIMIT (outside braces and string literals).
    limit = None
    depth = 0
    for match in re.finditer(r"[{}]|\bLIMIT\s+(\d+)", stripped, re.IGNORECASE):
        tok = match.group(0)
        if tok == "{":
            depth += 1
        elif tok == "}":
            depth -= 1
        elif depth == 0:
            limit = (int(match.group(1)), match.span())
    if limit is None:
        text = f"{text}\nLIMIT {max_limit}"
        final_limit = max_limit
    else:
        final_limit, span = limit
        if final_limit > max_limit:
            text = text[:span[0]] + f"LIMIT {max_limit}" + text[span[1]:]
            final_limit = max_limit
    if not text.rstrip().endswith(f"LIMIT {final_limit}"):
        raise ExpertQueryError("LIMIT must be the final clause of the query")

    if dialect is None:
        dialect = (SparqlDialect.FULLTEXT_INDEX if "bif:contains" in text
                   else SparqlDialect.STANDARD11)
    return SparqlQuery(text, dialect, tuple(variables), final_limit)


def clause_fingerprint(query_text: str) -> tuple:
    """Structural fingerprint of a query: counts of clause-level tokens with
    string literal contents blanked out. Two queries that differ only in
    quoted keyword content have identical fingerprints."""
    stripped = strip_string_literals(query_text)
    counts = {
        token: len(re.findall(rf"\b{token}\b", stripped, re.IGNORECASE))
        for token in ("SELECT", "WHERE", "OPTIONAL", "FILTER", "BIND",
                      "UNION", "ORDER", "LIMIT")
    }
    counts["{"] = stripped.count("{")
    counts["}"] = stripped.count("}")
    counts["."] = stripped.count(".")
    counts[";"] = stripped.count(";")
    return tuple(sorted(counts.items()))
