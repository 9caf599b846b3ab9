"""SPARQL protocol client: execute a query over HTTP, parse JSON results.

Small queries travel as GET with a `query` parameter; anything over 2000
bytes switches to a form-encoded POST to stay under common proxy URL limits.
Only the SPARQL 1.1 JSON results format is consumed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import requests

from .queries import SparqlQuery

RESULTS_JSON = "application/sparql-results+json"
GET_MAX_QUERY_BYTES = 2000
DEFAULT_TIMEOUT = 10.0


class SparqlClientError(Exception):
    """Base class for everything execute() can raise."""


class EndpointUnreachable(SparqlClientError):
    pass


class QueryTimeoutError(SparqlClientError):
    pass


class EndpointHTTPError(SparqlClientError):
    """HTTP status >= 400; carries the endpoint's own message."""

    def __init__(self, status: int, message: str):
        super().__init__(f"endpoint returned {status}: {message}")
        self.status = status
        self.endpoint_message = message


class MalformedResults(SparqlClientError):
    pass


@dataclass(frozen=True)
class Term:
    """One RDF term from a results document.

    kind is `uri`, `literal`, or `bnode`; typed and language-tagged literals
    keep their datatype/lang so serialization round-trips unchanged.
    """

    kind: str
    value: str
    datatype: Optional[str] = None
    lang: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("uri", "literal", "bnode"):
            raise MalformedResults(f"unknown term kind {self.kind!r}")

    def to_json(self) -> dict:
        out = {"type": self.kind, "value": self.value}
        if self.datatype:
            out["datatype"] = self.datatype
        if self.lang:
            out["xml:lang"] = self.lang
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Term":
        try:
            kind = obj["type"]
            value = obj["value"]
        except (TypeError, KeyError) as exc:
            raise MalformedResults(f"bad term object: {obj!r}") from exc
        if kind == "typed-literal":  # Virtuoso spelling
            kind = "literal"
        return cls(kind=kind, value=value,
                   datatype=obj.get("datatype"), lang=obj.get("xml:lang"))


@dataclass(frozen=True)
class BindingSet:
    """Ordered SPARQL results: row order equals document order."""

    variables: tuple[str, ...]
    rows: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "rows", tuple(dict(r) for r in self.rows))
        known = set(self.variables)
        for row in self.rows:
            extra = set(row) - known
            if extra:
                raise MalformedResults(f"row binds undeclared variables {extra}")

    def __len__(self):
        return len(self.rows)

    def to_json(self) -> dict:
        return {
            "head": {"vars": list(self.variables)},
            "results": {"bindings": [
                {var: term.to_json() for var, term in row.items()}
                for row in self.rows
            ]},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BindingSet":
        try:
            variables = doc["head"]["vars"]
            bindings = doc["results"]["bindings"]
        except (TypeError, KeyError) as exc:
            raise MalformedResults("missing head.vars or results.bindings") from exc
        if not isinstance(variables, list) or not isinstance(bindings, list):
            raise MalformedResults("head.vars and results.bindings must be lists")
        rows = []
        for b in bindings:
            if not isinstance(b, dict):
                raise MalformedResults(f"binding is not an object: {b!r}")
            rows.append({var: Term.from_json(t) for var, t in b.items()})
        return cls(variables=tuple(variables), rows=tuple(rows))


def execute(endpoint_url: str, query: Union[SparqlQuery, str],
            timeout: float = DEFAULT_TIMEOUT) -> BindingSet:
    """Run a SELECT query against an endpoint, single attempt, no retries."""
    text = query.text if isinstance(query, SparqlQuery) else query
    headers = {"Accept": RESULTS_JSON}
    try:
        if len(text.encode("utf-8")) <= GET_MAX_QUERY_BYTES:
            resp = requests.get(endpoint_url, params={"query": text},
                                headers=headers, timeout=timeout)
        else:
            resp = requests.post(endpoint_url, data={"query": text},
                                 headers=headers, timeout=timeout)
    except requests.Timeout as exc:
        raise QueryTimeoutError(f"endpoint did not answer within {timeout}s") from exc
    except requests.ConnectionError as exc:
        raise EndpointUnreachable(str(exc)) from exc
    except requests.RequestException as exc:
        raise EndpointUnreachable(str(exc)) from exc

    if resp.status_code >= 400:
        raise EndpointHTTPError(resp.status_code, resp.text.strip()[:500])
    try:
        doc = resp.json()
    except (json.JSONDecodeError, ValueError) as exc:
        raise MalformedResults(f"results are not JSON: {exc}") from exc
    return BindingSet.from_json(doc)
