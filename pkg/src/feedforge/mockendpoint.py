"""In-process SPARQL endpoint serving a Turtle dataset over HTTP.

Implements just enough of the SPARQL protocol for tests and demos: GET with
a `query` parameter, POST with form-encoded or application/sparql-query
bodies, JSON results. Knobs for tests: a query counter, a forced-error mode,
and an artificial delay.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlparse

from .rdf import BNode, Graph, IRI, Literal, parse_turtle
from .sparqleval import SparqlEvalError, evaluate

SPARQL_PATH = "/sparql"


def _term_to_json(term) -> dict:
    if isinstance(term, IRI):
        return {"type": "uri", "value": term.value}
    if isinstance(term, BNode):
        return {"type": "bnode", "value": term.label}
    if isinstance(term, Literal):
        out = {"type": "literal", "value": term.value}
        if term.datatype:
            out["datatype"] = term.datatype
        if term.lang:
            out["xml:lang"] = term.lang
        return out
    raise TypeError(f"not a term: {term!r}")


def results_json(graph: Graph, query: str) -> dict:
    variables, rows = evaluate(graph, query)
    return {
        "head": {"vars": variables},
        "results": {"bindings": [
            {var: _term_to_json(term) for var, term in row.items()}
            for row in rows
        ]},
    }


class MockSparqlEndpoint:
    """Threaded HTTP server around a Graph; start() picks a free port."""

    def __init__(self, graph: Graph, host: str = "127.0.0.1", port: int = 0):
        self.graph = graph
        self._host = host
        self._port = port
        self._server: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None
        self._lock = threading.Lock()
        self.query_count = 0
        self.force_error = False
        self.delay_seconds = 0.0
        self.last_query: Optional[str] = None

    # test knobs

    def reset(self):
        with self._lock:
            self.query_count = 0
            self.force_error = False
            self.delay_seconds = 0.0
            self.last_query = None

    def _record(self, query: str):
        with self._lock:
            self.query_count += 1
            self.last_query = query

    @property
    def url(self) -> str:
        if self._server is None:
            raise RuntimeError("endpoint not started")
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}{SPARQL_PATH}"

    def start(self) -> "MockSparqlEndpoint":
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output clean
                pass

            def _answer(self, query: Optional[str]):
                if endpoint.delay_seconds:
                    time.sleep(endpoint.delay_seconds)
                if endpoint.force_error:
                    self._send(500, "text/plain", b"forced failure")
                    return
                if query is None:
                    self._send(400, "text/plain", b"missing query parameter")
                    return
                endpoint._record(query)
                try:
                    doc = results_json(endpoint.graph, query)
                except SparqlEvalError as exc:
                    self._send(400, "text/plain", str(exc).encode("utf-8"))
                    return
                body = json.dumps(doc).encode("utf-8")
                self._send(200, "application/sparql-results+json", body)

            def _send(self, status: int, ctype: str, body: bytes):
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                parsed = urlparse(self.path)
                if parsed.path != SPARQL_PATH:
                    self._send(404, "text/plain", b"not found")
                    return
                params = parse_qs(parsed.query)
                query = params.get("query", [None])[0]
                self._answer(query)

            def do_POST(self):
                parsed = urlparse(self.path)
                if parsed.path != SPARQL_PATH:
                    self._send(404, "text/plain", b"not found")
                    return
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length).decode("utf-8")
                ctype = (self.headers.get("Content-Type") or "").split(";")[0].strip()
                if ctype == "application/sparql-query":
                    query = body
                else:
                    query = parse_qs(body).get("query", [None])[0]
                self._answer(query)

        self._server = ThreadingHTTPServer((self._host, self._port), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="mock-sparql", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def endpoint_from_file(path, host: str = "127.0.0.1",
                       port: int = 0) -> MockSparqlEndpoint:
    with open(path, encoding="utf-8") as fh:
        graph = parse_turtle(fh.read())
    return MockSparqlEndpoint(graph, host=host, port=port)
