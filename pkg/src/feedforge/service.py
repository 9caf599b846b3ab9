"""HTTP service and request orchestration.

One FeedService instance owns the cache, the rate table, and the endpoint
configuration; the HTTP handler and the CLI both call handle_feed with a
flat parameter mapping, so a generated file and a served response are
byte-identical for the same configuration and clock.

Error bodies are JSON with a stable `error` code; feed consumers are
programs, not browsers.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping, Optional
from urllib.parse import urlencode, urlsplit, parse_qs

from .cache import FeedCache, fingerprint_for
from .currency import (DEFAULT_MAX_AGE, RateTable, RateTableError,
                       StaleRatesError, UnknownCurrencyError, load_rates,
                       parse_rfc3339)
from .feeds import ATOM_MEDIA_TYPE, RSS_MEDIA_TYPE, serialize
from .mapping import map_bindings
from .model import (DEFAULT_LIMIT, LIMIT_CAP, FeedDocument, FeedFormat,
                    GeoPoint, LocationFilter, ModelError, SearchMode,
                    SearchRequest, SortOrder, Violation, as_decimal,
                    validate_request)
from .queries import (ExpertQueryError, QueryBuildError, SparqlDialect,
                      UnsafeKeywordError, build_basic, build_extended,
                      validate_expert)
from .sparql import (EndpointHTTPError, EndpointUnreachable, MalformedResults,
                     QueryTimeoutError, SparqlClientError, execute)

ERROR_MEDIA_TYPE = "application/json"

# /feed parameters, in the order they appear in canonical self URLs
PARAM_ORDER = ("mode", "format", "q", "price_min", "price_max", "currency",
               "image", "sort", "lat", "lon", "radius_km", "limit", "query")

# parameters meaningful only in extended mode
_EXTENDED_ONLY = ("price_min", "price_max", "currency", "image", "sort",
                  "lat", "lon", "radius_km")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    endpoint_url: str
    listen_address: str = "127.0.0.1:8080"
    dialect: SparqlDialect = SparqlDialect.STANDARD11
    cache_dir: str = field(
        default_factory=lambda: os.path.join(tempfile.gettempdir(),
                                             "feedforge-cache"))
    cache_ttl: timedelta = timedelta(hours=24)
    rate_source: str = "endpoint"  # "endpoint" or a path / URL
    max_limit: int = 100
    request_timeout: float = 10.0
    fixed_time: Optional[datetime] = None  # deterministic output for tests

    def __post_init__(self):
        if not (1 <= self.max_limit <= 100):
            raise ConfigError(f"max_limit must be in 1..100, got {self.max_limit}")
        if self.cache_ttl <= timedelta(0):
            raise ConfigError(f"cache_ttl must be positive, got {self.cache_ttl}")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be positive")
        if not self.endpoint_url:
            raise ConfigError("endpoint_url is required")


_CONFIG_KEYS = {
    "listen_address", "endpoint_url", "dialect", "cache_dir",
    "cache_ttl_seconds", "rate_source", "max_limit",
    "request_timeout_seconds", "fixed_time",
}


def _parse_config_pairs(text: str, origin: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        pairs[key] = value.strip()
    return pairs


def load_config(path: Optional[str] = None,
                env: Optional[Mapping[str, str]] = None,
                overrides: Optional[Mapping[str, str]] = None) -> ServiceConfig:
    """Flat key=value file, FEEDFORGE_* environment overrides on top,
    explicit overrides (CLI flags) on top of those."""
    env = os.environ if env is None else env
    pairs: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        pairs.update(_parse_config_pairs(text, origin=str(path)))
    for key in _CONFIG_KEYS:
        env_key = "FEEDFORGE_" + key.upper()
        if env_key in env:
            pairs[key] = env[env_key]
    if overrides:
        for key, value in overrides.items():
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                pairs[key] = value

    if "endpoint_url" not in pairs:
        raise ConfigError("endpoint_url is required (config file, "
                          "FEEDFORGE_ENDPOINT_URL, or --endpoint)")
    kwargs: dict = {"endpoint_url": pairs["endpoint_url"]}
    if "listen_address" in pairs:
        kwargs["listen_address"] = pairs["listen_address"]
    if "dialect" in pairs:
        try:
            kwargs["dialect"] = SparqlDialect(pairs["dialect"])
        except ValueError:
            raise ConfigError(f"dialect must be fulltext_index or standard11,"
                              f" got {pairs['dialect']!r}")
    if "cache_dir" in pairs:
        kwargs["cache_dir"] = pairs["cache_dir"]
    if "cache_ttl_seconds" in pairs:
        kwargs["cache_ttl"] = timedelta(seconds=_config_float(
            pairs["cache_ttl_seconds"], "cache_ttl_seconds"))
    if "rate_source" in pairs:
        kwargs["rate_source"] = pairs["rate_source"]
    if "max_limit" in pairs:
        try:
            kwargs["max_limit"] = int(pairs["max_limit"])
        except ValueError:
            raise ConfigError(f"max_limit must be an integer, got {pairs['max_limit']!r}")
    if "request_timeout_seconds" in pairs:
        kwargs["request_timeout"] = _config_float(
            pairs["request_timeout_seconds"], "request_timeout_seconds")
    if "fixed_time" in pairs and pairs["fixed_time"]:
        try:
            kwargs["fixed_time"] = parse_rfc3339(pairs["fixed_time"])
        except ValueError as exc:
            raise ConfigError(f"fixed_time: {exc}") from exc
    return ServiceConfig(**kwargs)


def _config_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}")


# request parsing


def _violation(field_name: str, code: str, message: str) -> Violation:
    return Violation(field=field_name, code=code, message=message)


def parse_feed_params(params: Mapping[str, list[str]]
                      ) -> tuple[Optional[SearchRequest], list[Violation]]:
    """Turn raw query parameters into a SearchRequest.

    Accepts the parse_qs shape (values are lists). Violations cover unknown
    and repeated parameters, type errors, and everything validate_request
    reports; the request is returned only when the violation list is empty.
    """
    violations: list[Violation] = []
    flat: dict[str, str] = {}
    for key, values in params.items():
        if key not in PARAM_ORDER:
            violations.append(_violation(key, "unknown_parameter",
                                         f"unknown parameter {key!r}"))
            continue
        if len(values) != 1:
            violations.append(_violation(key, "repeated_parameter",
                                         f"parameter {key!r} given {len(values)} times"))
            continue
        flat[key] = values[0]

    mode = SearchMode.BASIC
    if "mode" in flat:
        try:
            mode = SearchMode(flat["mode"])
        except ValueError:
            violations.append(_violation(
                "mode", "invalid_mode",
                f"mode must be basic, extended or expert, got {flat['mode']!r}"))
    fmt = FeedFormat.RSS
    if "format" in flat:
        try:
            fmt = FeedFormat(flat["format"])
        except ValueError:
            violations.append(_violation(
                "format", "invalid_format",
                f"format must be rss or atom, got {flat['format']!r}"))

    if mode is not SearchMode.EXTENDED:
        for key in _EXTENDED_ONLY:
            if key in flat:
                violations.append(_violation(
                    key, "unexpected_parameter",
                    f"{key!r} applies to extended mode only"))

    def decimal_param(key):
        if key not in flat:
            return None
        try:
            return as_decimal(flat[key])
        except ModelError:
            violations.append(_violation(key, "invalid_number",
                                         f"{key} must be a decimal number"))
            return None

    price_min = decimal_param("price_min")
    price_max = decimal_param("price_max")

    require_image = False
    if "image" in flat:
        if flat["image"] in ("true", "false"):
            require_image = flat["image"] == "true"
        else:
            violations.append(_violation("image", "invalid_boolean",
                                         "image must be true or false"))

    sort = SortOrder.NONE
    if "sort" in flat:
        try:
            sort = SortOrder(flat["sort"])
        except ValueError:
            violations.append(_violation(
                "sort", "invalid_sort",
                f"sort must be price_asc or price_desc, got {flat['sort']!r}"))

    location = None
    geo_keys = [k for k in ("lat", "lon", "radius_km") if k in flat]
    if geo_keys and len(geo_keys) < 3:
        missing = [k for k in ("lat", "lon", "radius_km") if k not in flat]
        violations.append(_violation(
            missing[0], "incomplete_location",
            "lat, lon and radius_km must be given together"))
    elif len(geo_keys) == 3:
        lat = decimal_param("lat")
        lon = decimal_param("lon")
        radius = decimal_param("radius_km")
        if lat is not None and lon is not None and radius is not None:
            try:
                location = LocationFilter(point=GeoPoint(lat=lat, lon=lon),
                                          radius_km=radius)
            except ModelError as exc:
                violations.append(_violation("lat", "invalid_coordinates", str(exc)))

    limit = None
    if "limit" in flat:
        try:
            limit = int(flat["limit"])
        except ValueError:
            violations.append(_violation("limit", "invalid_number",
                                         "limit must be an integer"))
    if limit is None:
        # expert queries carry their own LIMIT; the parameter only caps it
        limit = LIMIT_CAP if mode is SearchMode.EXPERT else DEFAULT_LIMIT

    try:
        req = SearchRequest(
            mode=mode,
            keyword=flat.get("q", ""),
            price_min=price_min,
            price_max=price_max,
            target_currency=flat.get("currency"),
            require_image=require_image,
            sort=sort,
            location=location,
            limit=limit,
            raw_query=flat.get("query", ""),
            format=fmt,
        )
    except ModelError as exc:
        violations.append(_violation("request", "invalid_request", str(exc)))
        return None, violations

    violations.extend(validate_request(req))
    if violations:
        return None, violations
    return req, violations


def canonical_query_string(req: SearchRequest, effective_limit: int) -> str:
    """Self-URL query string: fixed parameter order, only set parameters,
    post-clamp limit. Two URLs for the same request content are identical."""
    items: list[tuple[str, str]] = [("mode", req.mode.value),
                                    ("format", req.format.value)]
    if req.keyword:
        items.append(("q", req.keyword))
    if req.price_min is not None:
        items.append(("price_min", str(req.price_min)))
    if req.price_max is not None:
        items.append(("price_max", str(req.price_max)))
    if req.target_currency is not None:
        items.append(("currency", req.target_currency))
    if req.require_image:
        items.append(("image", "true"))
    if req.sort is not SortOrder.NONE:
        items.append(("sort", req.sort.value))
    if req.location is not None:
        items.append(("lat", str(req.location.point.lat)))
        items.append(("lon", str(req.location.point.lon)))
        items.append(("radius_km", str(req.location.radius_km)))
    items.append(("limit", str(effective_limit)))
    if req.raw_query:
        items.append(("query", req.raw_query))
    return urlencode(items)


@dataclass(frozen=True)
class FeedResponse:
    status: int
    headers: dict
    body: bytes


def _error_body(code: str, message: str, **extra) -> bytes:
    payload = {"error": code, "message": message}
    payload.update(extra)
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def _error_response(status: int, code: str, message: str, **extra) -> FeedResponse:
    return FeedResponse(status, {"Content-Type": ERROR_MEDIA_TYPE},
                        _error_body(code, message, **extra))


class FeedService:
    """Shared engine behind the HTTP handler and the gen CLI."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.cache = FeedCache(config.cache_dir, ttl=config.cache_ttl)
        self._rates: Optional[RateTable] = None
        self._rates_error: Optional[str] = None
        self._rates_lock = threading.Lock()

    def now(self) -> datetime:
        if self.config.fixed_time is not None:
            return self.config.fixed_time
        return datetime.now(timezone.utc)

    def close(self):
        self.cache.close()

    # rate table

    def _rate_source_url(self) -> str:
        if self.config.rate_source == "endpoint":
            return self.config.endpoint_url
        return self.config.rate_source

    def get_rates(self, refresh: bool = False) -> Optional[RateTable]:
        """Load lazily; stale tables are tolerated here and surfaced through
        /healthz instead of failing conversions outright."""
        with self._rates_lock:
            if self._rates is not None and not refresh:
                return self._rates
            try:
                self._rates = load_rates(self._rate_source_url(), max_age=None,
                                         timeout=self.config.request_timeout)
                self._rates_error = None
            except (RateTableError, SparqlClientError, OSError) as exc:
                self._rates_error = str(exc)
                if refresh:
                    self._rates = None
            return self._rates

    # feed pipeline

    def _build_query(self, req: SearchRequest, effective_limit: int):
        if req.mode is SearchMode.BASIC:
            return build_basic(req.keyword, effective_limit, self.config.dialect)
        if req.mode is SearchMode.EXTENDED:
            rates = None
            if req.target_currency is not None:
                rates = self.get_rates()
                if rates is None:
                    raise RatesUnavailable(self._rates_error or "rate table unavailable")
            scoped = _with_limit(req, effective_limit)
            return build_extended(scoped, self.config.dialect, rates=rates)
        return validate_expert(req.raw_query, max_limit=effective_limit)

    def _document_title(self, req: SearchRequest) -> str:
        if req.mode is SearchMode.EXPERT:
            return "Expert SPARQL results"
        return f'Offers matching "{req.keyword}"'

    def _document_description(self, req: SearchRequest) -> str:
        if req.mode is SearchMode.EXPERT:
            return "Results of a custom SPARQL query over the offering graph"
        return (f"Linked Open Commerce offers for keyword "
                f'"{req.keyword}" ({req.mode.value} search)')

    def handle_feed(self, params: Mapping[str, list[str]],
                    base_url: str) -> FeedResponse:
        req, violations = parse_feed_params(params)
        if violations:
            body = json.dumps({
                "error": "invalid_request",
                "message": "request validation failed",
                "violations": [
                    {"field": v.field, "code": v.code, "message": v.message}
                    for v in violations],
            }, sort_keys=True).encode("utf-8")
            return FeedResponse(400, {"Content-Type": ERROR_MEDIA_TYPE}, body)

        effective_limit = min(req.limit, self.config.max_limit)
        try:
            query = self._build_query(req, effective_limit)
        except ExpertQueryError as exc:
            extra = {"variable": exc.variable} if exc.variable else {}
            return _error_response(400, "invalid_query", str(exc), **extra)
        except UnsafeKeywordError as exc:
            return _error_response(400, "unsafe_keyword", str(exc))
        except UnknownCurrencyError as exc:
            return _error_response(400, "unknown_currency",
                                   f"no exchange rate for {exc.args[0]}")
        except RatesUnavailable as exc:
            return _error_response(503, "rates_unavailable", str(exc))
        except QueryBuildError as exc:
            return _error_response(400, "invalid_request", str(exc))

        self_url = (base_url.rstrip("/") + "/feed?"
                    + canonical_query_string(req, query.limit))
        fingerprint = fingerprint_for(self.config.endpoint_url, query.text,
                                      req.format.value)

        def render() -> bytes:
            bindings = execute(self.config.endpoint_url, query,
                               timeout=self.config.request_timeout)
            mapped = map_bindings(bindings, req, now=self.now())
            doc = FeedDocument(
                title=self._document_title(req),
                self_url=self_url,
                description=self._document_description(req),
                generated_at=self.now(),
                entries=mapped.entries,
            )
            body, _ = serialize(doc, req.format)
            return body

        try:
            body, cache_status = self.cache.get_or_render(
                fingerprint, req.format.value, render, now_fn=self.now)
        except QueryTimeoutError as exc:
            return _error_response(504, "endpoint_timeout", str(exc))
        except (EndpointUnreachable, EndpointHTTPError, MalformedResults) as exc:
            return _error_response(502, "endpoint_failure", str(exc))

        media = RSS_MEDIA_TYPE if req.format is FeedFormat.RSS else ATOM_MEDIA_TYPE
        return FeedResponse(200, {"Content-Type": media,
                                  "X-Cache-Status": cache_status}, body)

    # health

    def _probe_endpoint(self) -> bool:
        probe = "SELECT ?entity WHERE { ?entity ?p ?o } LIMIT 1"
        try:
            execute(self.config.endpoint_url, probe,
                    timeout=min(self.config.request_timeout, 2.0))
            return True
        except SparqlClientError:
            return False

    def handle_healthz(self) -> FeedResponse:
        now = self.now()
        rates = self.get_rates()
        rates_stale = False
        rates_as_of = None
        if rates is not None:
            rates_as_of = rates.as_of.strftime("%Y-%m-%dT%H:%M:%SZ")
            rates_stale = now - rates.as_of > DEFAULT_MAX_AGE
        reachable = self._probe_endpoint()
        degraded = (rates is None) or rates_stale or not reachable
        payload = {
            "status": "degraded" if degraded else "ok",
            "endpoint": {"url": self.config.endpoint_url,
                         "reachable": reachable},
            "rates": {"source": self.config.rate_source,
                      "as_of": rates_as_of,
                      "stale": rates_stale,
                      "error": self._rates_error},
            "cache": {"dir": str(self.cache.cache_dir),
                      "ttl_seconds": self.config.cache_ttl.total_seconds()},
            "time": now.strftime("%Y-%m-%dT%H:%M:%SZ"),
        }
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        return FeedResponse(200, {"Content-Type": ERROR_MEDIA_TYPE}, body)


class RatesUnavailable(Exception):
    pass


def _with_limit(req: SearchRequest, limit: int) -> SearchRequest:
    return req if req.limit == limit else replace(req, limit=limit)


# HTTP front


def make_server(service: FeedService) -> ThreadingHTTPServer:
    host, _, port_text = service.config.listen_address.partition(":")
    port = int(port_text) if port_text else 8080

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _send(self, response: FeedResponse):
            self.send_response(response.status)
            for name, value in response.headers.items():
                self.send_header(name, value)
            self.send_header("Content-Length", str(len(response.body)))
            self.end_headers()
            self.wfile.write(response.body)

        def do_GET(self):
            split = urlsplit(self.path)
            if split.path == "/feed":
                params = parse_qs(split.query, keep_blank_values=True)
                host_header = self.headers.get("Host") or service.config.listen_address
                response = service.handle_feed(params, f"http://{host_header}")
            elif split.path == "/healthz":
                response = service.handle_healthz()
            else:
                response = _error_response(404, "not_found",
                                           f"no route for {split.path}")
            self._send(response)

    server = ThreadingHTTPServer((host or "127.0.0.1", port), Handler)
    server.daemon_threads = True
    return server
