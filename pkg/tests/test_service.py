"""Service layer: config, parameter parsing, the /feed pipeline, /healthz."""

import json
import threading
import urllib.error
import urllib.request
from datetime import datetime, timedelta, timezone
from decimal import Decimal

import pytest

from feedforge.model import SearchMode, SortOrder
from feedforge.queries import SparqlDialect
from feedforge.service import (ConfigError, FeedService, ServiceConfig,
                               canonical_query_string, load_config,
                               make_server, parse_feed_params)

T0 = datetime(2026, 8, 15, 12, 0, 0, tzinfo=timezone.utc)


def params(**kw):
    return {key: [value] for key, value in kw.items()}


@pytest.fixture()
def service(mock_endpoint, tmp_path):
    config = ServiceConfig(endpoint_url=mock_endpoint.url,
                           cache_dir=str(tmp_path / "cache"),
                           fixed_time=T0)
    svc = FeedService(config)
    yield svc
    svc.close()


class TestLoadConfig:
    def test_file_values(self, tmp_path):
        path = tmp_path / "ff.conf"
        path.write_text(
            "# comment\n"
            "endpoint_url=http://ep/sparql\n"
            "dialect=fulltext_index\n"
            "cache_ttl_seconds=60\n"
            "max_limit=50\n",
            encoding="utf-8")
        config = load_config(str(path), env={})
        assert config.endpoint_url == "http://ep/sparql"
        assert config.dialect is SparqlDialect.FULLTEXT_INDEX
        assert config.cache_ttl == timedelta(seconds=60)
        assert config.max_limit == 50

    def test_env_overrides_file(self, tmp_path):
        path = tmp_path / "ff.conf"
        path.write_text("endpoint_url=http://file/sparql\n", encoding="utf-8")
        config = load_config(str(path),
                             env={"FEEDFORGE_ENDPOINT_URL": "http://env/sparql"})
        assert config.endpoint_url == "http://env/sparql"

    def test_explicit_overrides_beat_env(self, tmp_path):
        config = load_config(None,
                             env={"FEEDFORGE_ENDPOINT_URL": "http://env/sparql"},
                             overrides={"endpoint_url": "http://flag/sparql"})
        assert config.endpoint_url == "http://flag/sparql"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "ff.conf"
        path.write_text("endpoint_url=http://e\nshouting=loud\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="shouting"):
            load_config(str(path), env={})

    def test_missing_endpoint_rejected(self):
        with pytest.raises(ConfigError, match="endpoint_url"):
            load_config(None, env={})

    def test_bad_dialect_rejected(self):
        with pytest.raises(ConfigError, match="dialect"):
            load_config(None, env={"FEEDFORGE_ENDPOINT_URL": "http://e",
                                   "FEEDFORGE_DIALECT": "sparql9"})

    def test_max_limit_cap_enforced(self):
        with pytest.raises(ConfigError):
            ServiceConfig(endpoint_url="http://e", max_limit=101)

    def test_fixed_time_parsed(self):
        config = load_config(None, env={
            "FEEDFORGE_ENDPOINT_URL": "http://e",
            "FEEDFORGE_FIXED_TIME": "2026-08-15T12:00:00Z"})
        assert config.fixed_time == T0


class TestParseFeedParams:
    def test_defaults(self):
        req, violations = parse_feed_params(params(q="camcorder"))
        assert violations == []
        assert req.mode is SearchMode.BASIC
        assert req.limit == 20

    def test_extended_round_trip(self):
        req, violations = parse_feed_params(params(
            mode="extended", q="camcorder", price_min="100", price_max="500",
            currency="USD", image="true", sort="price_asc",
            lat="48.1351", lon="11.5820", radius_km="50", limit="10",
            format="atom"))
        assert violations == []
        assert req.price_min == Decimal("100")
        assert req.target_currency == "USD"
        assert req.require_image is True
        assert req.sort is SortOrder.PRICE_ASC
        assert req.location.radius_km == Decimal("50")
        assert req.limit == 10

    def test_unknown_parameter(self):
        _, violations = parse_feed_params(params(q="x", color="red"))
        assert any(v.code == "unknown_parameter" for v in violations)

    def test_repeated_parameter(self):
        _, violations = parse_feed_params({"q": ["a", "b"]})
        assert any(v.code == "repeated_parameter" for v in violations)

    def test_invalid_mode_and_format(self):
        _, violations = parse_feed_params(params(mode="fancy", format="pdf", q="x"))
        codes = {v.code for v in violations}
        assert {"invalid_mode", "invalid_format"} <= codes

    def test_extended_only_params_rejected_in_basic(self):
        _, violations = parse_feed_params(params(q="x", price_min="5"))
        assert any(v.code == "unexpected_parameter" and v.field == "price_min"
                   for v in violations)

    def test_bad_number(self):
        _, violations = parse_feed_params(params(
            mode="extended", q="x", price_min="cheap"))
        assert any(v.code == "invalid_number" for v in violations)

    def test_bad_boolean(self):
        _, violations = parse_feed_params(params(mode="extended", q="x", image="yes"))
        assert any(v.code == "invalid_boolean" for v in violations)

    def test_incomplete_location(self):
        _, violations = parse_feed_params(params(mode="extended", q="x",
                                                 lat="48.1"))
        assert any(v.code == "incomplete_location" for v in violations)

    def test_out_of_range_coordinates(self):
        _, violations = parse_feed_params(params(
            mode="extended", q="x", lat="95", lon="0", radius_km="5"))
        assert any(v.code == "invalid_coordinates" for v in violations)

    def test_validation_violations_surface(self):
        _, violations = parse_feed_params(params(
            mode="extended", q="x", price_min="500", price_max="100"))
        assert any(v.code == "inverted_price_range" for v in violations)

    def test_expert_defaults_limit_to_cap(self):
        req, violations = parse_feed_params(params(
            mode="expert", query="SELECT ?entity ?title WHERE { ?entity ?p ?title }"))
        assert violations == []
        assert req.limit == 100  # the parameter is only a cap in expert mode


class TestCanonicalQueryString:
    def test_fixed_order_and_omission(self):
        req, _ = parse_feed_params(params(
            sort="price_asc", q="cam", price_max="500", mode="extended",
            image="true", currency="USD", price_min="100"))
        qs = canonical_query_string(req, 20)
        assert qs == ("mode=extended&format=rss&q=cam&price_min=100"
                      "&price_max=500&currency=USD&image=true"
                      "&sort=price_asc&limit=20")

    def test_image_false_omitted(self):
        req, _ = parse_feed_params(params(mode="extended", q="x", image="false"))
        assert "image" not in canonical_query_string(req, 20)

    def test_permutation_invariance(self):
        a, _ = parse_feed_params(params(q="x", format="atom", limit="5"))
        b, _ = parse_feed_params(dict(reversed(list(
            params(q="x", format="atom", limit="5").items()))))
        assert canonical_query_string(a, 5) == canonical_query_string(b, 5)


class TestHandleFeed:
    def test_validation_failure_returns_400_with_violations(self, service):
        response = service.handle_feed(params(mode="extended"), "http://h")
        assert response.status == 400
        body = json.loads(response.body)
        assert body["error"] == "invalid_request"
        assert any(v["code"] == "missing_keyword" for v in body["violations"])

    def test_expert_rejection_names_variable(self, service):
        response = service.handle_feed(params(
            mode="expert", query="SELECT ?foo WHERE { ?foo ?p ?o }"),
            "http://h")
        assert response.status == 400
        body = json.loads(response.body)
        assert body["error"] == "invalid_query"
        assert body["variable"] == "foo"

    def test_unsafe_keyword_rejected(self, service):
        response = service.handle_feed(params(q='cam" } UNION { ?s ?p ?o'),
                                       "http://h")
        assert response.status == 400
        assert json.loads(response.body)["error"] == "unsafe_keyword"

    def test_basic_feed_roundtrip(self, service, mock_endpoint):
        response = service.handle_feed(params(q="camcorder"), "http://h")
        assert response.status == 200
        assert response.headers["Content-Type"] == "application/rss+xml"
        assert response.headers["X-Cache-Status"] == "MISS"
        assert b"<rss version=\"2.0\"" in response.body

    def test_second_request_hits_cache_without_endpoint(self, service,
                                                        mock_endpoint):
        first = service.handle_feed(params(q="camcorder"), "http://h")
        count = mock_endpoint.query_count
        second = service.handle_feed(params(q="camcorder"), "http://h")
        assert second.headers["X-Cache-Status"] == "HIT"
        assert second.body == first.body
        assert mock_endpoint.query_count == count

    def test_atom_format(self, service):
        response = service.handle_feed(params(q="camcorder", format="atom"),
                                       "http://h")
        assert response.headers["Content-Type"] == "application/atom+xml"
        assert b"<feed xmlns=" in response.body

    def test_formats_cached_separately(self, service, mock_endpoint):
        service.handle_feed(params(q="camcorder"), "http://h")
        count = mock_endpoint.query_count
        response = service.handle_feed(params(q="camcorder", format="atom"),
                                       "http://h")
        assert response.headers["X-Cache-Status"] == "MISS"
        assert mock_endpoint.query_count == count + 1

    def test_self_url_uses_base_and_canonical_params(self, service):
        response = service.handle_feed(params(q="cam", format="atom"),
                                       "http://feeds.example:8080")
        assert (b"<id>http://feeds.example:8080/feed?"
                b"mode=basic&amp;format=atom&amp;q=cam&amp;limit=20</id>"
                in response.body)

    def test_endpoint_down_without_cache_is_502(self, tmp_path):
        config = ServiceConfig(endpoint_url="http://127.0.0.1:1/sparql",
                               cache_dir=str(tmp_path), fixed_time=T0)
        svc = FeedService(config)
        try:
            response = svc.handle_feed(params(q="cam"), "http://h")
            assert response.status == 502
            assert json.loads(response.body)["error"] == "endpoint_failure"
        finally:
            svc.close()

    def test_endpoint_down_with_stale_copy_serves_stale(self, mock_endpoint,
                                                        tmp_path):
        config = ServiceConfig(endpoint_url=mock_endpoint.url,
                               cache_dir=str(tmp_path),
                               cache_ttl=timedelta(hours=1), fixed_time=T0)
        svc = FeedService(config)
        try:
            first = svc.handle_feed(params(q="camcorder"), "http://h")
            assert first.status == 200
            mock_endpoint.force_error = True
            svc.now = lambda: T0 + timedelta(hours=2)  # expire the entry
            response = svc.handle_feed(params(q="camcorder"), "http://h")
            assert response.status == 200
            assert response.headers["X-Cache-Status"] == "STALE"
            assert response.body == first.body
        finally:
            mock_endpoint.force_error = False
            svc.close()

    def test_timeout_maps_to_504(self, mock_endpoint, tmp_path):
        config = ServiceConfig(endpoint_url=mock_endpoint.url,
                               cache_dir=str(tmp_path),
                               request_timeout=0.1, fixed_time=T0)
        svc = FeedService(config)
        mock_endpoint.delay_seconds = 1.0
        try:
            response = svc.handle_feed(params(q="cam"), "http://h")
            assert response.status == 504
            assert json.loads(response.body)["error"] == "endpoint_timeout"
        finally:
            mock_endpoint.delay_seconds = 0.0
            svc.close()

    def test_conversion_without_rates_is_503(self, mock_endpoint, tmp_path):
        config = ServiceConfig(endpoint_url=mock_endpoint.url,
                               cache_dir=str(tmp_path),
                               rate_source=str(tmp_path / "absent.rates"),
                               fixed_time=T0)
        svc = FeedService(config)
        try:
            response = svc.handle_feed(params(
                mode="extended", q="cam", currency="USD"), "http://h")
            assert response.status == 503
            assert json.loads(response.body)["error"] == "rates_unavailable"
        finally:
            svc.close()

    def test_unknown_currency_is_400(self, service):
        response = service.handle_feed(params(
            mode="extended", q="cam", currency="XXX"), "http://h")
        assert response.status == 400
        assert json.loads(response.body)["error"] == "unknown_currency"

    def test_failures_never_cached(self, mock_endpoint, tmp_path):
        config = ServiceConfig(endpoint_url=mock_endpoint.url,
                               cache_dir=str(tmp_path), fixed_time=T0)
        svc = FeedService(config)
        try:
            mock_endpoint.force_error = True
            assert svc.handle_feed(params(q="cam"), "http://h").status == 502
            mock_endpoint.force_error = False
            response = svc.handle_feed(params(q="cam"), "http://h")
            assert response.status == 200
            assert response.headers["X-Cache-Status"] == "MISS"
        finally:
            svc.close()

    def test_deterministic_across_instances(self, mock_endpoint, tmp_path):
        bodies = []
        for name in ("a", "b"):
            config = ServiceConfig(endpoint_url=mock_endpoint.url,
                                   cache_dir=str(tmp_path / name),
                                   fixed_time=T0)
            svc = FeedService(config)
            try:
                bodies.append(svc.handle_feed(
                    params(mode="extended", q="camcorder", price_min="100",
                           price_max="500", currency="USD", image="true",
                           sort="price_asc"),
                    "http://stable.example").body)
            finally:
                svc.close()
        assert bodies[0] == bodies[1]


class TestHealthz:
    def test_ok_with_live_endpoint_and_fresh_rates(self, service):
        response = service.handle_healthz()
        assert response.status == 200
        body = json.loads(response.body)
        assert body["status"] == "ok"
        assert body["endpoint"]["reachable"] is True
        assert body["rates"]["as_of"] == "2026-08-10T06:00:00Z"
        assert body["rates"]["stale"] is False

    def test_degraded_when_endpoint_down(self, mock_endpoint, tmp_path):
        config = ServiceConfig(endpoint_url=mock_endpoint.url,
                               cache_dir=str(tmp_path), fixed_time=T0)
        svc = FeedService(config)
        try:
            svc.get_rates()  # load while the endpoint is still up
            mock_endpoint.stop()
            body = json.loads(svc.handle_healthz().body)
            assert body["status"] == "degraded"
            assert body["endpoint"]["reachable"] is False
        finally:
            svc.close()

    def test_degraded_when_rates_stale(self, mock_endpoint, tmp_path):
        config = ServiceConfig(endpoint_url=mock_endpoint.url,
                               cache_dir=str(tmp_path),
                               fixed_time=T0 + timedelta(days=30))
        svc = FeedService(config)
        try:
            body = json.loads(svc.handle_healthz().body)
            assert body["status"] == "degraded"
            assert body["rates"]["stale"] is True
        finally:
            svc.close()


class TestHttpServer:
    @pytest.fixture()
    def server_url(self, service):
        server = make_server(service)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        host, port = server.server_address[:2]
        yield f"http://{host}:{port}"
        server.shutdown()
        server.server_close()

    def _get(self, url):
        try:
            with urllib.request.urlopen(url) as resp:
                return resp.status, dict(resp.headers), resp.read()
        except urllib.error.HTTPError as err:
            return err.code, dict(err.headers), err.read()

    def test_feed_route(self, server_url):
        status, headers, body = self._get(server_url + "/feed?q=camcorder")
        assert status == 200
        assert headers["X-Cache-Status"] == "MISS"
        assert body.startswith(b"<?xml")

    def test_host_header_becomes_self_url_base(self, server_url):
        _, _, body = self._get(server_url + "/feed?q=camcorder&format=atom")
        host = server_url.removeprefix("http://")
        assert f"<id>http://{host}/feed?".encode() in body

    def test_healthz_route(self, server_url):
        status, _, body = self._get(server_url + "/healthz")
        assert status == 200
        assert json.loads(body)["status"] in ("ok", "degraded")

    def test_unknown_route_404(self, server_url):
        status, _, body = self._get(server_url + "/nope")
        assert status == 404
        assert json.loads(body)["error"] == "not_found"

    def test_error_statuses_pass_through(self, server_url):
        status, _, body = self._get(server_url + "/feed?mode=extended")
        assert status == 400
        assert json.loads(body)["error"] == "invalid_request"
