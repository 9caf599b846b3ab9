"""Command line front: serve the HTTP service, generate one feed to a file,
or run the bundled mock SPARQL endpoint.

Exit codes for `gen`: 0 success, 2 invalid request or usage, 3 endpoint
failure, 4 endpoint timeout, 5 exchange rates unavailable, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from typing import Optional

from .mockendpoint import endpoint_from_file
from .service import (ConfigError, FeedService, load_config, make_server)

GEN_EXIT_BY_STATUS = {400: 2, 502: 3, 504: 4, 503: 5}


def _add_feed_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--mode", choices=["basic", "extended", "expert"])
    parser.add_argument("--format", choices=["rss", "atom"])
    parser.add_argument("--q", help="search keyword")
    parser.add_argument("--price-min")
    parser.add_argument("--price-max")
    parser.add_argument("--currency", help="target currency (ISO 4217)")
    parser.add_argument("--image", action="store_true",
                        help="only offers with a product picture")
    parser.add_argument("--sort", choices=["price_asc", "price_desc"])
    parser.add_argument("--lat")
    parser.add_argument("--lon")
    parser.add_argument("--radius-km")
    parser.add_argument("--limit")
    parser.add_argument("--query", help="raw SPARQL (expert mode)")


def _feed_params(args: argparse.Namespace) -> dict[str, list[str]]:
    params: dict[str, list[str]] = {}
    mapping = [("mode", args.mode), ("format", args.format), ("q", args.q),
               ("price_min", args.price_min), ("price_max", args.price_max),
               ("currency", args.currency), ("sort", args.sort),
               ("lat", args.lat), ("lon", args.lon),
               ("radius_km", args.radius_km), ("limit", args.limit),
               ("query", args.query)]
    for key, value in mapping:
        if value is not None:
            params[key] = [value]
    if args.image:
        params["image"] = ["true"]
    return params


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feedforge",
        description="Compile product searches to SPARQL and publish the "
                    "results as RSS/Atom feeds.")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", help="key=value config file")
    serve.add_argument("--endpoint", help="SPARQL endpoint URL")
    serve.add_argument("--listen", help="host:port to bind")

    gen = sub.add_parser("gen", help="generate one feed to a file or stdout")
    _add_feed_flags(gen)
    gen.add_argument("--endpoint", help="SPARQL endpoint URL")
    gen.add_argument("--config", help="key=value config file")
    gen.add_argument("--out", help="output file (default: stdout)")
    gen.add_argument("--base-url", default="http://localhost",
                     help="base URL embedded as the feed's self link")

    mock = sub.add_parser("mock-endpoint",
                          help="serve a SPARQL endpoint over a Turtle file")
    mock.add_argument("--data", required=True, help="Turtle dataset file")
    mock.add_argument("--host", default="127.0.0.1")
    mock.add_argument("--port", type=int, default=0,
                      help="port to bind (default: ephemeral)")
    return parser


def _load_service(config_path: Optional[str], endpoint: Optional[str],
                  listen: Optional[str] = None) -> FeedService:
    overrides = {}
    if endpoint:
        overrides["endpoint_url"] = endpoint
    if listen:
        overrides["listen_address"] = listen
    config = load_config(config_path, overrides=overrides)
    return FeedService(config)


def _cmd_serve(args) -> int:
    try:
        service = _load_service(args.config, args.endpoint, args.listen)
    except ConfigError as exc:
        print(f"feedforge: {exc}", file=sys.stderr)
        return 2
    server = make_server(service)
    host, port = server.server_address[:2]
    print(f"feedforge serving on http://{host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        service.close()
    return 0


def _cmd_gen(args) -> int:
    try:
        service = _load_service(args.config, args.endpoint)
    except ConfigError as exc:
        print(f"feedforge: {exc}", file=sys.stderr)
        return 2
    try:
        response = service.handle_feed(_feed_params(args), args.base_url)
    finally:
        service.close()
    if response.status != 200:
        try:
            detail = json.loads(response.body.decode("utf-8"))
        except ValueError:
            detail = {"error": "unknown", "message": response.body[:200].decode(
                "utf-8", "replace")}
        print(f"feedforge: {detail.get('error')}: {detail.get('message')}",
              file=sys.stderr)
        for violation in detail.get("violations", []):
            print(f"  {violation['field']}: {violation['message']}",
                  file=sys.stderr)
        return GEN_EXIT_BY_STATUS.get(response.status, 1)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(response.body)
        print(f"feedforge: wrote {len(response.body)} bytes to {args.out}"
              f" (cache {response.headers.get('X-Cache-Status')})",
              file=sys.stderr)
    else:
        sys.stdout.buffer.write(response.body)
        sys.stdout.buffer.flush()
    return 0


def _cmd_mock_endpoint(args) -> int:
    try:
        endpoint = endpoint_from_file(args.data, host=args.host, port=args.port)
    except (OSError, ValueError) as exc:
        print(f"feedforge: cannot load {args.data}: {exc}", file=sys.stderr)
        return 2
    endpoint.start()
    print(f"mock endpoint serving {args.data} at {endpoint.url}",
          file=sys.stderr)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        endpoint.stop()
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "gen":
        return _cmd_gen(args)
    return _cmd_mock_endpoint(args)


if __name__ == "__main__":
    sys.exit(main())
