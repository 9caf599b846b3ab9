"""Format-neutral domain model shared by every other layer.

Money, GeoPoint, FeedEntry and FeedDocument are immutable value objects that
validate themselves at construction time. SearchRequest is deliberately
permissive: it carries whatever the transport layer parsed, and
``validate_request`` reports every violated invariant instead of raising, so
callers can return the full violation list to clients in one round trip.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from enum import Enum
from html.parser import HTMLParser
from typing import Optional
from urllib.parse import urlparse

CURRENCY_RE = re.compile(r"^[A-Z]{3}$")

# Hard cap on result size, regardless of configuration.
LIMIT_CAP = 100
DEFAULT_LIMIT = 20


class ModelError(ValueError):
    """A value object was constructed with data violating its invariants."""


def as_decimal(value) -> Decimal:
    """Coerce to Decimal. Floats go through str() so they keep their printed form."""
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise ModelError(f"not a number: {value!r}")
    if isinstance(value, int):
        return Decimal(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ModelError(f"not a finite number: {value!r}")
        return Decimal(str(value))
    try:
        dec = Decimal(str(value).strip())
    except InvalidOperation as exc:
        raise ModelError(f"not a number: {value!r}") from exc
    if not dec.is_finite():
        raise ModelError(f"not a finite number: {value!r}")
    return dec


def is_absolute_uri(value: str) -> bool:
    if not value or not isinstance(value, str):
        return False
    parsed = urlparse(value)
    if not parsed.scheme or not re.match(r"^[A-Za-z][A-Za-z0-9+.-]*$", parsed.scheme):
        return False
    return bool(parsed.netloc or parsed.path)


def ensure_utc(ts: datetime) -> datetime:
    """Normalize a timestamp to aware UTC; naive input is taken as UTC."""
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class Money:
    """An exact decimal amount in one ISO-4217 currency."""

    amount: Decimal
    currency: str

    def __post_init__(self):
        object.__setattr__(self, "amount", as_decimal(self.amount))
        if self.amount < 0:
            raise ModelError(f"negative amount: {self.amount}")
        if not CURRENCY_RE.match(self.currency or ""):
            raise ModelError(f"invalid currency code: {self.currency!r}")

    def __str__(self) -> str:
        return f"{self.amount} {self.currency}"


@dataclass(frozen=True)
class GeoPoint:
    """WGS 84 coordinates in decimal degrees."""

    lat: Decimal
    lon: Decimal

    def __post_init__(self):
        object.__setattr__(self, "lat", as_decimal(self.lat))
        object.__setattr__(self, "lon", as_decimal(self.lon))
        if not (-90 <= self.lat <= 90):
            raise ModelError(f"latitude out of range: {self.lat}")
        if not (-180 <= self.lon <= 180):
            raise ModelError(f"longitude out of range: {self.lon}")


class _FragmentInspector(HTMLParser):
    """Finds the top-level elements of an HTML fragment and their attributes."""

    VOID_TAGS = {"img", "br", "hr", "meta", "link", "input", "source", "wbr"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.depth = 0
        self.top_elements: list[tuple[str, dict]] = []
        self.stray_text = False

    def handle_starttag(self, tag, attrs):
        if self.depth == 0:
            self.top_elements.append((tag, dict(attrs)))
        if tag not in self.VOID_TAGS:
            self.depth += 1

    def handle_startendtag(self, tag, attrs):
        if self.depth == 0:
            self.top_elements.append((tag, dict(attrs)))

    def handle_endtag(self, tag):
        if tag not in self.VOID_TAGS and self.depth > 0:
            self.depth -= 1

    def handle_data(self, data):
        if self.depth == 0 and data.strip():
            self.stray_text = True


def rdfa_subject(fragment: str) -> Optional[str]:
    """Return the RDFa subject of a fragment, or None if the fragment is not
    exactly one top-level element carrying an ``about`` attribute."""
    inspector = _FragmentInspector()
    inspector.feed(fragment)
    inspector.close()
    if inspector.stray_text or len(inspector.top_elements) != 1:
        return None
    _, attrs = inspector.top_elements[0]
    return attrs.get("about")


@dataclass(frozen=True)
class FeedEntry:
    """One offer as it will appear in a feed, format-neutral."""

    entity_uri: str
    title: str
    page_url: str
    updated: datetime
    description: str = ""
    price: Optional[Money] = None
    image_url: Optional[str] = None
    geo: Optional[GeoPoint] = None
    rdfa_html: str = ""

    def __post_init__(self):
        if not is_absolute_uri(self.entity_uri):
            raise ModelError(f"entity_uri not an absolute URI: {self.entity_uri!r}")
        if not self.title or not self.title.strip():
            raise ModelError("title must be non-empty")
        if not is_absolute_uri(self.page_url):
            raise ModelError(f"page_url not an absolute URI: {self.page_url!r}")
        if self.image_url is not None and not is_absolute_uri(self.image_url):
            raise ModelError(f"image_url not an absolute URI: {self.image_url!r}")
        object.__setattr__(self, "updated", ensure_utc(self.updated))
        # The RDFa payload, when present, must be a single-element fragment
        # whose subject is the preserved offer URI.
        if self.rdfa_html and rdfa_subject(self.rdfa_html) != self.entity_uri:
            raise ModelError("rdfa_html subject does not preserve entity_uri")


@dataclass(frozen=True)
class FeedDocument:
    """Channel-level container; entry order matches SPARQL result order."""

    title: str
    self_url: str
    description: str
    generated_at: datetime
    entries: tuple[FeedEntry, ...]

    def __post_init__(self):
        if not self.title:
            raise ModelError("feed title must be non-empty")
        if not is_absolute_uri(self.self_url):
            raise ModelError(f"self_url not an absolute URI: {self.self_url!r}")
        object.__setattr__(self, "generated_at", ensure_utc(self.generated_at))
        object.__setattr__(self, "entries", tuple(self.entries))


class SearchMode(str, Enum):
    BASIC = "basic"
    EXTENDED = "extended"
    EXPERT = "expert"


class SortOrder(str, Enum):
    NONE = "none"
    PRICE_ASC = "price_asc"
    PRICE_DESC = "price_desc"


class FeedFormat(str, Enum):
    RSS = "rss"
    ATOM = "atom"


@dataclass(frozen=True)
class LocationFilter:
    """Center point plus search radius. Radius is validated by validate_request."""

    point: GeoPoint
    radius_km: Decimal

    def __post_init__(self):
        object.__setattr__(self, "radius_km", as_decimal(self.radius_km))


@dataclass(frozen=True)
class SearchRequest:
    """User search intent. Invalid combinations are reported by validate_request."""

    mode: SearchMode = SearchMode.BASIC
    keyword: str = ""
    price_min: Optional[Decimal] = None
    price_max: Optional[Decimal] = None
    target_currency: Optional[str] = None
    require_image: bool = False
    sort: SortOrder = SortOrder.NONE
    location: Optional[LocationFilter] = None
    limit: int = DEFAULT_LIMIT
    raw_query: str = ""
    format: FeedFormat = FeedFormat.RSS


@dataclass(frozen=True)
class Violation:
    """One violated SearchRequest invariant, addressable to a request field."""

    field: str
    code: str
    message: str


def validate_request(req: SearchRequest) -> list[Violation]:
    """Check every SearchRequest invariant; returns an empty list iff valid.

    Pure: never raises, never mutates, identical input gives identical output.
    """
    violations: list[Violation] = []

    if req.mode in (SearchMode.BASIC, SearchMode.EXTENDED):
        if not req.keyword or not req.keyword.strip():
            violations.append(Violation(
                "q", "missing_keyword",
                f"{req.mode.value} mode requires a non-empty keyword"))
        if req.raw_query:
            violations.append(Violation(
                "query", "unexpected_raw_query",
                f"raw_query must be empty in {req.mode.value} mode"))
    elif req.mode is SearchMode.EXPERT:
        if not req.raw_query or not req.raw_query.strip():
            violations.append(Violation(
                "query", "missing_raw_query",
                "expert mode requires a non-empty raw query"))

    for name, value in (("price_min", req.price_min), ("price_max", req.price_max)):
        if value is not None and value < 0:
            violations.append(Violation(
                name, "negative_price", f"{name} must be non-negative, got {value}"))
    if req.price_min is not None and req.price_max is not None \
            and req.price_min > req.price_max:
        violations.append(Violation(
            "price_min", "inverted_price_range",
            f"price_min {req.price_min} exceeds price_max {req.price_max}"))

    if req.target_currency is not None and not CURRENCY_RE.match(req.target_currency):
        violations.append(Violation(
            "currency", "invalid_currency",
            f"currency must be a 3-letter ISO-4217 code, got {req.target_currency!r}"))

    if req.location is not None and req.location.radius_km <= 0:
        violations.append(Violation(
            "radius_km", "non_positive_radius",
            f"radius_km must be positive, got {req.location.radius_km}"))

    if not isinstance(req.limit, int) or req.limit < 1 or req.limit > LIMIT_CAP:
        violations.append(Violation(
            "limit", "limit_out_of_range",
            f"limit must be between 1 and {LIMIT_CAP}, got {req.limit}"))

    return violations
