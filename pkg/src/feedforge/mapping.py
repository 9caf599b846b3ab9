"""Turn SPARQL bindings into feed entries and render their RDFa payloads.

Defective rows never fail a feed: a row missing its mandatory fields is
dropped, a malformed optional field is omitted, and every such event bumps
the defect counter the caller can inspect or log. Silent data invention
(zero prices, epoch dates) is deliberately avoided.
"""

from __future__ import annotations

import html
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation, ROUND_HALF_EVEN
from typing import Optional

from .currency import QUANTUM, parse_rfc3339, RateTableError
from .geo import haversine_km
from .model import (
    FeedEntry,
    GeoPoint,
    ModelError,
    Money,
    SearchRequest,
)
from .sparql import BindingSet, Term

GR = "http://purl.org/goodrelations/v1#"
FOAF = "http://xmlns.com/foaf/0.1/"

RDFA_PREFIX = f"gr: {GR} foaf: {FOAF}"


@dataclass(frozen=True)
class MappingResult:
    """Entries in result order plus a count of dropped rows/fields."""

    entries: tuple[FeedEntry, ...]
    defects: int
    defect_notes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "defect_notes", tuple(self.defect_notes))


def _text(term: Optional[Term]) -> Optional[str]:
    return term.value if term is not None else None


def _uri(term: Optional[Term]) -> Optional[str]:
    if term is not None and term.kind == "uri":
        return term.value
    return None


def map_bindings(bindings: BindingSet, req: SearchRequest,
                 now: Optional[datetime] = None) -> MappingResult:
    """Build FeedEntry values from result rows, preserving row order.

    Rows without entity or title are dropped; duplicate entities keep their
    first row. With an active location filter the bounding-box pre-filter is
    refined here to the exact radius via haversine (entries without a usable
    point cannot prove they are inside and are removed too).
    """
    mapping_time = (now or datetime.now(timezone.utc)).astimezone(timezone.utc)
    entries: list[FeedEntry] = []
    seen: set[str] = set()
    defects = 0
    notes: list[str] = []

    def defect(note: str):
        nonlocal defects
        defects += 1
        notes.append(note)

    for row in bindings.rows:
        entity_uri = _uri(row.get("entity"))
        title = _text(row.get("title"))
        if not entity_uri or not title or not title.strip():
            defect(f"row dropped: missing entity or title ({entity_uri!r})")
            continue
        if entity_uri in seen:
            continue
        seen.add(entity_uri)

        price: Optional[Money] = None
        amount_text = _text(row.get("price"))
        currency_text = _text(row.get("currency"))
        if amount_text is not None and currency_text is not None:
            try:
                amount = Decimal(amount_text)
                if not amount.is_finite():
                    raise InvalidOperation
                # in-query conversion yields long quotients; cap at 4 digits
                if -amount.as_tuple().exponent > 4:
                    amount = amount.quantize(QUANTUM, rounding=ROUND_HALF_EVEN)
                price = Money(amount, currency_text)
            except (InvalidOperation, ModelError):
                defect(f"{entity_uri}: unparsable price "
                       f"{amount_text!r} {currency_text!r}")
        elif amount_text is not None or currency_text is not None:
            defect(f"{entity_uri}: price missing its amount or currency")

        geo: Optional[GeoPoint] = None
        lat_text = _text(row.get("lat"))
        lon_text = _text(row.get("long"))
        if lat_text is not None and lon_text is not None:
            try:
                geo = GeoPoint(Decimal(lat_text), Decimal(lon_text))
            except (InvalidOperation, ModelError):
                defect(f"{entity_uri}: unparsable coordinates "
                       f"({lat_text!r}, {lon_text!r})")

        updated = mapping_time
        updated_text = _text(row.get("updated"))
        if updated_text is not None:
            try:
                updated = parse_rfc3339(updated_text)
            except RateTableError:
                defect(f"{entity_uri}: unparsable timestamp {updated_text!r}")

        image_url = _uri(row.get("image"))
        if row.get("image") is not None and image_url is None:
            defect(f"{entity_uri}: image binding is not a URI")
        page_url = _uri(row.get("page")) or entity_uri

        try:
            entry = FeedEntry(
                entity_uri=entity_uri,
                title=title,
                page_url=page_url,
                updated=updated,
                description=_text(row.get("description")) or "",
                price=price,
                image_url=image_url,
                geo=geo,
            )
        except ModelError as exc:
            defect(f"{entity_uri}: {exc}")
            continue

        if req.location is not None:
            if entry.geo is None:
                defect(f"{entity_uri}: no coordinates under a location filter")
                continue
            distance = haversine_km(req.location.point, entry.geo)
            if distance > float(req.location.radius_km):
                continue

        entries.append(replace(entry, rdfa_html=render_rdfa(entry)))

    return MappingResult(tuple(entries), defects, tuple(notes))


def render_rdfa(entry: FeedEntry) -> str:
    """One self-contained RDFa fragment per offer.

    The subject is the offer's original URI, never a re-minted one. The
    foaf:page link deliberately carries href="" so the triple's object is
    the URI of whatever document the fragment ends up embedded in; that is
    what makes re-publication of feed content trackable. The human-visible
    link to the shop page is a separate, annotation-free anchor.
    """
    e = html.escape
    parts = [
        f'<div about="{e(entry.entity_uri)}" typeof="gr:Offering" '
        f'prefix="{RDFA_PREFIX}">',
        f'<a property="foaf:page" href="">'
        f'<span property="gr:name">{e(entry.title)}</span></a>',
    ]
    if entry.image_url:
        parts.append(f'<img property="foaf:depiction" '
                     f'src="{e(entry.image_url)}" alt="{e(entry.title)}">')
    if entry.price is not None:
        parts.append(
            f'<span property="gr:hasCurrencyValue">{entry.price.amount}</span> '
            f'<span property="gr:hasCurrency">{e(entry.price.currency)}</span>')
    if entry.description:
        parts.append(f'<p property="gr:description">{e(entry.description)}</p>')
    parts.append(f'<a href="{e(entry.page_url)}">View offer</a>')
    parts.append("</div>")
    return "".join(parts)
