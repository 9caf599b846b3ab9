"""RSS 2.0 and Atom serialization with GeoRSS points and entity-encoded RDFa.

Both serializers are deliberately hand-assembled string builders rather than
DOM writers: the escaping rule (each of & < > " encoded exactly once, &
first) and byte-stable output across runs are the contract here, and a DOM
serializer gives control of neither.
"""

from __future__ import annotations

from datetime import timezone
from decimal import Decimal
from email.utils import format_datetime

from .model import FeedDocument, FeedEntry, GeoPoint

GEORSS_NS = "http://www.georss.org/georss"
ATOM_NS = "http://www.w3.org/2005/Atom"

RSS_MEDIA_TYPE = "application/rss+xml"
ATOM_MEDIA_TYPE = "application/atom+xml"


def _esc(text: str) -> str:
    """Entity-encode for XML text and attribute content. & goes first so
    already-produced entities are never double-escaped."""
    return (text.replace("&", "&amp;")
                .replace("<", "&lt;")
                .replace(">", "&gt;")
                .replace('"', "&quot;"))


def unescape(text: str) -> str:
    """Exact inverse of _esc (for tests and consumers)."""
    return (text.replace("&quot;", '"')
                .replace("&gt;", ">")
                .replace("&lt;", "<")
                .replace("&amp;", "&"))


def _rfc822(dt) -> str:
    return format_datetime(dt.astimezone(timezone.utc), usegmt=True)


def _rfc3339(dt) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _georss_value(d: Decimal) -> str:
    # shortest exact decimal form, never scientific notation
    return format(d.normalize(), "f")


def georss_point(geo: GeoPoint) -> str:
    return f"{_georss_value(geo.lat)} {_georss_value(geo.lon)}"


def to_rss(doc: FeedDocument) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<rss version="2.0" xmlns:georss="{GEORSS_NS}">',
        "<channel>",
        f"<title>{_esc(doc.title)}</title>",
        f"<link>{_esc(doc.self_url)}</link>",
        f"<description>{_esc(doc.description)}</description>",
        f"<lastBuildDate>{_rfc822(doc.generated_at)}</lastBuildDate>",
    ]
    for entry in doc.entries:
        lines.append("<item>")
        lines.append(f"<title>{_esc(entry.title)}</title>")
        lines.append(f"<link>{_esc(entry.page_url)}</link>")
        lines.append(f'<guid isPermaLink="true">{_esc(entry.entity_uri)}</guid>')
        lines.append(f"<pubDate>{_rfc822(entry.updated)}</pubDate>")
        lines.append(f"<description>{_esc(entry.rdfa_html)}</description>")
        if entry.geo is not None:
            lines.append(f"<georss:point>{georss_point(entry.geo)}</georss:point>")
        lines.append("</item>")
    lines.append("</channel>")
    lines.append("</rss>")
    return "\n".join(lines) + "\n"


def to_atom(doc: FeedDocument) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<feed xmlns="{ATOM_NS}" xmlns:georss="{GEORSS_NS}">',
        f"<id>{_esc(doc.self_url)}</id>",
        f"<title>{_esc(doc.title)}</title>",
        f"<updated>{_rfc3339(doc.generated_at)}</updated>",
        f'<link rel="self" href="{_esc(doc.self_url)}"/>',
        "<author><name>feedforge</name></author>",
        f"<subtitle>{_esc(doc.description)}</subtitle>",
    ]
    for entry in doc.entries:
        lines.append("<entry>")
        lines.append(f"<id>{_esc(entry.entity_uri)}</id>")
        lines.append(f"<title>{_esc(entry.title)}</title>")
        lines.append(f"<updated>{_rfc3339(entry.updated)}</updated>")
        lines.append(f'<link rel="alternate" href="{_esc(entry.page_url)}"/>')
        lines.append(f'<content type="html">{_esc(entry.rdfa_html)}</content>')
        if entry.geo is not None:
            lines.append(f"<georss:point>{georss_point(entry.geo)}</georss:point>")
        lines.append("</entry>")
    lines.append("</feed>")
    return "\n".join(lines) + "\n"


def serialize(doc: FeedDocument, fmt: str) -> tuple[bytes, str]:
    """Serialize to (bytes, media type) by format name ('rss' or 'atom')."""
    if fmt == "atom":
        return to_atom(doc).encode("utf-8"), ATOM_MEDIA_TYPE
    if fmt == "rss":
        return to_rss(doc).encode("utf-8"), RSS_MEDIA_TYPE
    raise ValueError(f"unknown feed format {fmt!r}")
