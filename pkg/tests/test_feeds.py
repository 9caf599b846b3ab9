"""RSS 2.0 / Atom serialization: structure, dates, escaping, determinism."""

import xml.etree.ElementTree as ET
from datetime import datetime, timezone
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from feedforge.feeds import (ATOM_MEDIA_TYPE, RSS_MEDIA_TYPE, georss_point,
                             serialize, to_atom, to_rss, unescape)
from feedforge.mapping import render_rdfa
from feedforge.model import (FeedDocument, FeedEntry, FeedFormat, GeoPoint,
                             Money)

ATOM = "{http://www.w3.org/2005/Atom}"
GEORSS = "{http://www.georss.org/georss}"

NOW = datetime(2026, 8, 15, 12, 0, 0, tzinfo=timezone.utc)


def entry(n=1, **kw):
    from dataclasses import replace
    fields = dict(
        entity_uri=f"http://shop.example/offers/o{n}",
        title=f"Offer {n}",
        page_url=f"http://shop.example/pages/o{n}.html",
        updated=NOW,
        description="plain description",
        price=Money(Decimal("12.50"), "EUR"),
        image_url=f"http://img.shop.example/o{n}.jpg",
        geo=GeoPoint(Decimal("48.1351"), Decimal("11.5820")),
    )
    fields.update(kw)
    e = FeedEntry(**fields)
    return replace(e, rdfa_html=render_rdfa(e))


def document(*entries, **kw):
    fields = dict(
        title="Search results",
        self_url="http://localhost:8080/feed?mode=basic&q=offer&limit=20",
        description="offers feed",
        generated_at=NOW,
        entries=tuple(entries),
    )
    fields.update(kw)
    return FeedDocument(**fields)


class TestRss:
    def test_channel_elements(self):
        root = ET.fromstring(to_rss(document(entry())))
        assert root.tag == "rss" and root.get("version") == "2.0"
        channel = root.find("channel")
        assert channel.findtext("title") == "Search results"
        assert channel.findtext("link") == \
            "http://localhost:8080/feed?mode=basic&q=offer&limit=20"
        assert channel.findtext("description") == "offers feed"
        assert channel.findtext("lastBuildDate") == "Sat, 15 Aug 2026 12:00:00 GMT"

    def test_item_elements(self):
        root = ET.fromstring(to_rss(document(entry())))
        item = root.find("channel/item")
        assert item.findtext("title") == "Offer 1"
        assert item.findtext("link") == "http://shop.example/pages/o1.html"
        guid = item.find("guid")
        assert guid.text == "http://shop.example/offers/o1"
        assert guid.get("isPermaLink") == "true"
        assert item.findtext("pubDate") == "Sat, 15 Aug 2026 12:00:00 GMT"
        assert item.findtext(f"{GEORSS}point") == "48.1351 11.582"

    def test_description_holds_entity_encoded_rdfa(self):
        e = entry()
        text = to_rss(document(e))
        # raw angle brackets of the fragment never appear unescaped
        assert "<div about=" not in text
        item = ET.fromstring(text).find("channel/item")
        # the XML parser undoes exactly one level of encoding
        assert item.findtext("description") == e.rdfa_html

    def test_no_georss_without_geo(self):
        text = to_rss(document(entry(geo=None)))
        assert ET.fromstring(text).find(f"channel/item/{GEORSS}point") is None

    def test_epoch_pubdate(self):
        epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
        text = to_rss(document(entry(updated=epoch)))
        assert "<pubDate>Thu, 01 Jan 1970 00:00:00 GMT</pubDate>" in text

    def test_empty_feed_is_valid(self):
        root = ET.fromstring(to_rss(document()))
        assert root.find("channel/item") is None


class TestAtom:
    def test_feed_elements(self):
        root = ET.fromstring(to_atom(document(entry())))
        assert root.tag == f"{ATOM}feed"
        assert root.findtext(f"{ATOM}id") == \
            "http://localhost:8080/feed?mode=basic&q=offer&limit=20"
        assert root.findtext(f"{ATOM}title") == "Search results"
        assert root.findtext(f"{ATOM}updated") == "2026-08-15T12:00:00Z"
        self_link = [l for l in root.findall(f"{ATOM}link")
                     if l.get("rel") == "self"]
        assert len(self_link) == 1
        assert self_link[0].get("href") == root.findtext(f"{ATOM}id")

    def test_entry_elements(self):
        root = ET.fromstring(to_atom(document(entry())))
        el = root.find(f"{ATOM}entry")
        assert el.findtext(f"{ATOM}id") == "http://shop.example/offers/o1"
        assert el.findtext(f"{ATOM}title") == "Offer 1"
        assert el.findtext(f"{ATOM}updated") == "2026-08-15T12:00:00Z"
        alternate = el.find(f"{ATOM}link")
        assert alternate.get("rel") == "alternate"
        assert alternate.get("href") == "http://shop.example/pages/o1.html"
        content = el.find(f"{ATOM}content")
        assert content.get("type") == "html"
        assert el.findtext(f"{GEORSS}point") == "48.1351 11.582"

    def test_content_round_trips_to_fragment(self):
        e = entry()
        el = ET.fromstring(to_atom(document(e))).find(f"{ATOM}entry")
        assert el.findtext(f"{ATOM}content") == e.rdfa_html

    def test_feed_has_author(self):
        # RFC 4287: a feed without entry authors needs a feed-level author
        root = ET.fromstring(to_atom(document(entry())))
        assert root.findtext(f"{ATOM}author/{ATOM}name")


class TestSerialize:
    def test_rss_media_type(self):
        body, media = serialize(document(entry()), FeedFormat.RSS)
        assert media == RSS_MEDIA_TYPE == "application/rss+xml"
        assert body.startswith(b"<?xml")

    def test_atom_media_type(self):
        _, media = serialize(document(entry()), FeedFormat.ATOM)
        assert media == ATOM_MEDIA_TYPE == "application/atom+xml"

    def test_deterministic_bytes(self):
        doc = document(entry(), entry(2))
        assert serialize(doc, FeedFormat.RSS) == serialize(doc, FeedFormat.RSS)
        assert serialize(doc, FeedFormat.ATOM) == serialize(doc, FeedFormat.ATOM)

    def test_utf8_encoded(self):
        e = entry(title="Kameratasche für Zubehör")
        body, _ = serialize(document(e), FeedFormat.RSS)
        assert "für".encode("utf-8") in body


class TestGeorssPoint:
    def test_shortest_exact_form(self):
        assert georss_point(GeoPoint(Decimal("48.1351"),
                                     Decimal("11.5820"))) == "48.1351 11.582"

    def test_integer_coordinates_stay_plain(self):
        assert georss_point(GeoPoint(Decimal("50"), Decimal("-100"))) == "50 -100"

    def test_zero(self):
        assert georss_point(GeoPoint(Decimal("0"), Decimal("0"))) == "0 0"


class TestEscaping:
    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)),
                   max_size=200))
    def test_involution(self, text):
        from feedforge.feeds import _esc
        assert unescape(_esc(text)) == text

    def test_each_character_escaped_exactly_once(self):
        from feedforge.feeds import _esc
        assert _esc('&<>"') == "&amp;&lt;&gt;&quot;"
        assert _esc("&amp;") == "&amp;amp;"  # no double-escape collapse

    def test_fragment_survives_encode_decode(self):
        e = entry(title='"Tricky" & <Title>')
        assert unescape(_esc_of(e)) == e.rdfa_html


def _esc_of(e):
    from feedforge.feeds import _esc
    return _esc(e.rdfa_html)
