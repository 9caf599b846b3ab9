/**
 * Atom preview parsing.
 *
 * The feed's content elements carry the offer description as entity-encoded
 * RDFa markup. The XML parser hands the decoded fragment back as text, a
 * second HTML parse turns it into elements, and the card fields are read
 * off the RDFa property attributes. The about attribute is the offer's
 * original entity URI; cards must show that URI, never something re-minted
 * from the feed.
 */

const ATOM = "http://www.w3.org/2005/Atom";
const GEORSS = "http://www.georss.org/georss";

export interface OfferFragment {
  uri: string;
  title: string;
  price: string;
  currency: string;
  imageUrl: string;
  description: string;
}

export interface OfferCard extends OfferFragment {
  entryId: string;
  updated: string;
  link: string;
  point: { lat: string; lon: string } | null;
}

export interface PreviewFeed {
  title: string;
  updated: string;
  entries: OfferCard[];
}

function childText(parent: Element, ns: string, name: string): string {
  for (const el of Array.from(parent.getElementsByTagNameNS(ns, name))) {
    if (el.parentNode === parent) return el.textContent ?? "";
  }
  return "";
}

/** Pull the RDFa-annotated offer fields out of a decoded content fragment. */
export function decodeOfferFragment(html: string): OfferFragment {
  const doc = new DOMParser().parseFromString(html, "text/html");
  const root = doc.querySelector("[about]");
  const prop = (name: string): Element | null =>
    doc.querySelector(`[property="${name}"]`);
  return {
    uri: root?.getAttribute("about") ?? "",
    title: prop("gr:name")?.textContent ?? "",
    price: prop("gr:hasCurrencyValue")?.textContent ?? "",
    currency: prop("gr:hasCurrency")?.textContent ?? "",
    imageUrl: prop("foaf:depiction")?.getAttribute("src") ?? "",
    description: prop("gr:description")?.textContent ?? "",
  };
}

export function parsePreview(xml: string): PreviewFeed {
  const doc = new DOMParser().parseFromString(xml, "application/xml");
  const feed = doc.documentElement;
  if (feed.localName !== "feed" || feed.namespaceURI !== ATOM) {
    throw new Error(`expected an Atom feed, got <${feed.tagName}>`);
  }
  const entries: OfferCard[] = [];
  for (const entry of Array.from(feed.getElementsByTagNameNS(ATOM, "entry"))) {
    let link = "";
    for (const el of Array.from(entry.getElementsByTagNameNS(ATOM, "link"))) {
      if (el.parentNode === entry && el.getAttribute("rel") === "alternate") {
        link = el.getAttribute("href") ?? "";
      }
    }
    const pointText = childText(entry, GEORSS, "point").trim();
    let point: OfferCard["point"] = null;
    if (pointText) {
      const [lat, lon] = pointText.split(/\s+/);
      if (lat && lon) point = { lat, lon };
    }
    const fragment = decodeOfferFragment(childText(entry, ATOM, "content"));
    const entryId = childText(entry, ATOM, "id");
    entries.push({
      ...fragment,
      uri: fragment.uri || entryId,
      entryId,
      updated: childText(entry, ATOM, "updated"),
      link,
      point,
    });
  }
  return {
    title: childText(feed, ATOM, "title"),
    updated: childText(feed, ATOM, "updated"),
    entries,
  };
}
