/**
 * Form state and its /feed query-string round trip.
 *
 * The state carries exactly the fields the server understands plus the
 * active tab (the mode). Serialization emits only the fields the current
 * mode sends to /feed, in the server's canonical parameter order, so a
 * generated URL pasted back always reconstructs the submitted state.
 * Numeric fields stay raw strings: the server owns validation, the client
 * only echoes its violations.
 */

export type Mode = "basic" | "extended" | "expert";
export type FeedFormat = "rss" | "atom";
export type SortOrder = "" | "price_asc" | "price_desc";

export const CANONICAL_VARIABLES = [
  "entity", "title", "description", "price", "currency",
  "image", "page", "lat", "long", "updated",
] as const;

export interface FormState {
  mode: Mode;
  format: FeedFormat;
  keyword: string;
  priceMin: string;
  priceMax: string;
  currency: string;
  imageOnly: boolean;
  sort: SortOrder;
  lat: string;
  lon: string;
  radiusKm: string;
  limit: string;
  rawQuery: string;
}

export function emptyState(): FormState {
  return {
    mode: "basic",
    format: "rss",
    keyword: "",
    priceMin: "",
    priceMax: "",
    currency: "",
    imageOnly: false,
    sort: "",
    lat: "",
    lon: "",
    radiusKm: "",
    limit: "",
    rawQuery: "",
  };
}

/** Serialize to the /feed query string. Defaults and mode-foreign fields are omitted. */
export function toQueryString(state: FormState): string {
  const params = new URLSearchParams();
  if (state.mode !== "basic") params.set("mode", state.mode);
  if (state.format !== "rss") params.set("format", state.format);
  if (state.mode !== "expert" && state.keyword) params.set("q", state.keyword);
  if (state.mode === "extended") {
    if (state.priceMin) params.set("price_min", state.priceMin);
    if (state.priceMax) params.set("price_max", state.priceMax);
    if (state.currency) params.set("currency", state.currency);
    if (state.imageOnly) params.set("image", "true");
    if (state.sort) params.set("sort", state.sort);
    if (state.lat) params.set("lat", state.lat);
    if (state.lon) params.set("lon", state.lon);
    if (state.radiusKm) params.set("radius_km", state.radiusKm);
  }
  if (state.limit) params.set("limit", state.limit);
  if (state.mode === "expert" && state.rawQuery) params.set("query", state.rawQuery);
  return params.toString();
}

const MODES: readonly Mode[] = ["basic", "extended", "expert"];
const SORTS: readonly SortOrder[] = ["", "price_asc", "price_desc"];

/**
 * Parse a query string (with or without a leading "?" or a full URL around
 * it) back into a FormState. Unknown parameters are ignored; unknown values
 * for closed fields fall back to the default rather than failing, since the
 * server is the authority on rejecting them.
 */
export function parseQueryString(input: string): FormState {
  let search = input;
  if (input.includes("://")) {
    try {
      search = new URL(input).search;
    } catch {
      search = "";
    }
  }
  const qIdx = search.indexOf("?");
  if (qIdx >= 0) search = search.slice(qIdx + 1);
  const params = new URLSearchParams(search);
  const state = emptyState();

  const mode = params.get("mode");
  if (mode && (MODES as readonly string[]).includes(mode)) state.mode = mode as Mode;
  if (params.get("format") === "atom") state.format = "atom";
  state.keyword = params.get("q") ?? "";
  state.priceMin = params.get("price_min") ?? "";
  state.priceMax = params.get("price_max") ?? "";
  state.currency = params.get("currency") ?? "";
  state.imageOnly = params.get("image") === "true";
  const sort = params.get("sort");
  if (sort && (SORTS as readonly string[]).includes(sort)) state.sort = sort as SortOrder;
  state.lat = params.get("lat") ?? "";
  state.lon = params.get("lon") ?? "";
  state.radiusKm = params.get("radius_km") ?? "";
  state.limit = params.get("limit") ?? "";
  state.rawQuery = params.get("query") ?? "";
  return state;
}
