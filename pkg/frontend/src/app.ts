/**
 * The query builder itself: three tabs, a live preview, a copyable feed URL.
 *
 * The client never builds queries and never second-guesses input. It sends
 * the form as-is to /feed and echoes whatever violations the server returns
 * next to the offending fields. At most one preview request is in flight;
 * submitting again aborts the previous one.
 */

import { FeedError, Violation, feedUrl, fetchHealth, fetchPreview } from "./api";
import { OfferCard, parsePreview } from "./atom";
import { CANONICAL_VARIABLES, FormState, Mode, emptyState, parseQueryString } from "./state";

export interface AppController {
  state: FormState;
  submit(): Promise<void>;
  switchMode(mode: Mode): void;
  loadUrl(url: string): void;
}

interface Field {
  name: string;
  label: string;
  control: "text" | "number" | "checkbox" | "select" | "textarea";
  options?: readonly string[];
  get(s: FormState): string | boolean;
  set(s: FormState, v: string | boolean): void;
}

const FIELDS: Record<Mode, Field[]> = {
  basic: [
    { name: "q", label: "Keyword", control: "text",
      get: s => s.keyword, set: (s, v) => { s.keyword = v as string; } },
  ],
  extended: [
    { name: "q", label: "Keyword", control: "text",
      get: s => s.keyword, set: (s, v) => { s.keyword = v as string; } },
    { name: "price_min", label: "Price from", control: "text",
      get: s => s.priceMin, set: (s, v) => { s.priceMin = v as string; } },
    { name: "price_max", label: "Price to", control: "text",
      get: s => s.priceMax, set: (s, v) => { s.priceMax = v as string; } },
    { name: "currency", label: "Currency", control: "text",
      get: s => s.currency, set: (s, v) => { s.currency = (v as string).toUpperCase(); } },
    { name: "image", label: "Only offers with pictures", control: "checkbox",
      get: s => s.imageOnly, set: (s, v) => { s.imageOnly = v as boolean; } },
    { name: "sort", label: "Sort", control: "select",
      options: ["", "price_asc", "price_desc"],
      get: s => s.sort, set: (s, v) => { s.sort = v as FormState["sort"]; } },
    { name: "lat", label: "Latitude", control: "text",
      get: s => s.lat, set: (s, v) => { s.lat = v as string; } },
    { name: "lon", label: "Longitude", control: "text",
      get: s => s.lon, set: (s, v) => { s.lon = v as string; } },
    { name: "radius_km", label: "Radius (km)", control: "text",
      get: s => s.radiusKm, set: (s, v) => { s.radiusKm = v as string; } },
  ],
  expert: [
    { name: "query", label: "SPARQL SELECT query", control: "textarea",
      get: s => s.rawQuery, set: (s, v) => { s.rawQuery = v as string; } },
  ],
};

// shared by every mode, rendered after the mode's own fields
const COMMON_FIELDS: Field[] = [
  { name: "limit", label: "Max entries", control: "number",
    get: s => s.limit, set: (s, v) => { s.limit = v as string; } },
  { name: "format", label: "Feed format", control: "select",
    options: ["rss", "atom"],
    get: s => s.format, set: (s, v) => { s.format = v as FormState["format"]; } },
];

export function renderApp(root: HTMLElement, apiBase = ""): AppController {
  const state = emptyState();
  let inflight: AbortController | null = null;

  root.innerHTML = `
    <header>
      <h1>feedforge query builder</h1>
      <span id="health" class="health">checking service…</span>
    </header>
    <nav id="tabs" role="tablist"></nav>
    <form id="search-form" novalidate>
      <div id="fields"></div>
      <p id="general-error" class="general-error" hidden></p>
      <button type="submit" id="submit">Search</button>
    </form>
    <section id="result" hidden>
      <label>Feed URL
        <input id="feed-url" readonly>
      </label>
      <p id="cache-note" class="cache-note"></p>
      <div id="preview"></div>
    </section>
  `;

  const el = <T extends HTMLElement>(id: string): T =>
    root.querySelector<T>(`#${id}`)!;

  function renderTabs() {
    const tabs = el<HTMLElement>("tabs");
    tabs.innerHTML = "";
    for (const mode of ["basic", "extended", "expert"] as const) {
      const button = document.createElement("button");
      button.type = "button";
      button.textContent = mode;
      button.dataset.mode = mode;
      button.setAttribute("role", "tab");
      button.setAttribute("aria-selected", String(mode === state.mode));
      button.addEventListener("click", () => controller.switchMode(mode));
      tabs.appendChild(button);
    }
  }

  function fieldRow(field: Field): HTMLElement {
    const row = document.createElement("label");
    row.className = "field";
    row.dataset.field = field.name;
    const caption = document.createElement("span");
    caption.textContent = field.label;
    row.appendChild(caption);

    let input: HTMLElement;
    if (field.control === "textarea") {
      const area = document.createElement("textarea");
      area.rows = 8;
      area.value = field.get(state) as string;
      input = area;
    } else if (field.control === "select") {
      const select = document.createElement("select");
      for (const option of field.options ?? []) {
        const opt = document.createElement("option");
        opt.value = option;
        opt.textContent = option === "" ? "(unsorted)" : option;
        select.appendChild(opt);
      }
      select.value = field.get(state) as string;
      input = select;
    } else if (field.control === "checkbox") {
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = field.get(state) as boolean;
      input = box;
    } else {
      const text = document.createElement("input");
      text.type = field.control === "number" ? "number" : "text";
      text.value = field.get(state) as string;
      input = text;
    }
    (input as HTMLInputElement).name = field.name;
    row.appendChild(input);
    return row;
  }

  function visibleFields(): Field[] {
    return [...FIELDS[state.mode], ...COMMON_FIELDS];
  }

  function renderFields() {
    const box = el<HTMLElement>("fields");
    box.innerHTML = "";
    for (const field of visibleFields()) box.appendChild(fieldRow(field));
    if (state.mode === "expert") {
      const hint = document.createElement("div");
      hint.className = "variables";
      hint.innerHTML = `<span>Projectable variables:</span> <ul>${
        CANONICAL_VARIABLES.map(v => `<li>?${v}</li>`).join("")}</ul>`;
      box.appendChild(hint);
    }
  }

  /** Pull whatever the user typed back into the state object. */
  function readForm() {
    for (const field of visibleFields()) {
      const control = root.querySelector<HTMLInputElement>(`[name="${field.name}"]`);
      if (!control) continue;
      field.set(state, field.control === "checkbox" ? control.checked : control.value);
    }
  }

  function clearViolations() {
    for (const note of Array.from(root.querySelectorAll(".violation"))) note.remove();
    const general = el<HTMLElement>("general-error");
    general.hidden = true;
    general.textContent = "";
  }

  // single-field 400s come without a violations array; route them to the
  // field they are about so the message lands next to the control
  const ERROR_FIELD: Record<string, string> = {
    invalid_query: "query",
    unsafe_keyword: "q",
    unknown_currency: "currency",
  };

  function showViolations(error: FeedError) {
    const general = el<HTMLElement>("general-error");
    let violations = error.violations ?? [];
    const impliedField = ERROR_FIELD[error.error];
    if (violations.length === 0 && impliedField) {
      violations = [{ field: impliedField, code: error.error, message: error.message }];
    }
    const leftover: string[] = [];
    for (const violation of violations) {
      const row = root.querySelector(`[data-field="${violation.field}"]`);
      if (row) {
        const note = document.createElement("span");
        note.className = "violation";
        note.textContent = violation.message;
        row.appendChild(note);
      } else {
        leftover.push(`${violation.field}: ${violation.message}`);
      }
    }
    const head = violations.length > 0 && leftover.length === 0
      ? "" : `${error.error}: ${error.message}`;
    const text = [head, ...leftover].filter(Boolean).join(" / ");
    if (text) {
      general.textContent = text;
      general.hidden = false;
    }
  }

  function showGeneralError(message: string) {
    const general = el<HTMLElement>("general-error");
    general.textContent = message;
    general.hidden = false;
  }

  function cardElement(card: OfferCard): HTMLElement {
    const div = document.createElement("article");
    div.className = "card";
    if (card.imageUrl) {
      const img = document.createElement("img");
      img.src = card.imageUrl;
      img.alt = card.title;
      div.appendChild(img);
    }
    const heading = document.createElement("h3");
    const link = document.createElement("a");
    link.href = card.link || card.uri;
    link.textContent = card.title;
    heading.appendChild(link);
    div.appendChild(heading);
    if (card.price) {
      const price = document.createElement("p");
      price.className = "price";
      price.textContent = `${card.price} ${card.currency}`.trim();
      div.appendChild(price);
    }
    if (card.description) {
      const desc = document.createElement("p");
      desc.className = "description";
      desc.textContent = card.description;
      div.appendChild(desc);
    }
    if (card.point) {
      const pin = document.createElement("p");
      pin.className = "pin";
      pin.textContent = `\u{1F4CD} ${card.point.lat}, ${card.point.lon}`;
      div.appendChild(pin);
    }
    const uri = document.createElement("p");
    uri.className = "entity";
    uri.textContent = card.uri;
    div.appendChild(uri);
    return div;
  }

  function renderPreview(body: string, cacheStatus: string | null) {
    const result = el<HTMLElement>("result");
    result.hidden = false;
    el<HTMLInputElement>("feed-url").value = feedUrl(apiBase, state);
    el<HTMLElement>("cache-note").textContent =
      cacheStatus ? `cache: ${cacheStatus}` : "";
    const preview = el<HTMLElement>("preview");
    preview.innerHTML = "";
    const parsed = parsePreview(body);
    if (parsed.entries.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty";
      empty.textContent = "No offers matched this search.";
      preview.appendChild(empty);
      return;
    }
    for (const card of parsed.entries) preview.appendChild(cardElement(card));
  }

  const controller: AppController = {
    state,

    switchMode(mode: Mode) {
      readForm();
      state.mode = mode;
      clearViolations();
      renderTabs();
      renderFields();
    },

    loadUrl(url: string) {
      Object.assign(state, parseQueryString(url));
      renderTabs();
      renderFields();
    },

    async submit() {
      readForm();
      clearViolations();
      inflight?.abort();
      const mine = new AbortController();
      inflight = mine;
      el<HTMLElement>("result").hidden = false;
      el<HTMLInputElement>("feed-url").value = feedUrl(apiBase, state);
      try {
        const result = await fetchPreview(apiBase, state, mine.signal);
        if (mine.signal.aborted) return;
        if (result.ok) {
          renderPreview(result.body, result.cacheStatus);
        } else {
          el<HTMLElement>("preview").innerHTML = "";
          showViolations(result.error);
        }
      } catch (err) {
        if (mine.signal.aborted) return;
        showGeneralError("service unreachable");
      } finally {
        if (inflight === mine) inflight = null;
      }
    },
  };

  renderTabs();
  renderFields();
  el<HTMLFormElement>("search-form").addEventListener("submit", event => {
    event.preventDefault();
    void controller.submit();
  });

  void fetchHealth(apiBase).then(health => {
    const badge = el<HTMLElement>("health");
    badge.textContent = health ? `service ${health.status}` : "service unreachable";
    badge.dataset.status = health?.status ?? "unreachable";
  });

  return controller;
}
