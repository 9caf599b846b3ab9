/** Thin client for the two service endpoints the UI is allowed to touch. */

import { FormState, toQueryString } from "./state";

export interface Violation {
  field: string;
  code: string;
  message: string;
}

export interface FeedError {
  error: string;
  message: string;
  violations?: Violation[];
}

export type PreviewResult =
  | { ok: true; body: string; cacheStatus: string | null }
  | { ok: false; status: number; error: FeedError };

/** The stable, copyable feed URL for the current form state. */
export function feedUrl(baseUrl: string, state: FormState): string {
  const qs = toQueryString(state);
  return `${baseUrl.replace(/\/$/, "")}/feed${qs ? "?" + qs : ""}`;
}

/**
 * Fetch the live preview. The preview always consumes the Atom variant
 * (its content element carries the entity-encoded offer markup the cards
 * are built from) regardless of the format the user picked for the
 * copyable URL.
 */
export async function fetchPreview(
  baseUrl: string,
  state: FormState,
  signal?: AbortSignal,
): Promise<PreviewResult> {
  const response = await fetch(feedUrl(baseUrl, { ...state, format: "atom" }), {
    signal,
    headers: { Accept: "application/atom+xml" },
  });
  if (response.ok) {
    return {
      ok: true,
      body: await response.text(),
      cacheStatus: response.headers.get("X-Cache-Status"),
    };
  }
  let error: FeedError;
  try {
    error = (await response.json()) as FeedError;
  } catch {
    error = { error: "unexpected_response", message: `HTTP ${response.status}` };
  }
  return { ok: false, status: response.status, error };
}

export async function fetchHealth(
  baseUrl: string,
  signal?: AbortSignal,
): Promise<{ status: string } | null> {
  try {
    const response = await fetch(`${baseUrl.replace(/\/$/, "")}/healthz`, { signal });
    if (!response.ok) return null;
    return (await response.json()) as { status: string };
  } catch {
    return null;
  }
}
