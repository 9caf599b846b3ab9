import { renderApp } from "./app";

// same-origin by default; ?api=http://host:port points the form elsewhere
// (the service sends no CORS headers, so cross-origin use needs a proxy)
const api = new URLSearchParams(window.location.search).get("api") ?? "";
const root = document.getElementById("app");
if (root) {
  const controller = renderApp(root, api);
  const hash = window.location.hash.slice(1);
  if (hash) controller.loadUrl(hash);
}
