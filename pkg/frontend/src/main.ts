// Browser entry point: ?id=<explanation id> against the same-origin service.

import { ServiceClient } from "./api.js";
import { render } from "./render.js";
import { ExplorerState } from "./state.js";

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app root element");

  const state = new ExplorerState(new ServiceClient(""));
  state.onChange(() => render(state, root));
  render(state, root);

  const params = new URLSearchParams(window.location.search);
  const id = params.get("id");
  if (id) {
    void state.load(id);
  } else {
    const form = document.getElementById("load-form") as HTMLFormElement | null;
    const input = document.getElementById("explanation-id") as HTMLInputElement | null;
    if (form && input) {
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        if (input.value.trim()) void state.load(input.value.trim());
      });
      form.classList.remove("hidden");
    }
  }
}

boot();
