// DOM view over ExplorerState. Rebuilt wholesale on every state change; every
// number shown comes from the loaded document or the last service response.

import { ExplorerState } from "./state.js";
import type { Counterfactual, Equation, EquationTerm, FeatureValue, Level } from "./types.js";

const LEVELS: Level[] = ["customer", "analyst", "scientist"];

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(v: FeatureValue): string {
  if (typeof v === "number") {
    return Number.isInteger(v) ? String(v) : v.toPrecision(6).replace(/\.?0+$/, "");
  }
  return String(v);
}

function termLabel(t: EquationTerm): string {
  const f = t.features ?? [];
  switch (t.kind) {
    case "intercept":
      return "1";
    case "linear":
      return f[0] ?? "?";
    case "quadratic":
      return `${f[0]}^2`;
    case "interaction":
      return `${f[0]}*${f[1]}`;
    case "indicator":
      return `[${f[0]}=${t.level}]`;
  }
}

export function equationText(eq: Equation): string {
  const lhs = eq.link === "identity" ? "y" : "logit(y)";
  const parts = eq.terms.map((t, i) => {
    const b = eq.coefficients[i] ?? 0;
    const coeff = `${b >= 0 ? "+" : ""}${b.toPrecision(6)}`;
    return t.kind === "intercept" ? coeff : `${coeff}*${termLabel(t)}`;
  });
  return `${lhs} = ${parts.join(" ")}`;
}

function wachterSentence(cf: Counterfactual, positive: (p: number) => string): string {
  const names = cf.delta.map((d) => d.feature).join(", ");
  const values = cf.delta.map((d) => fmt(d.after)).join(", ");
  return (
    `If (${names}) instead had values (${values}), and all other variables ` +
    `remained constant, score ${cf.y_actual.toFixed(6)} (${positive(cf.y_actual)}) ` +
    `would have been returned.`
  );
}

function renderHeader(state: ExplorerState, root: HTMLElement): void {
  const doc = state.document!;
  const header = el("div", "header");
  header.appendChild(el("h1", "title", `${doc.schema.target_name} — what-if explorer`));
  const badge = el(
    "span",
    `prediction-badge ${doc.prediction.label === doc.schema.positive_label ? "positive" : "negative"}`,
    `${doc.prediction.probability.toFixed(6)} → ${doc.prediction.label}`,
  );
  header.appendChild(badge);
  root.appendChild(header);
}

function renderLevelTabs(state: ExplorerState, root: HTMLElement): void {
  const tabs = el("div", "level-tabs");
  for (const level of LEVELS) {
    const button = el("button", `level-tab${state.level === level ? " active" : ""}`, level);
    button.setAttribute("data-level", level);
    button.addEventListener("click", () => state.setLevel(level));
    tabs.appendChild(button);
  }
  root.appendChild(tabs);
}

function renderControls(state: ExplorerState, root: HTMLElement): void {
  const doc = state.document!;
  const panel = el("div", "controls-panel");
  panel.appendChild(el("h2", undefined, "Feature values"));
  for (const decl of doc.schema.features) {
    const row = el("div", "control-row");
    row.setAttribute("data-feature", decl.name);
    const label = el("label", "control-label", decl.name);
    if (decl.immutable) {
      label.appendChild(el("span", "lock-icon", " 🔒"));
    }
    row.appendChild(label);

    const current = state.currentValue(decl.name);
    if (decl.kind === "categorical") {
      const seg = el("div", "segmented");
      for (const level of decl.levels ?? []) {
        const option = el(
          "button",
          `segment${current === level ? " active" : ""}`,
          level,
        ) as HTMLButtonElement;
        option.disabled = Boolean(decl.immutable);
        option.addEventListener("click", () => state.setOverride(decl.name, level));
        seg.appendChild(option);
      }
      row.appendChild(seg);
    } else {
      const [low, high] = decl.range ?? [0, 1];
      const slider = document.createElement("input");
      slider.type = "range";
      slider.className = "slider";
      slider.min = String(low);
      slider.max = String(high);
      slider.step = decl.kind === "ordinal" ? "1" : String((high - low) / 200);
      slider.value = String(current);
      slider.disabled = Boolean(decl.immutable);
      slider.addEventListener("input", () => state.setOverride(decl.name, Number(slider.value)));
      row.appendChild(slider);
      row.appendChild(el("span", "control-value", fmt(current)));
    }
    if (decl.name in state.overrides) row.classList.add("overridden");
    panel.appendChild(row);
  }
  const reset = el("button", "reset-button", "Reset overrides");
  reset.addEventListener("click", () => state.reset());
  panel.appendChild(reset);
  root.appendChild(panel);
}

function renderWhatIf(state: ExplorerState, root: HTMLElement): void {
  const doc = state.document!;
  const panel = el("div", "whatif-panel");
  panel.appendChild(el("h2", undefined, "What if"));
  if (state.pending) panel.appendChild(el("div", "whatif-pending", "querying…"));
  if (state.requestError) panel.appendChild(el("div", "request-error", state.requestError));

  const resp = state.lastResponse;
  if (resp === null) {
    panel.appendChild(
      el("div", "whatif-hint", "Adjust a value or click a counterfactual to ask the model."),
    );
  } else {
    const grid = el("div", "whatif-grid");
    grid.appendChild(el("div", "whatif-cell", "surrogate estimate"));
    grid.appendChild(
      el("div", "whatif-estimate", `${resp.y_estimate.toFixed(6)} (${resp.label_estimate})`),
    );
    grid.appendChild(el("div", "whatif-cell", "actual model output"));
    grid.appendChild(
      el("div", "whatif-actual", `${resp.y_actual.toFixed(6)} (${resp.label_actual})`),
    );
    grid.appendChild(el("div", "whatif-cell", "fidelity gap"));
    const gapClass =
      resp.gap <= doc.certificate.epsilon ? "gap-value gap-ok" : "gap-value gap-high";
    grid.appendChild(el("div", gapClass, resp.gap.toFixed(6)));
    panel.appendChild(grid);
    if (!resp.inside_validity_radius) {
      panel.appendChild(
        el(
          "div",
          "validity-warning",
          "outside the equation's validity neighbourhood — the estimate is extrapolating",
        ),
      );
    }
  }
  root.appendChild(panel);
}

function renderWeights(state: ExplorerState, root: HTMLElement): void {
  const doc = state.document!;
  const panel = el("div", "weights-panel");
  panel.appendChild(el("h2", undefined, "Most important features"));
  const entries = Object.entries(doc.feature_weights)
    .sort((a, b) => b[1] - a[1])
    .slice(0, 5);
  const max = entries.length > 0 ? Math.max(...entries.map(([, w]) => w)) : 0;
  for (const [name, weight] of entries) {
    const row = el("div", "bar-row");
    row.appendChild(el("span", "bar-label", name));
    const track = el("div", "bar-track");
    const fill = el("div", "bar-fill");
    fill.style.width = max > 0 ? `${Math.round((weight / max) * 100)}%` : "0%";
    track.appendChild(fill);
    row.appendChild(track);
    row.appendChild(el("span", "bar-value", weight.toFixed(4)));
    panel.appendChild(row);
  }
  root.appendChild(panel);
}

function renderCounterfactuals(state: ExplorerState, root: HTMLElement): void {
  const doc = state.document!;
  const panel = el("div", "cf-panel");
  panel.appendChild(el("h2", undefined, "Counterfactuals"));
  if (doc.counterfactuals.length === 0) {
    panel.appendChild(el("div", "cf-card none-found", "none found within constraints"));
    root.appendChild(panel);
    return;
  }
  const positive = (p: number) =>
    p >= doc.schema.threshold ? doc.schema.positive_label : `not ${doc.schema.positive_label}`;
  doc.counterfactuals.forEach((cf, index) => {
    const card = el("div", "cf-card");
    card.setAttribute("data-index", String(index));
    const deltaText = cf.delta
      .map((d) => `${d.feature}: ${fmt(d.before)} → ${fmt(d.after)}`)
      .join(", ");
    card.appendChild(el("div", "cf-delta", deltaText));
    card.appendChild(
      el("div", "cf-meta", `cost ${cf.cost.toFixed(4)} · changes ${cf.sparsity} feature(s)`),
    );
    card.appendChild(
      el("div", "cf-outcome", `model answers ${cf.y_actual.toFixed(6)} (${positive(cf.y_actual)})`),
    );
    card.appendChild(el("div", "cf-sentence", wachterSentence(cf, positive)));
    card.addEventListener("click", () => void state.applyCounterfactual(index));
    panel.appendChild(card);
  });
  root.appendChild(panel);
}

function renderEquation(state: ExplorerState, root: HTMLElement): void {
  const doc = state.document!;
  const panel = el("div", "equation-panel");
  panel.appendChild(el("h2", undefined, "Local equation"));
  panel.appendChild(el("code", "equation-text", equationText(doc.equation)));
  panel.appendChild(
    el(
      "div",
      "equation-meta",
      `r² ${doc.equation.training_r2.toFixed(6)} (link space) · ${doc.equation.n_rows} rows · ` +
        `valid within ${doc.equation.validity_radius} MAD units`,
    ),
  );
  const table = el("div", "fidelity-table");
  table.appendChild(el("div", "fidelity-header", "counterfactual fidelity: actual / estimate / error"));
  for (const cf of doc.counterfactuals) {
    table.appendChild(
      el(
        "div",
        "fidelity-row",
        `${cf.delta.map((d) => d.feature).join("+")}: ${cf.y_actual.toFixed(6)} / ` +
          `${cf.y_estimate.toFixed(6)} / ${cf.fidelity_error.toFixed(6)}`,
      ),
    );
  }
  table.appendChild(
    el(
      "div",
      "fidelity-summary",
      `summary: max ${doc.fidelity_summary.max.toFixed(6)} · mean ` +
        `${doc.fidelity_summary.mean.toFixed(6)} · count ${doc.fidelity_summary.count}`,
    ),
  );
  panel.appendChild(table);
  root.appendChild(panel);
}

function renderCertificate(state: ExplorerState, root: HTMLElement): void {
  const cert = state.document!.certificate;
  const panel = el("div", "certificate-panel");
  panel.appendChild(el("h2", undefined, `Certificate (ε = ${cert.epsilon})`));
  const row = (name: string, ok: boolean, detail: string) =>
    panel.appendChild(el("div", `cert-row ${ok ? "cert-pass" : "cert-fail"}`, `${name}: ${ok ? "pass" : "FAIL"} — ${detail}`));
  row("condition (i) approximate truth", cert.condition_i, `max fidelity error ${cert.max_fidelity_error}`);
  row("condition (ii) explanandum reproduced", cert.condition_ii, `residual ${cert.residual_at_x}`);
  row("condition (iii) testing intervention", cert.condition_iii, cert.witness ? "witness recorded" : "no witness");
  if (cert.witness) {
    const w = cert.witness;
    panel.appendChild(
      el(
        "div",
        "witness",
        `witness: set ${w.feature} → ${JSON.stringify(w.to_value)}; model ` +
          `${w.y_model_before.toFixed(6)} → ${w.y_model_after.toFixed(6)}, equation says ` +
          `${w.y_eq_after.toFixed(6)}`,
      ),
    );
  }
  panel.appendChild(el("div", "cert-extra", `invariant features: ${cert.invariant_features.join(", ") || "none"}`));
  panel.appendChild(el("div", "cert-extra", `direct causes: ${cert.direct_causes.join(", ") || "none"}`));
  panel.appendChild(el("div", `cert-overall ${cert.passed ? "cert-pass" : "cert-fail"}`, `overall: ${cert.passed ? "pass" : "FAIL"}`));
  root.appendChild(panel);
}

export function render(state: ExplorerState, root: HTMLElement): void {
  root.textContent = "";
  if (state.loadError !== null) {
    const error = el("div", "error-state");
    error.appendChild(el("h2", undefined, "Could not load explanation"));
    error.appendChild(el("p", "error-message", state.loadError));
    root.appendChild(error);
    return;
  }
  if (state.document === null) {
    root.appendChild(el("div", "empty-state", "No explanation loaded."));
    return;
  }
  renderHeader(state, root);
  renderLevelTabs(state, root);
  const main = el("div", "columns");
  const left = el("div", "column column-left");
  renderControls(state, left);
  renderWhatIf(state, left);
  const right = el("div", "column column-right");
  renderWeights(state, right);
  renderCounterfactuals(state, right);
  if (state.level === "analyst" || state.level === "scientist") {
    renderEquation(state, right);
  }
  if (state.level === "scientist") {
    renderCertificate(state, right);
  }
  main.appendChild(left);
  main.appendChild(right);
  root.appendChild(main);
}
