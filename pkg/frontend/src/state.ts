// Explorer state: the loaded document, pending overrides, the last what-if
// answer and the active detail level.
//
// Contracts kept here:
//  - overrides are validated (and numeric values clamped to their schema
//    bounds) before any request leaves the client;
//  - the displayed gap is always the service's gap field, never recomputed;
//  - rapid input changes are debounced, one what-if in flight at a time, and
//    stale responses are discarded by sequence number;
//  - switching levels never touches overrides.

import { ServiceClient } from "./api.js";
import type {
  ExplanationDocument,
  FeatureDecl,
  FeatureValue,
  Level,
  Overrides,
  WhatIfResponse,
} from "./types.js";

export interface ExplorerOptions {
  debounceMs?: number;
}

const DEFAULT_DEBOUNCE_MS = 150;

export class ExplorerState {
  document: ExplanationDocument | null = null;
  explanationId: string | null = null;
  overrides: Overrides = {};
  lastResponse: WhatIfResponse | null = null;
  level: Level = "customer";
  loadError: string | null = null;
  requestError: string | null = null;
  pending = false;

  private seq = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private listeners: Array<() => void> = [];

  constructor(
    private readonly client: ServiceClient,
    private readonly opts: ExplorerOptions = {},
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  async load(id: string): Promise<void> {
    this.cancelScheduled();
    try {
      this.document = await this.client.loadExplanation(id);
      this.explanationId = id;
      this.overrides = {};
      this.lastResponse = null;
      this.level = "customer";
      this.loadError = null;
      this.requestError = null;
    } catch (err) {
      this.document = null;
      this.explanationId = null;
      this.loadError = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }

  feature(name: string): FeatureDecl {
    const decl = this.document?.schema.features.find((f) => f.name === name);
    if (!decl) throw new Error(`unknown feature ${name}`);
    return decl;
  }

  /** Clamp a candidate value to the schema bounds; reject unknown levels. */
  clampValue(name: string, value: FeatureValue): FeatureValue {
    const decl = this.feature(name);
    if (decl.kind === "categorical") {
      if (typeof value !== "string" || !(decl.levels ?? []).includes(value)) {
        throw new Error(`value ${String(value)} is not a level of ${name}`);
      }
      return value;
    }
    let v = typeof value === "number" ? value : Number(value);
    if (!Number.isFinite(v)) throw new Error(`value ${String(value)} is not numeric`);
    const [low, high] = decl.range ?? [-Infinity, Infinity];
    v = Math.min(Math.max(v, low), high);
    return decl.kind === "ordinal" ? Math.round(v) : v;
  }

  /** Validate, clamp and stage one override, then schedule a what-if. */
  setOverride(name: string, value: FeatureValue): void {
    if (!this.document) return;
    const decl = this.feature(name);
    if (decl.immutable) return; // locked in the UI as well
    const clamped = this.clampValue(name, value);
    if (clamped === this.document.observation[name]) {
      delete this.overrides[name];
    } else {
      this.overrides[name] = clamped;
    }
    this.scheduleWhatIf();
    this.emit();
  }

  /** Pre-fill a counterfactual card's delta as the current overrides. */
  applyCounterfactual(index: number): Promise<void> {
    if (!this.document) return Promise.resolve();
    const cf = this.document.counterfactuals[index];
    if (!cf) return Promise.resolve();
    this.overrides = {};
    for (const d of cf.delta) this.overrides[d.feature] = this.clampValue(d.feature, d.after);
    this.emit();
    return this.flushWhatIf();
  }

  reset(): void {
    this.cancelScheduled();
    this.seq += 1; // anything still in flight becomes stale
    this.overrides = {};
    this.lastResponse = null;
    this.requestError = null;
    this.pending = false;
    this.emit();
  }

  setLevel(level: Level): void {
    this.level = level; // overrides persist across levels
    this.emit();
  }

  /** The gap shown in the UI: always the service's value, never recomputed. */
  displayedGap(): number | null {
    return this.lastResponse === null ? null : this.lastResponse.gap;
  }

  currentValue(name: string): FeatureValue {
    const doc = this.document;
    if (!doc) throw new Error("no document loaded");
    return name in this.overrides ? this.overrides[name]! : doc.observation[name]!;
  }

  private cancelScheduled(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private scheduleWhatIf(): void {
    this.cancelScheduled();
    const ms = this.opts.debounceMs ?? DEFAULT_DEBOUNCE_MS;
    this.timer = setTimeout(() => void this.flushWhatIf(), ms);
  }

  async flushWhatIf(): Promise<void> {
    this.cancelScheduled();
    if (!this.document || this.explanationId === null) return;
    const seq = ++this.seq;
    this.pending = true;
    this.emit();
    try {
      const resp = await this.client.whatIf(this.explanationId, { ...this.overrides });
      if (seq !== this.seq) return; // a newer request superseded this one
      this.lastResponse = resp;
      this.requestError = null;
    } catch (err) {
      if (seq !== this.seq) return;
      // service errors show inline; the rest of the view keeps its state
      this.requestError = err instanceof Error ? err.message : String(err);
    } finally {
      if (seq === this.seq) {
        this.pending = false;
        this.emit();
      }
    }
  }
}
