// Wire types mirroring the service's explanation document (see ../FORMATS.md).

export type FeatureKind = "numeric" | "ordinal" | "categorical";
export type Level = "customer" | "analyst" | "scientist";
export type FeatureValue = number | string;
export type Overrides = Record<string, FeatureValue>;

export interface FeatureDecl {
  name: string;
  kind: FeatureKind;
  range?: [number, number];
  levels?: string[];
  immutable?: boolean;
  monotonic?: string;
}

export interface Schema {
  features: FeatureDecl[];
  target_name: string;
  positive_label: string;
  threshold: number;
}

export interface EquationTerm {
  kind: "intercept" | "linear" | "quadratic" | "interaction" | "indicator";
  features?: string[];
  level?: string;
}

export interface Equation {
  terms: EquationTerm[];
  coefficients: number[];
  link: "identity" | "logit";
  center: Record<string, FeatureValue>;
  validity_radius: number;
  training_r2: number;
  n_rows: number;
}

export interface Delta {
  feature: string;
  before: FeatureValue;
  after: FeatureValue;
}

export interface Counterfactual {
  values: Record<string, FeatureValue>;
  delta: Delta[];
  cost: number;
  sparsity: number;
  y_actual: number;
  y_estimate: number;
  fidelity_error: number;
  feasible: boolean;
  plausible: boolean;
}

export interface Witness {
  feature: string;
  from_value: FeatureValue | FeatureValue[];
  to_value: FeatureValue | FeatureValue[];
  y_model_before: number;
  y_model_after: number;
  y_eq_before: number;
  y_eq_after: number;
  model_changed: boolean;
  eq_changed: boolean;
  eq_tracks: boolean;
}

export interface Certificate {
  condition_i: boolean;
  condition_ii: boolean;
  condition_iii: boolean;
  passed: boolean;
  max_fidelity_error: number;
  residual_at_x: number;
  fidelity_errors: number[];
  witness: Witness | null;
  witness_candidates: Witness[];
  invariant_features: string[];
  direct_causes: string[];
  epsilon: number;
  epsilon_change: number;
}

export interface ExplanationDocument {
  engine_version: string;
  schema: Schema;
  model_id: string;
  dataset_fingerprint: string;
  observation: Record<string, FeatureValue>;
  prediction: { probability: number; label: string };
  equation: Equation;
  counterfactuals: Counterfactual[];
  fidelity_summary: { max: number; mean: number; count: number };
  certificate: Certificate;
  feature_weights: Record<string, number>;
  distance_scales: number[];
  config: Record<string, unknown>;
  flags: { neighbourhood_balanced: boolean; model_deterministic: boolean };
  query_count: number;
}

export interface WhatIfResponse {
  observation: Record<string, FeatureValue>;
  y_estimate: number;
  y_actual: number;
  gap: number;
  label_estimate: string;
  label_actual: string;
  inside_validity_radius: boolean;
}
