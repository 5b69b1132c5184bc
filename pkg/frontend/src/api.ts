// HTTP client for the explanation service. The explorer talks to the service
// exclusively; it never computes predictions on its own.

import type { ExplanationDocument, Overrides, WhatIfResponse } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    const detail = body?.detail;
    if (typeof detail === "string") return detail;
    if (detail?.error) return String(detail.error);
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${resp.status}`;
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async loadExplanation(id: string): Promise<ExplanationDocument> {
    const resp = await this.fetchFn(`${this.baseUrl}/explanations/${encodeURIComponent(id)}`);
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return (await resp.json()) as ExplanationDocument;
  }

  async whatIf(id: string, overrides: Overrides): Promise<WhatIfResponse> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/explanations/${encodeURIComponent(id)}/whatif`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ overrides }),
      },
    );
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return (await resp.json()) as WhatIfResponse;
  }
}
