// Shared test plumbing: a fake service speaking the real wire format.

import type { ExplanationDocument, Overrides, WhatIfResponse } from "../src/types.js";

export interface RecordedCall {
  url: string;
  method: string;
  body: unknown;
}

export interface FakeServiceOptions {
  documents?: Record<string, ExplanationDocument>;
  whatif?: (id: string, overrides: Overrides) => WhatIfResponse | Promise<WhatIfResponse>;
  whatifStatus?: number;
}

export function fakeFetch(opts: FakeServiceOptions) {
  const calls: RecordedCall[] = [];
  const fetchFn = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    calls.push({ url, method, body });

    const docMatch = url.match(/\/explanations\/([^/]+)$/);
    if (docMatch && method === "GET") {
      const doc = opts.documents?.[docMatch[1]!];
      if (!doc) {
        return new Response(JSON.stringify({ detail: { error: "unknown explanation" } }), {
          status: 404,
        });
      }
      return new Response(JSON.stringify(doc), { status: 200 });
    }

    const whatifMatch = url.match(/\/explanations\/([^/]+)\/whatif$/);
    if (whatifMatch && method === "POST") {
      if (opts.whatifStatus && opts.whatifStatus !== 200) {
        return new Response(JSON.stringify({ detail: { error: "rejected" } }), {
          status: opts.whatifStatus,
        });
      }
      if (!opts.whatif) throw new Error("no whatif handler configured");
      const resp = await opts.whatif(whatifMatch[1]!, (body?.overrides ?? {}) as Overrides);
      return new Response(JSON.stringify(resp), { status: 200 });
    }
    return new Response("not found", { status: 404 });
  };
  return { fetchFn, calls };
}

export function tick(ms = 0): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
