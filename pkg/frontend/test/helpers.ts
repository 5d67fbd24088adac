import { expect } from "vitest";

/**
 * Tokens that would identify which summary is generated. None may appear
 * anywhere in rater-facing DOM, in any case variation.
 */
export const FORBIDDEN_MARKERS = [
  "gs_first",
  "rs_first",
  "gs_better",
  "rs_better",
  "blinding",
  "generated",
  "reference",
  "deblind",
] as const;

export function assertNoBlindingMarkers(root: HTMLElement): void {
  const html = root.innerHTML.toLowerCase();
  for (const marker of FORBIDDEN_MARKERS) {
    expect(html, `marker "${marker}" leaked into the DOM`).not.toContain(marker);
  }
  expect(root.textContent ?? "").not.toMatch(/\b[GR]S\b/);
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

/** Lets queued microtasks and zero-delay timers run to completion. */
export async function settle(rounds = 6): Promise<void> {
  for (let index = 0; index < rounds; index += 1) {
    await flush();
  }
}

export function jsonResponse(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface RecordedCall {
  method: string;
  path: string;
  body: unknown;
}

export interface WireItem {
  item_id: string;
  findings: string;
  summary_first: string;
  summary_second: string;
}

/**
 * Stateful stand-in for the rating service: serves items in order,
 * advancing only once a rating for the current item has been stored, and
 * records every call it sees.
 */
export class MockEvalApi {
  readonly sessionId: string;
  readonly items: WireItem[];
  readonly calls: RecordedCall[] = [];
  readonly ratings: Array<Record<string, unknown>> = [];
  summaryPayload: Record<string, unknown>;
  summaryResponse: Response | null = null;
  failNextOnce = false;
  malformNextOnce = false;
  failRatingOnce: Response | "network" | null = null;
  ratingGate: Promise<void> | null = null;

  constructor(
    sessionId: string,
    items: WireItem[],
    summaryPayload: Record<string, unknown>,
  ) {
    this.sessionId = sessionId;
    this.items = items;
    this.summaryPayload = summaryPayload;
  }

  readonly fetch = async (
    input: RequestInfo | URL,
    init?: RequestInit,
  ): Promise<Response> => {
    const url = new URL(String(input));
    const method = (init?.method ?? "GET").toUpperCase();
    const body =
      init?.body === undefined || init?.body === null
        ? null
        : (JSON.parse(String(init.body)) as Record<string, unknown>);
    this.calls.push({ method, path: url.pathname, body });

    if (url.pathname === "/sessions" && method === "POST") {
      return jsonResponse(201, {
        session_id: this.sessionId,
        checkpoint: body?.["checkpoint"],
        language: body?.["language"],
        n_items: body?.["n_items"],
      });
    }
    if (url.pathname === `/sessions/${this.sessionId}/next` && method === "GET") {
      if (this.failNextOnce) {
        this.failNextOnce = false;
        throw new TypeError("network down");
      }
      if (this.malformNextOnce) {
        this.malformNextOnce = false;
        return jsonResponse(200, { item_id: "broken" });
      }
      const item = this.items[this.ratings.length];
      if (item === undefined) {
        return jsonResponse(200, { done: true, progress: this.progress() });
      }
      return jsonResponse(200, { ...item, progress: this.progress() });
    }
    if (
      url.pathname === `/sessions/${this.sessionId}/ratings` &&
      method === "POST"
    ) {
      if (this.ratingGate !== null) {
        const gate = this.ratingGate;
        this.ratingGate = null;
        await gate;
      }
      if (this.failRatingOnce === "network") {
        this.failRatingOnce = null;
        throw new TypeError("network down");
      }
      if (this.failRatingOnce !== null) {
        const response = this.failRatingOnce;
        this.failRatingOnce = null;
        return response;
      }
      this.ratings.push(body ?? {});
      return jsonResponse(200, {
        acknowledged: true,
        item_id: body?.["item_id"],
        progress: this.progress(),
      });
    }
    if (
      url.pathname === `/sessions/${this.sessionId}/summary` &&
      method === "GET"
    ) {
      if (this.summaryResponse !== null) {
        return this.summaryResponse;
      }
      return jsonResponse(200, this.summaryPayload);
    }
    return jsonResponse(404, {
      error: "UnknownSession",
      detail: `no route for ${method} ${url.pathname}`,
    });
  };

  private progress(): Record<string, number> {
    return { rated: this.ratings.length, total: this.items.length };
  }
}
