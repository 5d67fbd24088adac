/**
 * Typed client for the blind-evaluation HTTP+JSON service.
 *
 * The service shows two summaries per item in a hidden order. This client
 * only ever handles them positionally (first/second) and sends positional
 * comparisons back, so nothing on this side can tell — or reveal — which
 * summary came from the model under evaluation.
 */

export type Comparison = "FIRST_BETTER" | "EQUAL" | "SECOND_BETTER";

export const COMPARISONS: readonly Comparison[] = [
  "FIRST_BETTER",
  "EQUAL",
  "SECOND_BETTER",
];

export type Score = 1 | 2 | 3 | 4 | 5;

export const SCORES: readonly Score[] = [1, 2, 3, 4, 5];

export function isScore(value: number): value is Score {
  return Number.isInteger(value) && value >= 1 && value <= 5;
}

export interface Progress {
  readonly rated: number;
  readonly total: number;
}

export interface ItemPayload {
  readonly itemId: string;
  readonly findings: string;
  readonly summaryFirst: string;
  readonly summarySecond: string;
  readonly progress: Progress;
}

export type NextResult =
  | { readonly done: true; readonly progress: Progress }
  | { readonly done: false; readonly item: ItemPayload };

export interface RatingDraft {
  readonly comparison: Comparison;
  readonly r: Score;
  readonly fcc: Score;
  readonly oq: Score;
}

export interface RatingAck {
  readonly itemId: string;
  readonly progress: Progress;
}

export interface SessionInfo {
  readonly sessionId: string;
  readonly nItems: number;
}

export interface SessionSummary {
  readonly geFraction: number;
  readonly meanR: number;
  readonly meanFcc: number;
  readonly meanOq: number;
  readonly rated: number;
  readonly total: number;
}

export interface CreateSessionRequest {
  readonly checkpoint: string;
  readonly corpus: string;
  readonly language: string;
  readonly nItems?: number;
  readonly seed?: number;
}

/** The server rejected the request; `code` is the service's error class. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

/** A response body did not match the service contract. */
export class MalformedPayload extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MalformedPayload";
  }
}

function asRecord(value: unknown, context: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new MalformedPayload(`${context}: expected an object`);
  }
  return value as Record<string, unknown>;
}

function asString(
  record: Record<string, unknown>,
  key: string,
  context: string,
): string {
  const value = record[key];
  if (typeof value !== "string") {
    throw new MalformedPayload(`${context}: field "${key}" must be a string`);
  }
  return value;
}

function asNumber(
  record: Record<string, unknown>,
  key: string,
  context: string,
): number {
  const value = record[key];
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new MalformedPayload(`${context}: field "${key}" must be a number`);
  }
  return value;
}

function asProgress(value: unknown, context: string): Progress {
  const record = asRecord(value, `${context}: progress`);
  return {
    rated: asNumber(record, "rated", context),
    total: asNumber(record, "total", context),
  };
}

export class EvalApiClient {
  private readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;

  constructor(baseUrl: string, fetchFn?: typeof fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  async createSession(request: CreateSessionRequest): Promise<SessionInfo> {
    const body = await this.request("POST", "/sessions", {
      checkpoint: request.checkpoint,
      corpus: request.corpus,
      language: request.language,
      n_items: request.nItems ?? 30,
      seed: request.seed ?? 0,
    });
    const record = asRecord(body, "session");
    return {
      sessionId: asString(record, "session_id", "session"),
      nItems: asNumber(record, "n_items", "session"),
    };
  }

  async nextItem(sessionId: string): Promise<NextResult> {
    const body = await this.request(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/next`,
    );
    const record = asRecord(body, "next item");
    if (record["done"] === true) {
      return { done: true, progress: asProgress(record["progress"], "next item") };
    }
    return {
      done: false,
      item: {
        itemId: asString(record, "item_id", "next item"),
        findings: asString(record, "findings", "next item"),
        summaryFirst: asString(record, "summary_first", "next item"),
        summarySecond: asString(record, "summary_second", "next item"),
        progress: asProgress(record["progress"], "next item"),
      },
    };
  }

  async submitRating(
    sessionId: string,
    itemId: string,
    draft: RatingDraft,
  ): Promise<RatingAck> {
    const body = await this.request(
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/ratings`,
      {
        item_id: itemId,
        comparison: draft.comparison,
        r: draft.r,
        fcc: draft.fcc,
        oq: draft.oq,
      },
    );
    const record = asRecord(body, "rating ack");
    if (record["acknowledged"] !== true) {
      throw new MalformedPayload("rating ack: missing acknowledgment");
    }
    return {
      itemId: asString(record, "item_id", "rating ack"),
      progress: asProgress(record["progress"], "rating ack"),
    };
  }

  async summary(sessionId: string): Promise<SessionSummary> {
    const body = await this.request(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/summary`,
    );
    const record = asRecord(body, "summary");
    return {
      geFraction: asNumber(record, "ge_fraction", "summary"),
      meanR: asNumber(record, "mean_r", "summary"),
      meanFcc: asNumber(record, "mean_fcc", "summary"),
      meanOq: asNumber(record, "mean_oq", "summary"),
      rated: asNumber(record, "rated", "summary"),
      total: asNumber(record, "total", "summary"),
    };
  }

  private async request(
    method: string,
    path: string,
    payload?: unknown,
  ): Promise<unknown> {
    const init: RequestInit = { method };
    if (payload !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(payload);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null;
    }
    if (!response.ok) {
      const record =
        typeof body === "object" && body !== null
          ? (body as Record<string, unknown>)
          : {};
      const code =
        typeof record["error"] === "string" ? record["error"] : "HttpError";
      const detail =
        typeof record["detail"] === "string"
          ? record["detail"]
          : `request failed with status ${response.status}`;
      throw new ApiError(response.status, code, detail);
    }
    return body;
  }
}
