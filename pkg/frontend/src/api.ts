/** Thin typed client for the suggestion service. Every method issues
 * exactly one HTTP request — the store relies on that to keep the
 * one-API-call-per-user-action invariant auditable. */

import type {
  AcceptResponse,
  Capability,
  Policy,
  RejectResponse,
  SheetEnvelope,
  SheetJson,
  SuggestResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
  }
}

export interface ClientOptions {
  fetchImpl?: FetchLike;
  userId?: string;
  dataOptIn?: boolean;
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;
  private readonly headers: Record<string, string>;

  constructor(
    readonly baseUrl: string,
    opts: ClientOptions = {},
  ) {
    this.fetchImpl = opts.fetchImpl ?? ((url, init) => fetch(url, init));
    this.headers = {};
    if (opts.userId && opts.dataOptIn) {
      this.headers["X-User-Id"] = opts.userId;
      this.headers["X-Data-Opt-In"] = "true";
    }
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { ...this.headers } };
    if (body !== undefined) {
      (init.headers as Record<string, string>)["content-type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const text = await resp.text();
    if (!resp.ok) {
      let detail = text;
      try {
        detail = (JSON.parse(text) as { error?: string }).error ?? text;
      } catch {
        /* plain-text error body */
      }
      if (resp.status === 409) throw new ConflictError(detail);
      throw new ApiError(resp.status, detail);
    }
    return JSON.parse(text) as T;
  }

  createSheet(sheet: SheetJson): Promise<SheetEnvelope> {
    return this.request("POST", "/sheets", sheet);
  }

  getSheet(id: string): Promise<SheetEnvelope> {
    return this.request("GET", `/sheets/${id}`);
  }

  /** The exact serialized document plus its version header. */
  async getSheetText(id: string): Promise<{ text: string; version: number }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/sheets/${id}?format=text`, {
      method: "GET",
      headers: { ...this.headers },
    });
    const text = await resp.text();
    if (!resp.ok) throw new ApiError(resp.status, text);
    return { text, version: Number(resp.headers.get("X-Sheet-Version")) };
  }

  putSheet(id: string, sheet: SheetJson, version: number): Promise<SheetEnvelope> {
    return this.request("PUT", `/sheets/${id}`, { sheet, version });
  }

  suggest(
    sheetId: string,
    spanBeats: [number, number],
    capability: Capability,
    sessionSeed: number,
    policy?: Policy,
  ): Promise<SuggestResponse> {
    return this.request("POST", `/sheets/${sheetId}/suggest`, {
      span_beats: spanBeats,
      capability,
      session_seed: sessionSeed,
      ...(policy ? { policy } : {}),
    });
  }

  nextAlternative(suggestionId: string): Promise<SuggestResponse> {
    return this.request("POST", `/suggestions/${suggestionId}/next`);
  }

  accept(suggestionId: string): Promise<AcceptResponse> {
    return this.request("POST", `/suggestions/${suggestionId}/feedback`, {
      outcome: "accepted",
    });
  }

  reject(suggestionId: string): Promise<RejectResponse> {
    return this.request("POST", `/suggestions/${suggestionId}/feedback`, {
      outcome: "rejected",
    });
  }
}
