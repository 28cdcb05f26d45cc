// Typed client for the annotation service.
//
// Busy (409 during training) is an expected state, not an error: callers
// get a discriminated result and can poll.  Validation problems surface
// the server's message so the UI can show it per region.

import type {
  OverlayPayload,
  ServiceState,
  SubmissionAck,
  SubmissionPayload,
  SuggestionBatch,
} from "./types.js";

export type SuggestionsResult =
  | { kind: "batch"; batch: SuggestionBatch }
  | { kind: "busy"; message: string };

export type SubmissionResult =
  | { kind: "accepted"; ack: SubmissionAck }
  | { kind: "conflict"; message: string }
  | { kind: "invalid"; message: string };

export class SegalClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async getState(): Promise<ServiceState> {
    const res = await this.fetchImpl(this.url("/api/state"));
    if (!res.ok) throw new Error(`state failed: HTTP ${res.status}`);
    return (await res.json()) as ServiceState;
  }

  async getSuggestions(): Promise<SuggestionsResult> {
    const res = await this.fetchImpl(this.url("/api/suggestions"));
    if (res.status === 409) {
      const body = (await res.json()) as { error?: string };
      return { kind: "busy", message: body.error ?? "busy" };
    }
    if (!res.ok) throw new Error(`suggestions failed: HTTP ${res.status}`);
    return { kind: "batch", batch: (await res.json()) as SuggestionBatch };
  }

  /** Poll until the service leaves TRAINING and serves a batch. */
  async waitForSuggestions(opts?: {
    retries?: number;
    delayMs?: number;
    onBusy?: (message: string) => void;
    sleep?: (ms: number) => Promise<void>;
  }): Promise<SuggestionBatch> {
    const retries = opts?.retries ?? 120;
    const delayMs = opts?.delayMs ?? 500;
    const sleep =
      opts?.sleep ?? ((ms: number) => new Promise((r) => setTimeout(r, ms)));
    let backoff = delayMs;
    for (let attempt = 0; attempt <= retries; attempt++) {
      const result = await this.getSuggestions();
      if (result.kind === "batch") return result.batch;
      opts?.onBusy?.(result.message);
      await sleep(backoff);
      backoff = Math.min(backoff * 1.5, 5000);
    }
    throw new Error("service stayed busy; giving up");
  }

  async getOverlay(imageId: string): Promise<OverlayPayload> {
    const res = await this.fetchImpl(this.url(`/api/overlay/${imageId}`));
    if (res.status === 404) throw new Error(`unknown image ${imageId}`);
    if (!res.ok) throw new Error(`overlay failed: HTTP ${res.status}`);
    return (await res.json()) as OverlayPayload;
  }

  async submitAnnotations(payload: SubmissionPayload): Promise<SubmissionResult> {
    const res = await this.fetchImpl(this.url("/api/annotations"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (res.status === 409) {
      const body = (await res.json()) as { error?: string };
      return { kind: "conflict", message: body.error ?? "stale batch" };
    }
    if (res.status === 422) {
      const body = (await res.json()) as { error?: string };
      return { kind: "invalid", message: body.error ?? "invalid submission" };
    }
    if (!res.ok) throw new Error(`submission failed: HTTP ${res.status}`);
    return { kind: "accepted", ack: (await res.json()) as SubmissionAck };
  }

  async triggerRetrain(): Promise<boolean> {
    const res = await this.fetchImpl(this.url("/api/retrain"), { method: "POST" });
    return res.ok;
  }
}
