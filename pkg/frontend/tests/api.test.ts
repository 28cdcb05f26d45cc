import { describe, expect, it, vi } from "vitest";

import { SegalClient } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("SegalClient", () => {
  it("returns a busy marker on 409 suggestions", async () => {
    const fetchMock = vi.fn(async () => jsonResponse(409, { error: "retrain in progress" }));
    const client = new SegalClient("http://x", fetchMock as unknown as typeof fetch);
    const result = await client.getSuggestions();
    expect(result).toEqual({ kind: "busy", message: "retrain in progress" });
  });

  it("polls with backoff until a batch arrives", async () => {
    const batch = { batch_id: "batch0001", model_step: 1, regions: [] };
    let calls = 0;
    const fetchMock = vi.fn(async () => {
      calls += 1;
      return calls < 3
        ? jsonResponse(409, { error: "busy" })
        : jsonResponse(200, batch);
    });
    const client = new SegalClient("http://x", fetchMock as unknown as typeof fetch);
    const busyMessages: string[] = [];
    const delays: number[] = [];
    const result = await client.waitForSuggestions({
      retries: 10,
      delayMs: 100,
      onBusy: (msg) => busyMessages.push(msg),
      sleep: async (ms) => {
        delays.push(ms);
      },
    });
    expect(result).toEqual(batch);
    expect(busyMessages).toEqual(["busy", "busy"]);
    expect(delays).toEqual([100, 150]); // backoff grows
  });

  it("gives up after the retry budget", async () => {
    const fetchMock = vi.fn(async () => jsonResponse(409, { error: "busy" }));
    const client = new SegalClient("http://x", fetchMock as unknown as typeof fetch);
    await expect(
      client.waitForSuggestions({ retries: 2, delayMs: 1, sleep: async () => {} }),
    ).rejects.toThrow(/busy/);
  });

  it("maps submission status codes onto result kinds", async () => {
    const responses = [
      jsonResponse(409, { error: "stale" }),
      jsonResponse(422, { error: "bad labels" }),
      jsonResponse(200, { labeled_pixels: 99, step: 2, training: true }),
    ];
    const fetchMock = vi.fn(async () => responses.shift()!);
    const client = new SegalClient("http://x", fetchMock as unknown as typeof fetch);
    const payload = { batch_id: "b", regions: [] };
    expect((await client.submitAnnotations(payload)).kind).toBe("conflict");
    expect((await client.submitAnnotations(payload)).kind).toBe("invalid");
    const accepted = await client.submitAnnotations(payload);
    expect(accepted).toEqual({
      kind: "accepted",
      ack: { labeled_pixels: 99, step: 2, training: true },
    });
  });

  it("raises on unexpected status codes", async () => {
    const fetchMock = vi.fn(async () => jsonResponse(500, { error: "boom" }));
    const client = new SegalClient("http://x", fetchMock as unknown as typeof fetch);
    await expect(client.getState()).rejects.toThrow(/500/);
  });
});
