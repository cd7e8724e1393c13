import { describe, expect, it, vi } from "vitest";

import { ApiError, StudioApi } from "../src/api.js";
import { makeRepresentation } from "./mock_api.js";

function fetchReturning(status: number, payload: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    statusText: `status ${status}`,
    json: async () => payload,
  })) as unknown as typeof fetch;
}

describe("StudioApi", () => {
  it("posts JSON bodies to the expected endpoints", async () => {
    const fetchFn = fetchReturning(200, {
      request_id: "r",
      image_b64: "png",
    });
    const api = new StudioApi("http://svc", fetchFn);
    await api.colorize("g", "m", makeRepresentation("x"));
    const [url, init] = (fetchFn as any).mock.calls[0];
    expect(url).toBe("http://svc/colorize");
    expect(init.method).toBe("POST");
    const body = JSON.parse(init.body);
    expect(body.gray_b64).toBe("g");
    expect(body.masks_b64).toBe("m");
    expect(body.representation.width).toBe(4);
  });

  it("sends seed and subset for sampling", async () => {
    const fetchFn = fetchReturning(200, {
      request_id: "r",
      seed: 3,
      image_b64: "png",
      representation: makeRepresentation("s"),
    });
    const api = new StudioApi("", fetchFn);
    await api.sample("g", "m", 3, ["lips"], null);
    const body = JSON.parse((fetchFn as any).mock.calls[0][1].body);
    expect(body.seed).toBe(3);
    expect(body.subset).toEqual(["lips"]);
    expect(body.fallback).toBeNull();
  });

  it("raises ApiError with the service detail", async () => {
    const api = new StudioApi("", fetchReturning(422, { detail: "invalid masks" }));
    await expect(api.encode("img", "masks")).rejects.toMatchObject({
      status: 422,
      message: "invalid masks",
    });
    await expect(api.encode("img", "masks")).rejects.toBeInstanceOf(ApiError);
  });

  it("falls back to status text for non-JSON errors", async () => {
    const fetchFn = vi.fn(async () => ({
      ok: false,
      status: 502,
      statusText: "bad gateway",
      json: async () => {
        throw new Error("no body");
      },
    })) as unknown as typeof fetch;
    const api = new StudioApi("", fetchFn);
    await expect(api.parse("img")).rejects.toMatchObject({
      status: 502,
      message: "bad gateway",
    });
  });
});
