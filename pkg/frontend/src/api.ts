import type { Component, Representation } from "./types.js";

export interface ParseResponse {
  request_id: string;
  labels_b64: string;
  preview_b64: string;
}

export interface EncodeResponse {
  request_id: string;
  representation: Representation;
}

export interface ColorizeResponse {
  request_id: string;
  image_b64: string;
}

export interface SampleResponse {
  request_id: string;
  seed: number;
  image_b64: string;
  representation: Representation;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

/** Thin typed client over the colorization service; all images are base64 PNG. */
export class StudioApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const payload = (await res.json()) as { detail?: string };
        if (payload.detail) detail = payload.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  parse(imageB64: string): Promise<ParseResponse> {
    return this.post("/parse", { image_b64: imageB64 });
  }

  encode(imageB64: string, masksB64: string): Promise<EncodeResponse> {
    return this.post("/encode", { image_b64: imageB64, masks_b64: masksB64 });
  }

  colorize(
    grayB64: string,
    masksB64: string,
    representation: Representation,
  ): Promise<ColorizeResponse> {
    return this.post("/colorize", {
      gray_b64: grayB64,
      masks_b64: masksB64,
      representation,
    });
  }

  sample(
    grayB64: string,
    masksB64: string,
    seed: number,
    subset: Component[],
    fallback: Representation | null,
  ): Promise<SampleResponse> {
    return this.post("/sample", {
      gray_b64: grayB64,
      masks_b64: masksB64,
      seed,
      subset,
      fallback,
    });
  }

  mix(parts: Record<Component, Representation>): Promise<{ representation: Representation }> {
    return this.post("/mix", { parts });
  }
}
