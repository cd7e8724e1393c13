import { COMPONENTS, type Component } from "./types.js";

// overlay palette, alpha applied at draw time
export const OVERLAY_COLORS: Record<Component, [number, number, number]> = {
  lips: [220, 40, 90],
  skin: [250, 200, 150],
  eyes: [60, 120, 230],
  hair: [110, 60, 20],
  background: [40, 40, 40],
};

export function b64ToImage(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("cannot decode image"));
    img.src = `data:image/png;base64,${b64}`;
  });
}

/** Decode a component-index PNG (values 0..4 in the red channel). */
export async function decodeIndexMap(
  masksB64: string,
): Promise<{ data: Uint8Array; width: number; height: number }> {
  const img = await b64ToImage(masksB64);
  const canvas = document.createElement("canvas");
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d", { willReadFrequently: true })!;
  ctx.drawImage(img, 0, 0);
  const rgba = ctx.getImageData(0, 0, img.width, img.height).data;
  const data = new Uint8Array(img.width * img.height);
  for (let i = 0; i < data.length; i++) data[i] = rgba[i * 4];
  return { data, width: img.width, height: img.height };
}

/** Draw the base image plus translucent overlays for the toggled components. */
export async function drawWithOverlay(
  canvas: HTMLCanvasElement,
  baseB64: string,
  masksB64: string | null,
  visible: Set<Component>,
): Promise<void> {
  const img = await b64ToImage(baseB64);
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0);
  if (!masksB64 || visible.size === 0) return;
  const { data, width, height } = await decodeIndexMap(masksB64);
  if (width !== img.width || height !== img.height) return;
  const overlay = ctx.createImageData(width, height);
  for (let i = 0; i < data.length; i++) {
    const comp = COMPONENTS[data[i]];
    if (comp === undefined || !visible.has(comp)) continue;
    const [r, g, b] = OVERLAY_COLORS[comp];
    overlay.data[i * 4] = r;
    overlay.data[i * 4 + 1] = g;
    overlay.data[i * 4 + 2] = b;
    overlay.data[i * 4 + 3] = 110;
  }
  const tmp = document.createElement("canvas");
  tmp.width = width;
  tmp.height = height;
  tmp.getContext("2d")!.putImageData(overlay, 0, 0);
  ctx.drawImage(tmp, 0, 0);
}

export async function fileToBase64(file: File): Promise<string> {
  const buf = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < buf.length; i += chunk) {
    binary += String.fromCharCode(...buf.subarray(i, i + chunk));
  }
  return btoa(binary);
}
