// Canvas rendering for image + translucent class overlay + region outlines.
//
// Decoding helpers are factored out so the pixel math stays testable; the
// actual drawing needs a DOM canvas.

import type { RegionGeometry, SuggestedRegion } from "./types.js";

export const CLASS_COLORS: [number, number, number][] = [
  [40, 40, 40],     // background
  [255, 140, 0],    // foreground
  [40, 160, 255],
  [200, 60, 200],
];

/** Decode a base64 PNG into a grayscale/label Uint8Array via a canvas. */
export async function decodePng(
  b64: string,
  width: number,
  height: number,
): Promise<Uint8Array> {
  const bytes = Uint8Array.from(atob(b64), (c) => c.charCodeAt(0));
  const bitmap = await createImageBitmap(new Blob([bytes], { type: "image/png" }));
  const canvas = document.createElement("canvas");
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, width, height).data;
  const out = new Uint8Array(width * height);
  for (let i = 0; i < out.length; i++) out[i] = data[4 * i]; // red channel
  return out;
}

/** Compose RGBA pixels: grayscale base + class colors at given opacity. */
export function composeOverlayPixels(
  base: Uint8Array,
  labels: Uint8Array,
  opacity: number,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(base.length * 4);
  for (let i = 0; i < base.length; i++) {
    const color = CLASS_COLORS[labels[i] % CLASS_COLORS.length];
    const mix = labels[i] > 0 ? opacity : 0;
    out[4 * i] = base[i] * (1 - mix) + color[0] * mix;
    out[4 * i + 1] = base[i] * (1 - mix) + color[1] * mix;
    out[4 * i + 2] = base[i] * (1 - mix) + color[2] * mix;
    out[4 * i + 3] = 255;
  }
  return out;
}

export interface RectangleStyle {
  color: string;
  lineWidth: number;
  label?: string;
}

/** Draw region rectangles (score-ordered labels) onto a 2D context. */
export function drawRegions(
  ctx: CanvasRenderingContext2D,
  regions: SuggestedRegion[],
  zoom: number,
  style: Partial<RectangleStyle> = {},
): void {
  ctx.save();
  ctx.strokeStyle = style.color ?? "#00e5ff";
  ctx.lineWidth = style.lineWidth ?? 2;
  ctx.font = `${Math.max(10, zoom * 2)}px sans-serif`;
  ctx.fillStyle = ctx.strokeStyle;
  regions.forEach((region, rank) => {
    ctx.strokeRect(
      region.left * zoom,
      region.top * zoom,
      region.width * zoom,
      region.height * zoom,
    );
    ctx.fillText(`#${rank + 1}`, region.left * zoom + 2, region.top * zoom - 3);
  });
  ctx.restore();
}

export function drawAnnotatedRegions(
  ctx: CanvasRenderingContext2D,
  regions: RegionGeometry[],
  zoom: number,
): void {
  ctx.save();
  ctx.strokeStyle = "rgba(120, 255, 120, 0.8)";
  ctx.setLineDash([4, 3]);
  ctx.lineWidth = 1;
  for (const region of regions) {
    ctx.strokeRect(
      region.left * zoom,
      region.top * zoom,
      region.width * zoom,
      region.height * zoom,
    );
  }
  ctx.restore();
}
