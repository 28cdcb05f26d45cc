import { describe, expect, it } from "vitest";

import { RegionCanvas, prefillFromPseudoLabels } from "../src/labelGrid.js";
import type { RegionGeometry } from "../src/types.js";

const region: RegionGeometry = { image_id: "img", top: 4, left: 8, width: 6, height: 5 };

function canvasWith(prefill?: Uint8Array): RegionCanvas {
  return new RegionCanvas(region, 2, prefill ?? new Uint8Array(6 * 5));
}

describe("RegionCanvas", () => {
  it("starts from the pseudo-label prefill", () => {
    const prefill = new Uint8Array(30);
    prefill[7] = 1;
    const canvas = canvasWith(prefill);
    expect(canvas.labelAt(1, 1)).toBe(1);
    expect(canvas.labelAt(0, 0)).toBe(0);
    expect(canvas.touched).toBe(false);
  });

  it("rejects a prefill of the wrong size", () => {
    expect(() => new RegionCanvas(region, 2, new Uint8Array(4))).toThrow(/pixels/);
  });

  it("rejects prefill labels outside the class range", () => {
    const bad = new Uint8Array(30).fill(5);
    expect(() => new RegionCanvas(region, 2, bad)).toThrow(/out of range/);
  });

  it("paints a disk of the active class", () => {
    const canvas = canvasWith();
    expect(canvas.paint({ row: 2, col: 2, radius: 1, classId: 1 })).toBe(true);
    expect(canvas.labelAt(2, 2)).toBe(1);
    expect(canvas.labelAt(1, 2)).toBe(1);
    expect(canvas.labelAt(0, 0)).toBe(0);
    expect(canvas.touched).toBe(true);
  });

  it("clips strokes to the region rectangle", () => {
    const canvas = canvasWith();
    // centered outside, radius reaching in: only in-bounds pixels change
    expect(canvas.paint({ row: -1, col: 2, radius: 1.5, classId: 1 })).toBe(true);
    expect(canvas.labelAt(0, 2)).toBe(1);
    const submission = canvas.toSubmission();
    expect(submission.labels).toHaveLength(region.height);
    expect(submission.labels[0]).toHaveLength(region.width);
  });

  it("ignores strokes fully outside the region", () => {
    const canvas = canvasWith();
    const before = canvas.snapshot();
    expect(canvas.paint({ row: 50, col: 50, radius: 2, classId: 1 })).toBe(false);
    expect(canvas.snapshot()).toEqual(before);
    expect(canvas.touched).toBe(false);
  });

  it("fill covers the whole region with one class", () => {
    const canvas = canvasWith();
    canvas.fill(1);
    for (let i = 0; i < region.height; i++) {
      for (let j = 0; j < region.width; j++) {
        expect(canvas.labelAt(i, j)).toBe(1);
      }
    }
  });

  it("undo restores the previous grid exactly", () => {
    const canvas = canvasWith();
    const before = canvas.snapshot();
    canvas.paint({ row: 2, col: 3, radius: 1, classId: 1 });
    expect(canvas.undo()).toBe(true);
    expect(canvas.snapshot()).toEqual(before);
    expect(canvas.undo()).toBe(false);
  });

  it("rejects out-of-range classes", () => {
    const canvas = canvasWith();
    expect(() => canvas.paint({ row: 1, col: 1, radius: 1, classId: 9 })).toThrow();
    expect(() => canvas.fill(-1)).toThrow();
  });

  it("submission labels stay below the class count", () => {
    const canvas = canvasWith();
    canvas.fill(1);
    canvas.paint({ row: 0, col: 0, radius: 1, classId: 0 });
    for (const row of canvas.toSubmission().labels) {
      for (const v of row) {
        expect(v).toBeGreaterThanOrEqual(0);
        expect(v).toBeLessThan(2);
      }
    }
  });
});

describe("prefillFromPseudoLabels", () => {
  it("cuts the region window out of the full-image grid", () => {
    const imageWidth = 20;
    const pseudo = new Uint8Array(20 * 20);
    pseudo[(region.top + 1) * imageWidth + (region.left + 2)] = 1;
    const prefill = prefillFromPseudoLabels(region, pseudo, imageWidth);
    expect(prefill[1 * region.width + 2]).toBe(1);
    expect(prefill[0]).toBe(0);
    expect(prefill).toHaveLength(region.width * region.height);
  });
});
