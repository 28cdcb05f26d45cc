// Pure painting model for one suggested region.
//
// Pixels live in a flat Uint8Array in region-local row-major order, so the
// model is testable without a DOM.  Rendering is a separate concern.

import type { RegionGeometry, RegionSubmission } from "./types.js";

export interface Stroke {
  row: number; // region-local coordinates
  col: number;
  radius: number;
  classId: number;
}

export class RegionCanvas {
  readonly region: RegionGeometry;
  readonly classes: number;
  private labels: Uint8Array;
  private history: Uint8Array[] = [];
  /** true once the human has changed anything relative to the prefill */
  touched = false;

  constructor(region: RegionGeometry, classes: number, prefill: Uint8Array) {
    if (prefill.length !== region.width * region.height) {
      throw new Error(
        `prefill has ${prefill.length} pixels, region needs ${region.width * region.height}`,
      );
    }
    for (const v of prefill) {
      if (v >= classes) throw new Error(`prefill label ${v} out of range`);
    }
    this.region = region;
    this.classes = classes;
    this.labels = Uint8Array.from(prefill);
  }

  labelAt(row: number, col: number): number {
    return this.labels[row * this.region.width + col];
  }

  snapshot(): Uint8Array {
    return Uint8Array.from(this.labels);
  }

  /** Paint a disk; anything outside the region rectangle is clipped away. */
  paint(stroke: Stroke): boolean {
    if (stroke.classId < 0 || stroke.classId >= this.classes) {
      throw new Error(`class ${stroke.classId} out of range`);
    }
    const { width, height } = this.region;
    const r2 = stroke.radius * stroke.radius;
    let changedAny = false;
    let before: Uint8Array | null = null;
    for (let i = Math.max(0, Math.floor(stroke.row - stroke.radius));
         i <= Math.min(height - 1, Math.ceil(stroke.row + stroke.radius)); i++) {
      for (let j = Math.max(0, Math.floor(stroke.col - stroke.radius));
           j <= Math.min(width - 1, Math.ceil(stroke.col + stroke.radius)); j++) {
        const dy = i - stroke.row;
        const dx = j - stroke.col;
        if (dy * dy + dx * dx <= r2) {
          const idx = i * width + j;
          if (this.labels[idx] !== stroke.classId) {
            if (!changedAny) {
              before = this.snapshot();
              changedAny = true;
            }
            this.labels[idx] = stroke.classId;
          }
        }
      }
    }
    if (changedAny && before) {
      this.history.push(before);
      this.touched = true;
    }
    return changedAny;
  }

  /** Set the whole region to one class. */
  fill(classId: number): void {
    if (classId < 0 || classId >= this.classes) {
      throw new Error(`class ${classId} out of range`);
    }
    this.history.push(this.snapshot());
    this.labels.fill(classId);
    this.touched = true;
  }

  /** Revert the last paint or fill; returns false when nothing to undo. */
  undo(): boolean {
    const previous = this.history.pop();
    if (!previous) return false;
    this.labels = previous;
    return true;
  }

  /** Dense label grid in submission shape (height rows of width entries). */
  toSubmission(): RegionSubmission {
    const rows: number[][] = [];
    for (let i = 0; i < this.region.height; i++) {
      const row: number[] = [];
      for (let j = 0; j < this.region.width; j++) {
        row.push(this.labels[i * this.region.width + j]);
      }
      rows.push(row);
    }
    return { ...this.region, labels: rows };
  }
}

/** Cut a region's prefill out of a full-image pseudo-label grid. */
export function prefillFromPseudoLabels(
  region: RegionGeometry,
  pseudo: Uint8Array,
  imageWidth: number,
): Uint8Array {
  const out = new Uint8Array(region.width * region.height);
  for (let i = 0; i < region.height; i++) {
    for (let j = 0; j < region.width; j++) {
      out[i * region.width + j] =
        pseudo[(region.top + i) * imageWidth + (region.left + j)];
    }
  }
  return out;
}
