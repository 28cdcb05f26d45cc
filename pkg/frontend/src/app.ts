// Browser entry point: the human oracle's annotation loop.
//
// Flow per batch: fetch suggestions (polling through retrains), pick a
// region, paint corrections over the pseudo-label prefill, submit the
// whole batch, then poll state until the next batch is ready.

import { SegalClient } from "./api.js";
import { RegionCanvas, prefillFromPseudoLabels } from "./labelGrid.js";
import {
  composeOverlayPixels,
  decodePng,
  drawAnnotatedRegions,
  drawRegions,
} from "./overlay.js";
import {
  ViewState,
  initialViewState,
  setActiveClass,
  setOpacity,
  setProgress,
  setZoom,
} from "./state.js";
import type { SuggestionBatch, SuggestedRegion } from "./types.js";

interface LoadedImage {
  base: Uint8Array;
  pseudo: Uint8Array;
  width: number;
  height: number;
  regions: SuggestedRegion[];
  annotated: { top: number; left: number; width: number; height: number; image_id: string }[];
}

class App {
  private client = new SegalClient("");
  private view: ViewState = initialViewState();
  private batch: SuggestionBatch | null = null;
  private canvases = new Map<string, RegionCanvas>();
  private images = new Map<string, LoadedImage>();
  private activeRegion: string | null = null;
  private classes = 2;
  private painting = false;

  private readonly canvas = document.getElementById("view") as HTMLCanvasElement;
  private readonly status = document.getElementById("status")!;
  private readonly banner = document.getElementById("banner")!;
  private readonly regionList = document.getElementById("regions")!;
  private readonly metrics = document.getElementById("metrics")!;

  async start(): Promise<void> {
    this.wireControls();
    await this.refreshBatch();
  }

  private key(r: { image_id: string; top: number; left: number }): string {
    return `${r.image_id}:${r.top}:${r.left}`;
  }

  private async refreshBatch(): Promise<void> {
    this.setStatus("fetching suggestions…");
    const state = await this.client.getState();
    this.classes = state.classes;
    this.renderMetrics(state.metrics);
    if (state.phase === "TRAINING") this.setStatus("model retraining…");
    const batch = await this.client.waitForSuggestions({
      onBusy: (msg) => this.setStatus(`training: ${msg}`),
    });
    this.batch = batch;
    this.canvases.clear();
    this.images.clear();
    const imageIds = [...new Set(batch.regions.map((r) => r.image_id))];
    for (const imageId of imageIds) {
      const overlay = await this.client.getOverlay(imageId);
      const base = await decodePng(overlay.image_png, overlay.width, overlay.height);
      const pseudo = await decodePng(overlay.pseudo_labels_png, overlay.width, overlay.height);
      this.images.set(imageId, {
        base,
        pseudo,
        width: overlay.width,
        height: overlay.height,
        regions: overlay.regions,
        annotated: overlay.annotated_regions,
      });
    }
    for (const region of batch.regions) {
      const image = this.images.get(region.image_id)!;
      const prefill = prefillFromPseudoLabels(region, image.pseudo, image.width);
      this.canvases.set(this.key(region), new RegionCanvas(region, this.classes, prefill));
    }
    this.view = setProgress(this.view, 0, batch.regions.length);
    this.activeRegion = batch.regions.length ? this.key(batch.regions[0]) : null;
    this.setStatus(
      batch.regions.length
        ? `batch ${batch.batch_id}: ${batch.regions.length} regions to review`
        : "no work: pool exhausted",
    );
    this.renderRegionList();
    this.render();
  }

  private currentCanvas(): RegionCanvas | null {
    return this.activeRegion ? this.canvases.get(this.activeRegion) ?? null : null;
  }

  private render(): void {
    const regionCanvas = this.currentCanvas();
    if (!regionCanvas) {
      this.canvas.width = 320;
      this.canvas.height = 120;
      return;
    }
    const image = this.images.get(regionCanvas.region.image_id)!;
    const zoom = this.view.zoom;
    this.canvas.width = image.width * zoom;
    this.canvas.height = image.height * zoom;
    const ctx = this.canvas.getContext("2d")!;

    // base + pseudo overlay, with the painted region labels on top
    const labels = Uint8Array.from(image.pseudo);
    for (const rc of this.canvases.values()) {
      if (rc.region.image_id !== regionCanvas.region.image_id) continue;
      for (let i = 0; i < rc.region.height; i++) {
        for (let j = 0; j < rc.region.width; j++) {
          labels[(rc.region.top + i) * image.width + (rc.region.left + j)] =
            rc.labelAt(i, j);
        }
      }
    }
    const pixels = composeOverlayPixels(image.base, labels, this.view.overlayOpacity);
    const offscreen = document.createElement("canvas");
    offscreen.width = image.width;
    offscreen.height = image.height;
    const offCtx = offscreen.getContext("2d")!;
    const frame = offCtx.createImageData(image.width, image.height);
    frame.data.set(pixels);
    offCtx.putImageData(frame, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(offscreen, 0, 0, this.canvas.width, this.canvas.height);

    drawAnnotatedRegions(ctx, image.annotated, zoom);
    drawRegions(ctx, image.regions, zoom);
    const r = regionCanvas.region;
    ctx.save();
    ctx.strokeStyle = "#ffee00";
    ctx.lineWidth = 3;
    ctx.strokeRect(r.left * zoom, r.top * zoom, r.width * zoom, r.height * zoom);
    ctx.restore();
  }

  private renderRegionList(): void {
    this.regionList.innerHTML = "";
    if (!this.batch) return;
    this.batch.regions.forEach((region) => {
      const key = this.key(region);
      const rc = this.canvases.get(key);
      const item = document.createElement("li");
      const mark = rc?.touched ? "✎" : "·";
      item.textContent =
        `${mark} ${region.image_id} @(${region.top},${region.left}) score ${region.score.toFixed(2)}`;
      if (key === this.activeRegion) item.classList.add("active");
      item.onclick = () => {
        this.activeRegion = key;
        this.renderRegionList();
        this.render();
      };
      this.regionList.appendChild(item);
    });
    const done = [...this.canvases.values()].filter((c) => c.touched).length;
    this.view = setProgress(this.view, done, this.canvases.size);
    const progress = document.getElementById("progress")!;
    progress.textContent = `${this.view.regionsDone}/${this.view.regionsTotal} regions touched`;
  }

  private renderMetrics(metrics: import("./types.js").MetricsRow | null): void {
    this.metrics.textContent = metrics
      ? `step ${metrics.step} | pixels ${metrics.labeled_pixels} | dice ${metrics.dice_obj.toFixed(3)}` +
        ` | brier ${metrics.brier.toFixed(4)} | nll ${metrics.nll.toFixed(3)}`
      : "no metrics yet";
  }

  private canvasToRegion(evt: MouseEvent): { row: number; col: number } | null {
    const rc = this.currentCanvas();
    if (!rc) return null;
    const rect = this.canvas.getBoundingClientRect();
    const x = (evt.clientX - rect.left) / this.view.zoom;
    const y = (evt.clientY - rect.top) / this.view.zoom;
    return { row: y - rc.region.top, col: x - rc.region.left };
  }

  private wireControls(): void {
    this.canvas.addEventListener("mousedown", (evt) => {
      this.painting = true;
      this.paintAt(evt);
    });
    this.canvas.addEventListener("mousemove", (evt) => {
      if (this.painting) this.paintAt(evt);
    });
    window.addEventListener("mouseup", () => (this.painting = false));

    (document.getElementById("class0") as HTMLButtonElement).onclick = () => {
      this.view = setActiveClass(this.view, 0, this.classes);
    };
    (document.getElementById("class1") as HTMLButtonElement).onclick = () => {
      this.view = setActiveClass(this.view, 1, this.classes);
    };
    (document.getElementById("fill") as HTMLButtonElement).onclick = () => {
      this.currentCanvas()?.fill(this.view.activeClass);
      this.renderRegionList();
      this.render();
    };
    (document.getElementById("undo") as HTMLButtonElement).onclick = () => {
      this.currentCanvas()?.undo();
      this.renderRegionList();
      this.render();
    };
    const opacity = document.getElementById("opacity") as HTMLInputElement;
    opacity.oninput = () => {
      this.view = setOpacity(this.view, Number(opacity.value) / 100);
      this.render();
    };
    const brush = document.getElementById("brush") as HTMLInputElement;
    brush.oninput = () => {
      this.view = { ...this.view, brushRadius: Number(brush.value) };
    };
    const zoom = document.getElementById("zoom") as HTMLInputElement;
    zoom.oninput = () => {
      this.view = setZoom(this.view, Number(zoom.value));
      this.render();
    };
    (document.getElementById("submit") as HTMLButtonElement).onclick = () => {
      void this.submit();
    };
  }

  private paintAt(evt: MouseEvent): void {
    const rc = this.currentCanvas();
    const pos = this.canvasToRegion(evt);
    if (!rc || !pos) return;
    rc.paint({
      row: pos.row,
      col: pos.col,
      radius: this.view.brushRadius,
      classId: this.view.activeClass,
    });
    this.renderRegionList();
    this.render();
  }

  private async submit(): Promise<void> {
    if (!this.batch) return;
    this.banner.textContent = "";
    const payload = {
      batch_id: this.batch.batch_id,
      regions: [...this.canvases.values()].map((c) => c.toSubmission()),
    };
    const result = await this.client.submitAnnotations(payload);
    if (result.kind === "conflict") {
      this.banner.textContent = `stale batch: ${result.message}; refetching…`;
      await this.refreshBatch();
      return;
    }
    if (result.kind === "invalid") {
      this.banner.textContent = `rejected: ${result.message}`;
      return;
    }
    this.setStatus(
      `accepted: ${result.ack.labeled_pixels} labeled pixels, retraining…`,
    );
    await this.refreshBatch();
  }

  private setStatus(text: string): void {
    this.status.textContent = text;
  }
}

new App().start().catch((err) => {
  document.getElementById("banner")!.textContent = String(err);
});
