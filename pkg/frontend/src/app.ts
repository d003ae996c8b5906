/** Browser binding: canvas surface, pointer gestures, file picker, stats bar. */

import { HttpTransport, OverlayData } from "./client.js";
import { Viewport, worldToCanvas } from "./geometry.js";
import { LABEL_COLORS, OverlayToggles, Surface, ViewerCore } from "./core.js";

class CanvasSurface implements Surface {
  readonly size: number;
  private ctx: CanvasRenderingContext2D;
  private octx: CanvasRenderingContext2D;
  private lastBitmap: ImageBitmap | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private overlayCanvas: HTMLCanvasElement,
    private statsEl: HTMLElement,
    private toastEl: HTMLElement,
  ) {
    this.size = canvas.width;
    this.ctx = canvas.getContext("2d")!;
    this.octx = overlayCanvas.getContext("2d")!;
  }

  async drawFrame(blob: Blob): Promise<void> {
    const bmp = await createImageBitmap(blob);
    this.lastBitmap = bmp;
    this.ctx.setTransform(1, 0, 0, 1, 0, 0);
    this.ctx.clearRect(0, 0, this.size, this.size);
    this.ctx.drawImage(bmp, 0, 0, this.size, this.size);
  }

  drawPreview(scale: number, dx: number, dy: number): void {
    if (!this.lastBitmap) return;
    this.ctx.setTransform(1, 0, 0, 1, 0, 0);
    this.ctx.clearRect(0, 0, this.size, this.size);
    this.ctx.drawImage(
      this.lastBitmap,
      dx,
      dy,
      this.size * scale,
      this.size * scale,
    );
  }

  drawOverlay(overlay: OverlayData | null, viewport: Viewport, toggles: OverlayToggles): void {
    const ctx = this.octx;
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.clearRect(0, 0, this.size, this.size);
    if (!overlay) return;
    if (toggles.cells) {
      ctx.strokeStyle = "rgba(80, 180, 120, 0.5)";
      ctx.lineWidth = 1;
      for (const cell of overlay.cells) {
        const a = worldToCanvas(viewport, cell.x, cell.y + cell.w, this.size);
        const b = worldToCanvas(viewport, cell.x + cell.w, cell.y, this.size);
        ctx.strokeRect(a.x, a.y, b.x - a.x, b.y - a.y);
      }
    }
    if (toggles.curves) {
      ctx.lineWidth = 2;
      for (const curve of overlay.curves) {
        ctx.strokeStyle = toggles.labels ? LABEL_COLORS[curve.label] : "#222";
        ctx.beginPath();
        curve.points.forEach(([x, y], i) => {
          const p = worldToCanvas(viewport, x, y, this.size);
          if (i === 0) ctx.moveTo(p.x, p.y);
          else ctx.lineTo(p.x, p.y);
        });
        ctx.stroke();
      }
    }
  }

  setStats(text: string): void {
    this.statsEl.textContent = text;
  }

  toast(message: string): void {
    this.toastEl.textContent = message;
    this.toastEl.classList.add("visible");
    setTimeout(() => this.toastEl.classList.remove("visible"), 4000);
  }
}

function sceneBounds(sceneJson: string): Viewport {
  const doc = JSON.parse(sceneJson);
  let x0 = Infinity, y0 = Infinity, x1 = -Infinity, y1 = -Infinity;
  for (const curve of doc.curves) {
    for (const span of curve.spans) {
      for (const [x, y] of span) {
        x0 = Math.min(x0, x); x1 = Math.max(x1, x);
        y0 = Math.min(y0, y); y1 = Math.max(y1, y);
      }
    }
  }
  const pad = 0.05 * Math.max(x1 - x0, y1 - y0);
  return { x0: x0 - pad, y0: y0 - pad, x1: x1 + pad, y1: y1 + pad };
}

export function boot(): void {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const overlayCanvas = document.getElementById("overlay") as HTMLCanvasElement;
  const statsEl = document.getElementById("stats")!;
  const toastEl = document.getElementById("toast")!;
  const surface = new CanvasSurface(canvas, overlayCanvas, statsEl, toastEl);
  const core = new ViewerCore(new HttpTransport(""), surface);

  const filePicker = document.getElementById("scene-file") as HTMLInputElement;
  filePicker.addEventListener("change", async () => {
    const file = filePicker.files?.[0];
    if (!file) return;
    const text = await file.text();
    try {
      await core.openScene(text, sceneBounds(text));
    } catch {
      /* toast already shown */
    }
  });

  overlayCanvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const rect = overlayCanvas.getBoundingClientRect();
    const px = ((ev.clientX - rect.left) / rect.width) * surface.size;
    const py = ((ev.clientY - rect.top) / rect.height) * surface.size;
    core.zoomAtCursor(ev.deltaY < 0 ? 2.0 : 0.5, px, py);
  });

  let dragging = false;
  let last: [number, number] = [0, 0];
  overlayCanvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    last = [ev.clientX, ev.clientY];
    overlayCanvas.setPointerCapture(ev.pointerId);
  });
  overlayCanvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const rect = overlayCanvas.getBoundingClientRect();
    const sx = surface.size / rect.width;
    core.panBy((ev.clientX - last[0]) * sx, (ev.clientY - last[1]) * sx);
    last = [ev.clientX, ev.clientY];
  });
  overlayCanvas.addEventListener("pointerup", () => (dragging = false));

  (document.getElementById("aa-toggle") as HTMLInputElement).addEventListener(
    "change",
    (ev) => core.setAA((ev.target as HTMLInputElement).checked),
  );
  for (const kind of ["curves", "cells", "labels"] as const) {
    document
      .getElementById(`overlay-${kind}`)!
      .addEventListener("change", () => void core.toggleOverlay(kind));
  }
}

boot();
