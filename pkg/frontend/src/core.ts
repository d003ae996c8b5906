/** DOM-free viewer state machine: drives the render queue from navigation
 * gestures and tells the surface what to draw. */

import {
  OverlayData,
  RenderQueue,
  RenderResult,
  RenderStats,
  Transport,
  QueueOptions,
} from "./client.js";
import { Viewport, pan, previewTransform, squared, zoomAt } from "./geometry.js";

export interface Surface {
  /** canvas is square: size x size pixels */
  readonly size: number;
  drawFrame(blob: Blob): Promise<void>;
  /** scale/translate the last frame as a preview while a render is in flight */
  drawPreview(scale: number, dx: number, dy: number): void;
  drawOverlay(overlay: OverlayData | null, viewport: Viewport, toggles: OverlayToggles): void;
  setStats(text: string): void;
  toast(message: string): void;
}

export interface OverlayToggles {
  curves: boolean;
  cells: boolean;
  labels: boolean;
}

export const LABEL_COLORS: Record<string, string> = {
  fixed: "#9097a0",
  interpolating: "#3f7fd4",
  resolving: "#e03c31",
};

export class ViewerCore {
  session: string | null = null;
  viewport: Viewport = { x0: 0, y0: 0, x1: 1, y1: 1 };
  frameViewport: Viewport | null = null;
  aa = true;
  toggles: OverlayToggles = { curves: false, cells: false, labels: true };
  overlay: OverlayData | null = null;
  lastStats: RenderStats | null = null;
  private queue: RenderQueue | null = null;

  constructor(
    private transport: Transport,
    private surface: Surface,
    private queueOpts: QueueOptions = {},
  ) {}

  /** Upload a scene document, then display the initial full-extent frame. */
  async openScene(sceneJson: string, fullExtent: Viewport): Promise<void> {
    try {
      const { session } = await this.transport.postScene(sceneJson);
      this.session = session;
      this.viewport = squared(fullExtent);
      this.queue = new RenderQueue(
        this.transport,
        session,
        this.surface.size,
        (r) => this.applyFrame(r),
        (e) => this.surface.toast(e.message),
        this.queueOpts,
      );
      await this.queue.requestNow(this.viewport, this.aa);
    } catch (e) {
      this.surface.toast((e as Error).message);
      throw e;
    }
  }

  private async applyFrame(r: RenderResult): Promise<void> {
    this.frameViewport = r.viewport;
    this.lastStats = r.stats;
    await this.surface.drawFrame(r.blob);
    this.surface.setStats(
      `re-solved ${r.stats.resolved} | interpolating ${r.stats.interpolating} | ` +
        `solve ${r.stats.solveMs.toFixed(0)} ms | eval ${r.stats.evalMs.toFixed(0)} ms`,
    );
    if (this.toggles.curves || this.toggles.cells) {
      await this.refreshOverlay();
    } else {
      this.surface.drawOverlay(this.overlay, this.viewport, this.toggles);
    }
  }

  private schedule(): void {
    if (!this.queue) return;
    if (this.frameViewport) {
      const t = previewTransform(this.frameViewport, this.viewport, this.surface.size);
      this.surface.drawPreview(t.scale, t.dx, t.dy);
    }
    this.queue.request(this.viewport, this.aa);
  }

  panBy(dxPix: number, dyPix: number): void {
    this.viewport = pan(this.viewport, dxPix, dyPix, this.surface.size);
    this.schedule();
  }

  zoomAtCursor(factor: number, px: number, py: number): void {
    this.viewport = zoomAt(this.viewport, factor, px, py, this.surface.size);
    this.schedule();
  }

  setAA(on: boolean): void {
    this.aa = on;
    this.schedule();
  }

  async toggleOverlay(kind: keyof OverlayToggles): Promise<void> {
    this.toggles[kind] = !this.toggles[kind];
    if ((this.toggles.curves || this.toggles.cells) && !this.overlay) {
      await this.refreshOverlay();
    } else {
      this.surface.drawOverlay(this.overlay, this.viewport, this.toggles);
    }
  }

  private async refreshOverlay(): Promise<void> {
    if (!this.session) return;
    try {
      this.overlay = await this.transport.overlay(this.session);
    } catch (e) {
      this.surface.toast((e as Error).message);
      return;
    }
    this.surface.drawOverlay(this.overlay, this.viewport, this.toggles);
  }
}
