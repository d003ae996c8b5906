/** Render-service client with debounce, latest-wins cancellation, and 409 retry. */

import { Viewport } from "./geometry.js";

export interface RenderStats {
  resolved: number;
  interpolating: number;
  solveMs: number;
  evalMs: number;
}

export interface RenderResult {
  blob: Blob;
  stats: RenderStats;
  viewport: Viewport;
  seq: number;
}

export interface OverlayCurve {
  id: string;
  label: "fixed" | "interpolating" | "resolving";
  points: [number, number][];
}

export interface OverlayData {
  curves: OverlayCurve[];
  cells: { x: number; y: number; w: number; level: number; leaf: boolean }[];
}

/** Minimal transport abstraction so the viewer logic is testable offline. */
export interface Transport {
  postScene(body: string): Promise<{ session: string }>;
  render(
    session: string,
    viewport: Viewport,
    size: number,
    aa: boolean,
    signal?: AbortSignal,
  ): Promise<{ status: number; blob?: Blob; headers?: Record<string, string> }>;
  overlay(session: string): Promise<OverlayData>;
}

export class HttpTransport implements Transport {
  constructor(private base: string = "") {}

  async postScene(body: string) {
    const res = await fetch(`${this.base}/scene`, { method: "POST", body });
    if (!res.ok) {
      const info = await res.json().catch(() => ({}));
      throw new Error(info.message || `scene rejected (${res.status})`);
    }
    return res.json();
  }

  async render(session: string, v: Viewport, size: number, aa: boolean, signal?: AbortSignal) {
    const res = await fetch(`${this.base}/session/${session}/render`, {
      method: "POST",
      body: JSON.stringify({ viewport: [v.x0, v.y0, v.x1, v.y1], width: size, height: size, aa }),
      signal,
    });
    if (res.status !== 200) {
      return { status: res.status };
    }
    const headers: Record<string, string> = {};
    res.headers.forEach((val, key) => (headers[key.toLowerCase()] = val));
    return { status: 200, blob: await res.blob(), headers };
  }

  async overlay(session: string) {
    const res = await fetch(`${this.base}/session/${session}/overlay`);
    if (!res.ok) throw new Error(`overlay failed (${res.status})`);
    return res.json();
  }
}

function parseStats(headers: Record<string, string>): RenderStats {
  return {
    resolved: parseInt(headers["x-resolve-count"] ?? "0", 10),
    interpolating: parseInt(headers["x-interp-count"] ?? "0", 10),
    solveMs: parseFloat(headers["x-solve-ms"] ?? "0"),
    evalMs: parseFloat(headers["x-eval-ms"] ?? "0"),
  };
}

export interface QueueOptions {
  debounceMs?: number;
  retryBaseMs?: number;
  maxRetries?: number;
  setTimeoutFn?: typeof setTimeout;
  clearTimeoutFn?: typeof clearTimeout;
}

/**
 * Serializes render requests: requests are debounced, at most one is in
 * flight, a newer request aborts the in-flight one, and only the most recent
 * completed request is delivered (latest wins).  409 responses (busy server)
 * retry with exponential backoff unless superseded.
 */
export class RenderQueue {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private seq = 0;
  private delivered = 0;
  private inflight: AbortController | null = null;
  private readonly debounceMs: number;
  private readonly retryBaseMs: number;
  private readonly maxRetries: number;
  private readonly setT: typeof setTimeout;
  private readonly clearT: typeof clearTimeout;
  inFlightCount = 0;

  constructor(
    private transport: Transport,
    private session: string,
    private size: number,
    private onFrame: (r: RenderResult) => void | Promise<void>,
    private onError: (e: Error) => void = () => {},
    opts: QueueOptions = {},
  ) {
    this.debounceMs = opts.debounceMs ?? 120;
    this.retryBaseMs = opts.retryBaseMs ?? 150;
    this.maxRetries = opts.maxRetries ?? 5;
    this.setT = opts.setTimeoutFn ?? setTimeout;
    this.clearT = opts.clearTimeoutFn ?? clearTimeout;
  }

  /** Debounced request; the newest viewport always supersedes older ones. */
  request(viewport: Viewport, aa: boolean): void {
    if (this.timer !== null) this.clearT(this.timer);
    this.timer = this.setT(() => {
      this.timer = null;
      void this.fire({ ...viewport }, aa);
    }, this.debounceMs);
  }

  /** Immediate request (initial frame). */
  requestNow(viewport: Viewport, aa: boolean): Promise<void> {
    return this.fire({ ...viewport }, aa);
  }

  private async fire(viewport: Viewport, aa: boolean, attempt = 0): Promise<void> {
    const mySeq = ++this.seq;
    if (this.inflight) this.inflight.abort();
    const ctrl = new AbortController();
    this.inflight = ctrl;
    this.inFlightCount += 1;
    try {
      const res = await this.transport.render(this.session, viewport, this.size, aa, ctrl.signal);
      if (mySeq !== this.seq) return; // superseded while in flight
      if (res.status === 409) {
        if (attempt < this.maxRetries) {
          this.setT(() => {
            if (mySeq === this.seq) void this.fire(viewport, aa, attempt + 1);
          }, this.retryBaseMs * 2 ** attempt);
        } else {
          this.onError(new Error("server busy"));
        }
        return;
      }
      if (res.status !== 200 || !res.blob) {
        this.onError(new Error(`render failed (${res.status})`));
        return;
      }
      if (mySeq > this.delivered) {
        this.delivered = mySeq;
        await this.onFrame({
          blob: res.blob,
          stats: parseStats(res.headers ?? {}),
          viewport,
          seq: mySeq,
        });
      }
    } catch (e) {
      if ((e as Error).name !== "AbortError" && mySeq === this.seq) {
        this.onError(e as Error);
      }
    } finally {
      this.inFlightCount -= 1;
      if (this.inflight === ctrl) this.inflight = null;
    }
  }
}
