/** World-rectangle viewport math for the pan/zoom canvas. */

export interface Viewport {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function width(v: Viewport): number {
  return v.x1 - v.x0;
}

export function height(v: Viewport): number {
  return v.y1 - v.y0;
}

/** Square viewport containing `v`, centered on it. */
export function squared(v: Viewport): Viewport {
  const w = width(v);
  const h = height(v);
  const s = Math.max(w, h);
  const cx = 0.5 * (v.x0 + v.x1);
  const cy = 0.5 * (v.y0 + v.y1);
  return { x0: cx - s / 2, y0: cy - s / 2, x1: cx + s / 2, y1: cy + s / 2 };
}

/** Pan by a fraction of the viewport size (dxPix/dyPix in canvas pixels). */
export function pan(v: Viewport, dxPix: number, dyPix: number, canvasSize: number): Viewport {
  const sx = (dxPix / canvasSize) * width(v);
  const sy = (dyPix / canvasSize) * height(v);
  // canvas y grows downward; world y grows upward
  return { x0: v.x0 - sx, x1: v.x1 - sx, y0: v.y0 + sy, y1: v.y1 + sy };
}

/**
 * Zoom by `factor` keeping the world point under the cursor fixed.
 * (px, py) are canvas pixel coordinates with the canvas rendering v over
 * canvasSize x canvasSize pixels; row 0 shows the top (y1 side).
 */
export function zoomAt(
  v: Viewport,
  factor: number,
  px: number,
  py: number,
  canvasSize: number,
): Viewport {
  const wx = v.x0 + (px / canvasSize) * width(v);
  const wy = v.y1 - (py / canvasSize) * height(v);
  const w = width(v) / factor;
  const h = height(v) / factor;
  const fx = (wx - v.x0) / width(v);
  const fy = (wy - v.y0) / height(v);
  const x0 = wx - fx * w;
  const y0 = wy - fy * h;
  return { x0, y0, x1: x0 + w, y1: y0 + h };
}

/**
 * Canvas-space affine transform that maps a frame rendered for `from`
 * onto a canvas currently showing `to` (used to preview the previous frame
 * while a new render is in flight): returns {scale, dx, dy} in pixels.
 */
export function previewTransform(from: Viewport, to: Viewport, canvasSize: number) {
  const scale = width(from) / width(to);
  const dx = ((from.x0 - to.x0) / width(to)) * canvasSize;
  // canvas y is top-down: the frame's top edge is at world y1
  const dy = ((to.y1 - from.y1) / height(to)) * canvasSize;
  return { scale, dx, dy };
}

export function viewportsEqual(a: Viewport, b: Viewport, tol = 0): boolean {
  return (
    Math.abs(a.x0 - b.x0) <= tol &&
    Math.abs(a.y0 - b.y0) <= tol &&
    Math.abs(a.x1 - b.x1) <= tol &&
    Math.abs(a.y1 - b.y1) <= tol
  );
}

/** World -> canvas pixel coordinates (top-down rows). */
export function worldToCanvas(v: Viewport, x: number, y: number, canvasSize: number) {
  return {
    x: ((x - v.x0) / width(v)) * canvasSize,
    y: ((v.y1 - y) / height(v)) * canvasSize,
  };
}
