"""Pixel evaluation over a viewport, quadtree-based anti-aliasing, PNG I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import RenderError


@dataclass(frozen=True)
class Viewport:
    """World rectangle plus pixel grid.  Row 0 of the buffer is the bottom
    scanline (y = ymin side); PNG encoding flips to top-down."""

    x0: float
    y0: float
    x1: float
    y1: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise RenderError("viewport must have positive extent")
        if self.width < 1 or self.height < 1:
            raise RenderError("resolution must be positive")

    @property
    def dx(self):
        return (self.x1 - self.x0) / self.width

    @property
    def dy(self):
        return (self.y1 - self.y0) / self.height

    def pixel_centers(self):
        xs = self.x0 + (np.arange(self.width) + 0.5) * self.dx
        ys = self.y0 + (np.arange(self.height) + 0.5) * self.dy
        return (xs[None, :] + 1j * ys[:, None]).ravel()


def full_extent_viewport(scene, width, height, pad=0.05):
    """Square viewport covering the scene bounds with padding."""
    x0, y0, x1, y1 = scene.bounds
    w = max(x1 - x0, y1 - y0)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    half = 0.5 * w * (1 + 2 * pad)
    return Viewport(cx - half, cy - half, cx + half, cy + half, width, height)


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def _segment_pixel_mask(segset, vp: Viewport, depth_extra=2):
    """Boolean grid at resolution (2^e * h, 2^e * w) marking cells crossed by
    eval segments, by dense sampling of the chords."""
    sub = 1 << depth_extra
    gw, gh = vp.width * sub, vp.height * sub
    dx, dy = (vp.x1 - vp.x0) / gw, (vp.y1 - vp.y0) / gh
    mask = np.zeros((gh, gw), dtype=bool)
    step = 0.25 * min(dx, dy)
    p1, p2 = segset.p1, segset.p2
    lens = np.abs(p2 - p1)
    counts = np.maximum((lens / step).astype(int) + 2, 2)
    for a, b, n in zip(p1, p2, counts):
        t = np.linspace(0.0, 1.0, n)
        pts = a + t * (b - a)
        ix = np.floor((pts.real - vp.x0) / dx).astype(int)
        iy = np.floor((pts.imag - vp.y0) / dy).astype(int)
        ok = (ix >= 0) & (ix < gw) & (iy >= 0) & (iy < gh)
        mask[iy[ok], ix[ok]] = True
    return mask


def antialias_samples(segset, vp: Viewport, depth_extra=2):
    """Sampling plan for quadtree anti-aliasing.

    Cells containing boundary curves subdivide until smaller than the pixel
    (depth_extra levels below the pixel grid); empty cells contribute their
    center sample.  Returns (points, pixel_index, weights); per-pixel weights
    sum to 1 and the value is the recursive area-weighted average.
    """
    if vp.width != vp.height or not _is_pow2(vp.width):
        raise RenderError("anti-aliasing requires a square 2^n resolution")
    from scipy.ndimage import binary_dilation

    fine = _segment_pixel_mask(segset, vp, depth_extra)
    pixel_has_curve = fine.copy()
    for _ in range(depth_extra):
        pixel_has_curve = (
            pixel_has_curve[0::2, 0::2] | pixel_has_curve[0::2, 1::2]
            | pixel_has_curve[1::2, 0::2] | pixel_has_curve[1::2, 1::2]
        )
    # curve pixels and their immediate neighbors (steep gradients) sample the
    # full subdivided grid; everything else samples its center once
    region = binary_dilation(pixel_has_curve)
    has_curve = []
    for d in range(depth_extra):
        scale = 1 << d
        has_curve.append(np.repeat(np.repeat(region, scale, axis=0), scale, axis=1))
    has_curve.append(fine)
    pts, pix, wts = [], [], []
    dx, dy = vp.dx, vp.dy

    def emit(d, ix, iy, weight):
        # cells at depth d below pixels: grid (w*2^d, h*2^d)
        if d < depth_extra and has_curve[d][iy, ix]:
            for sy in (0, 1):
                for sx in (0, 1):
                    emit(d + 1, 2 * ix + sx, 2 * iy + sy, weight * 0.25)
            return
        scale = 1 << d
        cx = vp.x0 + (ix + 0.5) * dx / scale
        cy = vp.y0 + (iy + 0.5) * dy / scale
        pts.append(complex(cx, cy))
        pix.append((iy >> d) * vp.width + (ix >> d))
        wts.append(weight)

    # plain pixels (no curve): one center sample each, vectorized
    plain_y, plain_x = np.nonzero(~has_curve[0])
    if len(plain_x):
        pts.extend(
            (vp.x0 + (plain_x + 0.5) * dx) + 1j * (vp.y0 + (plain_y + 0.5) * dy)
        )
        pix.extend(plain_y * vp.width + plain_x)
        wts.extend(np.ones(len(plain_x)))
    for py, px in zip(*np.nonzero(has_curve[0])):
        emit(0, int(px), int(py), 1.0)
    return np.array(pts), np.array(pix, dtype=int), np.array(wts)


def render(session, vp: Viewport, aa=True):
    """Render the session's solved scene over a viewport; returns a float RGB
    buffer (height, width, 3) clamped to [0, 1]."""
    from .adaptive import render_session

    box = _viewport_root_box(session.scene, vp)
    if not aa:
        u = render_session(session, vp.pixel_centers(), root_box=box)
        img = u.reshape(vp.height, vp.width, 3)
    else:
        pts, pix, wts = antialias_samples(session.disc.evalseg, vp)
        u = render_session(session, pts, root_box=box)
        # clamp per sample: each sample is a displayed sub-pixel color, and
        # overshoots near singular corners must not bleed into the average
        u = np.clip(u, 0.0, 1.0)
        img = np.zeros((vp.height * vp.width, 3))
        np.add.at(img, pix, wts[:, None] * u)
        img = img.reshape(vp.height, vp.width, 3)
    return np.clip(img, 0.0, 1.0)


def _viewport_root_box(scene, vp: Viewport):
    x0, y0, x1, y1 = scene.bounds
    x0, x1 = min(x0, vp.x0), max(x1, vp.x1)
    y0, y1 = min(y0, vp.y0), max(y1, vp.y1)
    w = max(x1 - x0, y1 - y0)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    half = 0.55 * w
    return (cx - half, cy - half, 2 * half)


def to_bytes(img):
    """Quantize to 8-bit (round half away from zero on value*255)."""
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.uint8)


def encode_png(img, path):
    """Write an 8-bit sRGB PNG (row 0 of the buffer is the bottom scanline)."""
    data = to_bytes(img)[::-1]  # top-down for PNG
    try:
        PILImage.fromarray(data, mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise RenderError(f"cannot write {path}: {e}") from e


def png_bytes(img):
    import io

    data = to_bytes(img)[::-1]
    buf = io.BytesIO()
    PILImage.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(path_or_bytes):
    """Read a PNG back into the bottom-up float convention."""
    import io

    if isinstance(path_or_bytes, (bytes, bytearray)):
        im = PILImage.open(io.BytesIO(path_or_bytes))
    else:
        im = PILImage.open(path_or_bytes)
    arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr[::-1]
