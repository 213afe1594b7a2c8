"""Binary PPM (P6) heatmaps with a colour-bar strip and optional path overlay."""

from __future__ import annotations

from pathlib import Path

import numpy as np

LEGEND_PX = 16
STYLES = ("mean", "var", "p", "class-error", "path-overlay")

# linear colour map anchors, low to high
_ANCHORS = np.array([
    [48, 18, 59],
    [40, 120, 220],
    [30, 190, 160],
    [200, 220, 50],
    [250, 120, 30],
], dtype=float)
OK_COLOR = np.array([255, 255, 255], dtype=np.uint8)
ERROR_COLOR = np.array([200, 30, 30], dtype=np.uint8)
PATH_COLOR = np.array([255, 255, 255], dtype=np.uint8)
MARKER_COLOR = np.array([0, 0, 0], dtype=np.uint8)


def colormap(values, vmin: float, vmax: float) -> np.ndarray:
    """Map values linearly onto the colour ramp; a zero range maps to the low end."""
    v = np.asarray(values, dtype=float)
    span = vmax - vmin
    t = np.zeros_like(v) if span <= 0 else np.clip((v - vmin) / span, 0.0, 1.0)
    pos = t * (len(_ANCHORS) - 1)
    i = np.minimum(pos.astype(int), len(_ANCHORS) - 2)
    f = (pos - i)[..., None]
    rgb = _ANCHORS[i] * (1 - f) + _ANCHORS[i + 1] * f
    return np.rint(rgb).astype(np.uint8)


def _north_up(values: np.ndarray) -> np.ndarray:
    # grid rows run south to north; image rows run top to bottom
    return np.asarray(values)[::-1]


def heatmap(values, vmin: float | None = None, vmax: float | None = None) -> tuple[np.ndarray, float, float]:
    """Image of a square grid with a legend strip below; returns ``(img, vmin, vmax)``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    vmin = float(np.min(values)) if vmin is None else float(vmin)
    vmax = float(np.max(values)) if vmax is None else float(vmax)
    body = colormap(_north_up(values), vmin, vmax)
    ramp = np.linspace(vmin, vmax, n) if n > 1 else np.array([vmin])
    legend = np.broadcast_to(colormap(ramp, vmin, vmax)[None], (LEGEND_PX, n, 3))
    return np.concatenate([body, legend], axis=0), vmin, vmax


def class_error_image(model_class, truth_class) -> np.ndarray:
    err = _north_up(np.asarray(model_class) != np.asarray(truth_class))
    n = err.shape[0]
    img = np.where(err[..., None], ERROR_COLOR, OK_COLOR).astype(np.uint8)
    legend = np.empty((LEGEND_PX, n, 3), dtype=np.uint8)
    legend[:, : n // 2] = OK_COLOR
    legend[:, n // 2 :] = ERROR_COLOR
    return np.concatenate([img, legend], axis=0)


def world_to_pixel(pts, side_s: float, res: int) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    h = side_s / (res - 1)
    col = np.rint((pts[:, 0] + side_s / 2) / h).astype(int)
    row = (res - 1) - np.rint((pts[:, 1] + side_s / 2) / h).astype(int)
    return np.column_stack([np.clip(row, 0, res - 1), np.clip(col, 0, res - 1)])


def _line(r0, c0, r1, c1):
    """Integer pixels on the segment, Bresenham style."""
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr, sc = (1 if r1 > r0 else -1), (1 if c1 > c0 else -1)
    err = dc - dr
    r, c = r0, c0
    while True:
        yield r, c
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr


def overlay_path(img: np.ndarray, pts, side_s: float, res: int) -> np.ndarray:
    """Draw a 1-px polyline through ``pts`` with 3x3 markers at each vertex."""
    img = img.copy()
    px = world_to_pixel(pts, side_s, res)
    for a, b in zip(px[:-1], px[1:]):
        for r, c in _line(a[0], a[1], b[0], b[1]):
            img[r, c] = PATH_COLOR
    for r, c in px:
        img[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2] = MARKER_COLOR
    return img


def ppm_bytes(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(img))


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 pixmap")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def write_sidecar(image_path, style: str, vmin: float, vmax: float) -> Path:
    side = Path(str(image_path) + ".txt")
    side.write_text(f"style {style}\nvmin {vmin!r}\nvmax {vmax!r}\nlegend bottom {LEGEND_PX}px, low left to high right\n")
    return side
