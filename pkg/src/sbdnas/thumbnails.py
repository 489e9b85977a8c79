"""Thumbnail contact sheets: 48x27 tiles, adaptive frame numbers, PPM out.

Frames are bilinearly resized to thumb size and tiled row-major.  Each
tile gets its frame number drawn in the upper-left corner with a 3x5
bitmap font; the digit color adapts to the underlying pixels (light text
on dark regions, dark text on light regions, threshold 128 on the mean
luminance of the digit region).  Ground-truth and predicted boundaries
tint the tile border: pink for annotation only, cyan for prediction
only, white where both agree.  Output is a binary PPM (P6), byte-exact
for a given input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import ShotAnnotation, derive_transitions

# 3x5 digit bitmaps, rows top to bottom, 3 bits per row (MSB = left pixel)
_DIGITS = {
    "0": (0b111, 0b101, 0b101, 0b101, 0b111),
    "1": (0b010, 0b110, 0b010, 0b010, 0b111),
    "2": (0b111, 0b001, 0b111, 0b100, 0b111),
    "3": (0b111, 0b001, 0b111, 0b001, 0b111),
    "4": (0b101, 0b101, 0b111, 0b001, 0b001),
    "5": (0b111, 0b100, 0b111, 0b001, 0b111),
    "6": (0b111, 0b100, 0b111, 0b101, 0b111),
    "7": (0b111, 0b001, 0b010, 0b010, 0b010),
    "8": (0b111, 0b101, 0b111, 0b101, 0b111),
    "9": (0b111, 0b101, 0b111, 0b001, 0b111),
}

LIGHT = np.array([255, 255, 255], dtype=np.uint8)
DARK = np.array([0, 0, 0], dtype=np.uint8)
TINT_GT = np.array([255, 0, 255], dtype=np.uint8)      # pink: annotation only
TINT_PRED = np.array([0, 255, 255], dtype=np.uint8)    # cyan: prediction only
TINT_BOTH = np.array([255, 255, 255], dtype=np.uint8)  # light: both agree


@dataclass
class ThumbnailConfig:
    thumb_width: int = 48
    thumb_height: int = 27
    per_row: int = 10
    gutter: int = 0
    digit_origin: tuple[int, int] = (1, 1)  # (row, col) of the number block
    luminance_threshold: float = 128.0
    border: int = 2  # tint border thickness


def resize_bilinear(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resampling to (out_h, out_w); returns float64."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    if (h, w) == (out_h, out_w):
        return frame.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = frame[y0][:, x0] * (1 - wx) + frame[y0][:, x1] * wx
    bot = frame[y1][:, x0] * (1 - wx) + frame[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _digit_block_size(text: str) -> tuple[int, int]:
    return 5, 4 * len(text) - 1  # 3 px per digit + 1 px spacing


def _draw_number(tile: np.ndarray, index: int, cfg: ThumbnailConfig) -> None:
    text = str(index)
    r0, c0 = cfg.digit_origin
    bh, bw = _digit_block_size(text)
    r1 = min(r0 + bh, tile.shape[0])
    c1 = min(c0 + bw, tile.shape[1])
    region = tile[r0:r1, c0:c1].astype(np.float64)
    color = LIGHT if region.mean() < cfg.luminance_threshold else DARK
    for k, ch in enumerate(text):
        rows = _DIGITS[ch]
        base_c = c0 + 4 * k
        for dr, bits in enumerate(rows):
            for dc in range(3):
                if bits & (0b100 >> dc):
                    rr, cc = r0 + dr, base_c + dc
                    if rr < tile.shape[0] and cc < tile.shape[1]:
                        tile[rr, cc] = color


def _tint_border(tile: np.ndarray, color: np.ndarray, border: int) -> None:
    b = border
    tile[:b, :] = (tile[:b, :].astype(np.uint16) + color) // 2
    tile[-b:, :] = (tile[-b:, :].astype(np.uint16) + color) // 2
    tile[:, :b] = (tile[:, :b].astype(np.uint16) + color) // 2
    tile[:, -b:] = (tile[:, -b:].astype(np.uint16) + color) // 2


def _boundary_frame_sets(n_frames: int, annotation: ShotAnnotation | None,
                         predictions) -> tuple[set, set]:
    gt = set()
    if annotation is not None:
        for span in derive_transitions(annotation):
            gt.update(range(span.lo, min(span.hi, n_frames - 1) + 1))
    pred = set()
    if predictions is not None:
        for f in predictions:
            f = int(f)
            if 0 <= f < n_frames:
                pred.add(f)
    return gt, pred


def render_thumbnail(frames: np.ndarray, annotation: ShotAnnotation | None = None,
                     predictions=None, cfg: ThumbnailConfig | None = None) -> bytes:
    """Render a contact sheet as binary PPM (P6) bytes.

    frames: [T,H,W,3] with values in [0,255]; predictions: iterable of
    detected boundary end-frame indices.
    """
    cfg = cfg or ThumbnailConfig()
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3 or len(frames) == 0:
        raise ValueError(f"render_thumbnail needs non-empty [T,H,W,3] frames, "
                         f"got {frames.shape}")
    T = len(frames)
    gt, pred = _boundary_frame_sets(T, annotation, predictions)

    th, tw, g = cfg.thumb_height, cfg.thumb_width, cfg.gutter
    rows = (T + cfg.per_row - 1) // cfg.per_row
    height = rows * th + (rows - 1) * g
    width = cfg.per_row * tw + (cfg.per_row - 1) * g
    canvas = np.zeros((height, width, 3), dtype=np.uint8)

    for i in range(T):
        tile = np.clip(resize_bilinear(frames[i], th, tw), 0, 255).astype(np.uint8)
        if i in gt and i in pred:
            _tint_border(tile, TINT_BOTH, cfg.border)
        elif i in gt:
            _tint_border(tile, TINT_GT, cfg.border)
        elif i in pred:
            _tint_border(tile, TINT_PRED, cfg.border)
        _draw_number(tile, i, cfg)
        r, c = divmod(i, cfg.per_row)
        y = r * (th + g)
        x = c * (tw + g)
        canvas[y:y + th, x:x + tw] = tile

    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + canvas.tobytes()
