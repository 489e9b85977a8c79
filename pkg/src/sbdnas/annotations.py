"""Shot annotation format, transition structure, raw-frame containers and
synthetic video generation.

Annotation text: one "<begin> <end>" pair of frame numbers per line, one
line per shot, in order.  Frame indices are 0-based throughout.  A hard
cut is two consecutive shots with begin_{k+1} == end_k + 1; any larger
gap is a gradual transition spanning [end_k, begin_{k+1} - 1] inclusive.

Raw frames travel in a simple binary container (magic "SBDF") instead of
a coded video stream: T, H, W as little-endian uint32 followed by
T*H*W*3 bytes of 8-bit RGB, frame-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class AnnotationError(ValueError):
    """Malformed annotation text or invalid shot structure."""


@dataclass(frozen=True)
class ShotAnnotation:
    """Ordered list of inclusive (begin, end) frame intervals."""

    shots: tuple[tuple[int, int], ...]

    def __post_init__(self):
        prev_end = None
        for k, (begin, end) in enumerate(self.shots):
            if begin < 0 or end < 0:
                raise AnnotationError(f"shot {k}: negative frame number ({begin}, {end})")
            if begin > end:
                raise AnnotationError(f"shot {k}: begin {begin} > end {end}")
            if prev_end is not None and begin <= prev_end:
                raise AnnotationError(
                    f"shot {k}: begins at {begin}, overlapping shot {k - 1} "
                    f"ending at {prev_end}")
            prev_end = end

    def __len__(self):
        return len(self.shots)


@dataclass(frozen=True)
class TransitionSpan:
    """One transition between consecutive shots, inclusive frame span."""

    kind: str  # "hard" | "gradual"
    lo: int
    hi: int

    def __post_init__(self):
        if self.kind not in ("hard", "gradual"):
            raise AnnotationError(f"transition kind must be hard|gradual, got {self.kind!r}")
        if self.kind == "hard" and self.lo != self.hi:
            raise AnnotationError("hard cuts span exactly one frame")
        if self.lo > self.hi:
            raise AnnotationError(f"span reversed: [{self.lo}, {self.hi}]")


def parse_annotation(text: str) -> ShotAnnotation:
    """Parse the two-integers-per-line shot format; blank lines ignored."""
    shots = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise AnnotationError(f"line {lineno}: expected two integers, got {line!r}")
        try:
            begin, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise AnnotationError(f"line {lineno}: non-integer token in {line!r}") from None
        if begin < 0 or end < 0:
            raise AnnotationError(f"line {lineno}: negative frame number")
        if begin > end:
            raise AnnotationError(f"line {lineno}: begin {begin} > end {end}")
        if shots and begin <= shots[-1][1]:
            raise AnnotationError(
                f"line {lineno}: shot ({begin}, {end}) overlaps previous "
                f"shot ending at {shots[-1][1]}")
        shots.append((begin, end))
    return ShotAnnotation(tuple(shots))


def write_annotation(ann: ShotAnnotation) -> str:
    """Canonical form: '%d %d\\n' per shot."""
    return "".join(f"{b} {e}\n" for b, e in ann.shots)


def derive_transitions(ann: ShotAnnotation) -> list[TransitionSpan]:
    """One span per consecutive shot pair.

    A gap of zero frames (begin == end+1) is a hard cut at the first
    shot's end frame; otherwise the gradual span runs from that end frame
    through the frame before the next shot begins.
    """
    spans = []
    for (b1, e1), (b2, e2) in zip(ann.shots, ann.shots[1:]):
        if b2 == e1 + 1:
            spans.append(TransitionSpan("hard", e1, e1))
        else:
            spans.append(TransitionSpan("gradual", e1, b2 - 1))
    return spans


# ---------------------------------------------------------------------------
# SBDF frame container

FRAME_MAGIC = b"SBDF"


def write_frames(path, frames: np.ndarray) -> None:
    """Write [T,H,W,3] uint8 RGB frames."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"expected [T,H,W,3] frames, got {frames.shape}")
    if frames.dtype != np.uint8:
        raise ValueError(f"frames must be uint8, got {frames.dtype}")
    t, h, w, _ = frames.shape
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<III", t, h, w))
        f.write(frames.tobytes())


def read_frames(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FRAME_MAGIC:
            raise ValueError(f"not an SBDF container (magic {magic!r})")
        t, h, w = struct.unpack("<III", f.read(12))
        payload = f.read()
    expected = t * h * w * 3
    if len(payload) != expected:
        raise ValueError(f"SBDF payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(t, h, w, 3).copy()


def downsample_frames(frames: np.ndarray, factor: int) -> np.ndarray:
    """Spatial stride-subsampling by `factor` (1 = unchanged)."""
    if factor <= 1:
        return frames
    return frames[:, ::factor, ::factor, :]


# ---------------------------------------------------------------------------
# synthetic videos


@dataclass
class SynthSpec:
    """Generation settings for one synthetic annotated video.

    Each shot is a solid base color plus a fixed Gaussian texture that
    drifts over time; gradual transitions are linear cross-fades.
    """

    n_shots: int = 5
    mean_shot_len: float = 65.0
    shot_len_sd: float = 20.0
    min_shot_len: int = 8
    max_shot_len: int = 400
    gradual_prob: float = 0.3
    fade_len_range: tuple[int, int] = (4, 12)
    height: int = 27
    width: int = 48
    texture_sd: float = 24.0
    drift_px: float = 1.0
    total_frames: int | None = None  # trims/extends the last shot when set

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("a synthetic video needs at least one shot")


class _ShotStyle:
    """Renderer for one shot: base color + drifting Gaussian texture."""

    def __init__(self, rng: np.random.Generator, h: int, w: int, texture_sd: float,
                 drift_px: float):
        self.base = rng.uniform(30, 225, size=3)
        self.texture = rng.normal(0.0, texture_sd, size=(h, w, 3))
        self.dy, self.dx = rng.uniform(-drift_px, drift_px, size=2)

    def frame(self, t: int) -> np.ndarray:
        shift_y = int(round(self.dy * t))
        shift_x = int(round(self.dx * t))
        tex = np.roll(self.texture, (shift_y, shift_x), axis=(0, 1))
        return np.clip(self.base + tex, 0, 255)


def synth_video(rng: np.random.Generator, spec: SynthSpec
                ) -> tuple[np.ndarray, ShotAnnotation]:
    """Generate (frames uint8 [T,H,W,3], annotation) for one video."""
    if spec.n_shots < 1:
        raise ValueError("a synthetic video needs at least one shot")
    lengths = []
    for _ in range(spec.n_shots):
        n = int(round(rng.normal(spec.mean_shot_len, spec.shot_len_sd)))
        lengths.append(int(np.clip(n, spec.min_shot_len, spec.max_shot_len)))
    fades = []
    for _ in range(spec.n_shots - 1):
        if rng.random() < spec.gradual_prob:
            fades.append(int(rng.integers(spec.fade_len_range[0],
                                          spec.fade_len_range[1] + 1)))
        else:
            fades.append(0)

    if spec.total_frames is not None:
        budget = spec.total_frames - sum(fades)
        if budget < spec.n_shots * spec.min_shot_len:
            raise ValueError("total_frames too small for the requested shots")
        scale = budget / sum(lengths)
        lengths = [max(spec.min_shot_len, int(l * scale)) for l in lengths]
        lengths[-1] += budget - sum(lengths)

    styles = [_ShotStyle(rng, spec.height, spec.width, spec.texture_sd, spec.drift_px)
              for _ in range(spec.n_shots)]

    frames = []
    shots = []
    cursor = 0
    for k in range(spec.n_shots):
        begin = cursor
        for t in range(lengths[k]):
            frames.append(styles[k].frame(t))
        cursor += lengths[k]
        shots.append((begin, cursor - 1))
        if k < spec.n_shots - 1 and fades[k] > 0:
            nxt = styles[k + 1]
            last = styles[k]
            for j in range(fades[k]):
                w = (j + 1) / (fades[k] + 1)
                frames.append((1.0 - w) * last.frame(lengths[k] + j) + w * nxt.frame(j))
            cursor += fades[k]
    arr = np.clip(np.stack(frames), 0, 255).astype(np.uint8)
    return arr, ShotAnnotation(tuple(shots))
