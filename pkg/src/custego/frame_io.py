"""Luma frame containers, Y4M/raw loading, CTU padding and synthetic frames."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import FormatError

CTU_SIZE = 64

# chroma plane subsampling (x, y) for the Y4M colour spaces we can skip over
_Y4M_CHROMA = {
    "420": (2, 2),
    "420jpeg": (2, 2),
    "420paldv": (2, 2),
    "420mpeg2": (2, 2),
    "422": (2, 1),
    "444": (1, 1),
    "mono": None,
}


def _y4m_frame_bytes(width: int, height: int, sub) -> int:
    if sub is None:
        return width * height
    sx, sy = sub
    return width * height + 2 * (-(-width // sx)) * (-(-height // sy))


@dataclass(frozen=True, eq=False)
class Frame:
    """One 8-bit luma plane, stored as a (height, width) uint8 array."""

    width: int
    height: int
    luma: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"invalid frame size {self.width}x{self.height}")
        luma = np.asarray(self.luma)
        if luma.size != self.width * self.height:
            raise ValueError("luma length does not match width*height")
        if luma.dtype != np.uint8:
            if luma.min() < 0 or luma.max() > 255:
                raise ValueError("luma samples must lie in [0, 255]")
            luma = luma.astype(np.uint8)
        luma = luma.reshape(self.height, self.width)
        luma.setflags(write=False)
        object.__setattr__(self, "luma", luma)

    @classmethod
    def from_array(cls, arr) -> "Frame":
        arr = np.asarray(arr)
        return cls(arr.shape[1], arr.shape[0], arr)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.luma, other.luma
        )

    __hash__ = None

    def crop(self, width: int, height: int) -> "Frame":
        return Frame.from_array(self.luma[:height, :width])


@dataclass
class VideoSequence:
    frames: list
    name: str = "video"

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a video needs at least one frame")
        dims = {(f.width, f.height) for f in self.frames}
        if len(dims) != 1:
            raise ValueError(f"frames have mixed dimensions: {sorted(dims)}")

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


def _parse_y4m_header(line: bytes) -> tuple:
    tokens = line.decode("ascii", errors="replace").split()
    if not tokens or tokens[0] != "YUV4MPEG2":
        raise FormatError("bad magic: not a YUV4MPEG2 stream")
    width = height = None
    colorspace = "420"
    for tok in tokens[1:]:
        if tok[0] == "W":
            width = int(tok[1:])
        elif tok[0] == "H":
            height = int(tok[1:])
        elif tok[0] == "C":
            colorspace = tok[1:]
    if not width or not height:
        raise FormatError("Y4M header lacks positive W/H")
    # Cmono, C420p10 etc: only 8-bit spaces are accepted
    if colorspace not in _Y4M_CHROMA:
        raise FormatError(f"unsupported Y4M colour space C{colorspace}")
    return width, height, _Y4M_CHROMA[colorspace]


def _read_y4m(data: bytes, name: str, max_frames=None) -> VideoSequence:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("Y4M header is not terminated")
    width, height, sub = _parse_y4m_header(data[:nl])
    frame_bytes = _y4m_frame_bytes(width, height, sub)
    luma_bytes = width * height
    pos = nl + 1
    frames = []
    while pos < len(data):
        if max_frames is not None and len(frames) >= max_frames:
            break
        nl = data.find(b"\n", pos)
        if nl < 0 or not data[pos:nl].startswith(b"FRAME"):
            raise FormatError(f"malformed FRAME marker at byte {pos}")
        pos = nl + 1
        if pos + frame_bytes > len(data):
            raise FormatError(f"truncated frame {len(frames)}")
        plane = np.frombuffer(data, np.uint8, luma_bytes, pos)
        frames.append(Frame(width, height, plane.copy()))
        pos += frame_bytes
    if not frames:
        raise FormatError("Y4M stream has no frames")
    return VideoSequence(frames, name)


def _read_raw(data: bytes, name: str, width, height, chroma, max_frames=None) -> VideoSequence:
    if not width or not height or width <= 0 or height <= 0:
        raise FormatError("raw input needs positive --width and --height")
    luma_bytes = width * height
    sizes = {"420": _y4m_frame_bytes(width, height, (2, 2)), "400": luma_bytes}
    if chroma is None:
        # prefer 4:2:0 when both layouts divide the file evenly
        if data and len(data) % sizes["420"] == 0:
            chroma = "420"
        elif data and len(data) % sizes["400"] == 0:
            chroma = "400"
        else:
            raise FormatError(
                f"truncated frame: {len(data)} bytes is not a whole number of "
                f"{width}x{height} frames"
            )
    frame_bytes = sizes[chroma]
    if not data or len(data) % frame_bytes:
        raise FormatError(f"truncated frame: {len(data)} bytes for {frame_bytes}-byte frames")
    n = len(data) // frame_bytes
    if max_frames is not None:
        n = min(n, max_frames)
    frames = [
        Frame(width, height, np.frombuffer(data, np.uint8, luma_bytes, i * frame_bytes).copy())
        for i in range(n)
    ]
    return VideoSequence(frames, name)


def load_video(path, format=None, width=None, height=None, chroma=None, max_frames=None) -> VideoSequence:
    """Load the luma planes of a Y4M or headerless planar file.

    ``format`` is ``"y4m"`` or ``"raw"``; when omitted it is guessed from the
    extension. Raw files need explicit ``width``/``height``; ``chroma`` may be
    ``"420"`` or ``"400"`` (luma only) and is auto-detected from the file
    size otherwise. Chroma bytes are always skipped.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if format is None:
        format = "y4m" if path.lower().endswith(".y4m") else "raw"
    name = os.path.splitext(os.path.basename(path))[0]
    if format == "y4m":
        return _read_y4m(data, name, max_frames)
    if format == "raw":
        return _read_raw(data, name, width, height, chroma, max_frames)
    raise ValueError(f"unknown format {format!r}")


def write_y4m(path, frames, fps: int = 30) -> None:
    """Write luma frames as 4:2:0 Y4M with neutral chroma."""
    frames = list(frames)
    w, h = frames[0].width, frames[0].height
    chroma = bytes([128]) * (2 * ((w + 1) // 2) * ((h + 1) // 2))
    with open(path, "wb") as fh:
        fh.write(f"YUV4MPEG2 W{w} H{h} F{fps}:1 Ip A1:1 C420jpeg\n".encode())
        for f in frames:
            fh.write(b"FRAME\n")
            fh.write(f.luma.tobytes())
            fh.write(chroma)


def write_raw(path, frames) -> None:
    """Write luma-only planar frames back to back."""
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(f.luma.tobytes())


def pad_to_ctu(frame: Frame, ctu: int = CTU_SIZE) -> Frame:
    """Round both dimensions up to a multiple of ``ctu`` by edge replication."""
    pad_h = -frame.height % ctu
    pad_w = -frame.width % ctu
    if not pad_h and not pad_w:
        return frame
    return Frame.from_array(np.pad(frame.luma, ((0, pad_h), (0, pad_w)), mode="edge"))


def _scene(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    # smooth background + a few hard-edged textured shapes + mild grain
    img = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (height, width)), sigma=max(width, height) / 10)
    img = 128 + 70 * img / (np.abs(img).max() + 1e-9)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(2, 5)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        r = rng.uniform(0.08, 0.3) * min(width, height)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        level = rng.uniform(30, 225)
        texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (height, width)), sigma=rng.uniform(0.6, 2.0))
        img[mask] = level + rng.uniform(5, 40) * texture[mask] / (texture.std() + 1e-9)
    for _ in range(rng.integers(1, 4)):
        x0, y0 = rng.integers(0, width), rng.integers(0, height)
        x1 = min(width, x0 + rng.integers(8, max(9, width // 2)))
        y1 = min(height, y0 + rng.integers(8, max(9, height // 2)))
        img[y0:y1, x0:x1] = rng.uniform(20, 235) + 6 * np.sin(xx[y0:y1, x0:x1] * rng.uniform(0.2, 1.5))
    img += rng.normal(0.0, 1.5, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_frame(kind: str, width: int, height: int, *, value: int = 128, period: int = 8, seed: int = 0) -> Frame:
    """Deterministic test pattern.

    kinds: ``flat`` (constant ``value``), ``gradient`` (diagonal ramp),
    ``checker`` (``period``-pixel 0/255 tiles), ``noise`` (uniform, seeded)
    and ``scene`` (seeded natural-looking content with smooth areas, edges
    and texture).
    """
    if width <= 0 or height <= 0 or width % 8 or height % 8:
        raise ValueError(f"frame size must be a positive multiple of 8, got {width}x{height}")
    if kind == "flat":
        if not 0 <= value <= 255:
            raise ValueError("flat value must be in [0, 255]")
        arr = np.full((height, width), value, np.uint8)
    elif kind == "gradient":
        yy, xx = np.mgrid[0:height, 0:width]
        arr = np.floor(255 * (xx + yy) / max(1, width + height - 2)).astype(np.uint8)
    elif kind == "checker":
        yy, xx = np.mgrid[0:height, 0:width]
        arr = np.where(((xx // period) + (yy // period)) % 2 == 0, 0, 255).astype(np.uint8)
    elif kind == "noise":
        arr = np.random.default_rng(seed).integers(0, 256, (height, width), dtype=np.uint8)
    elif kind == "scene":
        arr = _scene(width, height, np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return Frame.from_array(arr)


def synth_video(width: int, height: int, n_frames: int, seed: int = 0, pan: tuple = (2, 1), name=None) -> VideoSequence:
    """A panning crop over one larger seeded scene, so frames are correlated."""
    margin_x = abs(pan[0]) * n_frames + 8
    margin_y = abs(pan[1]) * n_frames + 8
    canvas = synth_frame("scene", width + margin_x + (-margin_x % 8), height + margin_y + (-margin_y % 8), seed=seed).luma
    frames = []
    for i in range(n_frames):
        x0 = pan[0] * i if pan[0] >= 0 else margin_x + pan[0] * i
        y0 = pan[1] * i if pan[1] >= 0 else margin_y + pan[1] * i
        frames.append(Frame.from_array(canvas[y0 : y0 + height, x0 : x0 + width].copy()))
    return VideoSequence(frames, name or f"scene{seed}")


def synthetic_corpus(n_videos: int, n_frames: int, width: int = 64, height: int = 64, seed: int = 0) -> list:
    """``n_videos`` independent panning scenes with names ``scene<seed>``."""
    out = []
    for v in range(n_videos):
        rng = np.random.default_rng([seed, v])
        pan = (int(rng.integers(-3, 4)), int(rng.integers(-2, 3)))
        out.append(synth_video(width, height, n_frames, seed=seed * 1000 + v, pan=pan))
    return out


_SYNTH_SPEC = re.compile(r"^(flat|gradient|checker|noise|scene)(?::(\d+))?$")


def parse_synth_spec(spec: str) -> dict:
    """``"flat:100"`` -> kwargs for :func:`synth_frame` (CLI helper)."""
    m = _SYNTH_SPEC.match(spec)
    if not m:
        raise ValueError(f"bad synthetic spec {spec!r}")
    kind, arg = m.groups()
    kw = {"kind": kind}
    if arg is not None:
        kw[{"flat": "value", "checker": "period"}.get(kind, "seed")] = int(arg)
    return kw
