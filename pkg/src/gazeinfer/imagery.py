"""Image ingestion and the plain-text heatmap format.

Images enter the package as channel-first float32 RGB in [0, 1]; grayscale
sources are replicated to three channels.  PNG and binary PPM/PGM are read
through Pillow.  Heatmaps leave the package as 8-bit binary PGM with the
run configuration echoed in header comments, which diffs cleanly and needs
no codec to inspect.
"""

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeMismatchError


def read_image(path) -> np.ndarray:
    """Load a PNG or binary PPM/PGM as (3, H, W) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):  # Pillow reports PGM/PPM as PPM
                raise FormatError(f"{path}: unsupported image format {im.format}")
            if im.mode not in ("RGB", "L"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except FileNotFoundError:
        raise
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot decode image: {exc}") from exc
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr, dtype=np.float32) / 255.0


def image_extents(path):
    """(width, height) from the header without decoding pixel data."""
    try:
        with Image.open(path) as im:
            return im.size
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot read image header: {exc}") from exc


def write_image(path, rgb01) -> None:
    """Store a (3, H, W) float image in [0, 1] as 8-bit PNG."""
    x = np.asarray(rgb01, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeMismatchError(f"write_image expects (3, H, W), got {x.shape}")
    u8 = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def write_pgm(path, map2d, comments=()) -> None:
    """Write a 2-D map as binary PGM (P5), minmax-scaled to 0..255.

    Each entry of ``comments`` becomes a ``#`` header line, so the file
    carries its own provenance.  Constant maps come out all zero.
    """
    m = np.asarray(map2d, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"write_pgm expects a 2-D map, got {m.shape}")
    lo, hi = float(m.min()), float(m.max())
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    u8 = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        for line in comments:
            text = str(line).replace("\n", " ")
            fh.write(f"# {text}\n".encode("utf-8"))
        fh.write(f"{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def read_pgm(path):
    """Parse a binary PGM written by :func:`write_pgm`.

    Returns (array uint8 H×W, comment list).  Handles arbitrary whitespace
    and ``#`` comments in the header, per the format definition.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (bad magic)")
    comments = []
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            end = data.index(b"\n", pos)
            comments.append(data[pos + 1 : end].decode("utf-8").strip())
            pos = end + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = data[pos : pos + w * h]
    if len(pixels) != w * h:
        raise FormatError(f"{path}: PGM payload is {len(pixels)} bytes, header says {w * h}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w), comments
