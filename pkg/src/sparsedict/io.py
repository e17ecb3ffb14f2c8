"""Artifact serialization, CSV export and image files.

Binary layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"SPDA"
    4       2     format version (1)
    6       1     kind: 1 dictionary, 2 code matrix, 3 grey image
    7       1     flags: bit 0 set if an undercomplete dictionary is allowed
    8       8     rows
    16      8     cols
    24      8*r*c float64 payload, column-major

A dictionary is stored as its ``m x n`` atom matrix, a code matrix as
``n_atoms x n_patches`` and an image as ``height x width``.
"""

import csv
import io
import os
import struct
import sys

import numpy as np
from PIL import Image, UnidentifiedImageError

from .types import Dictionary, FormatError, GrayImage

MAGIC = b"SPDA"
VERSION = 1
HEADER = struct.Struct("<4sHBBQQ")
KIND_DICTIONARY, KIND_CODES, KIND_IMAGE = 1, 2, 3
_KINDS = {KIND_DICTIONARY: "dictionary", KIND_CODES: "code matrix", KIND_IMAGE: "image"}

LUMA = (0.299, 0.587, 0.114)


def to_bytes(obj):
    """Serialize a :class:`Dictionary`, :class:`GrayImage` or 2-d code matrix."""
    flags = 0
    if isinstance(obj, Dictionary):
        kind, arr = KIND_DICTIONARY, obj.atoms
        flags = int(obj.allow_undercomplete)
    elif isinstance(obj, GrayImage):
        kind, arr = KIND_IMAGE, obj.pixels
    else:
        kind, arr = KIND_CODES, np.asarray(obj, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"code matrix must be 2-d, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("code matrix contains non-finite entries")
    rows, cols = arr.shape
    head = HEADER.pack(MAGIC, VERSION, kind, flags, rows, cols)
    return head + np.asarray(arr, dtype="<f8").tobytes(order="F")


def from_bytes(buf, expect=None):
    """Inverse of :func:`to_bytes`. ``expect`` optionally names the required kind."""
    buf = bytes(buf)
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated stream: {len(buf)} bytes, header needs {HEADER.size}")
    magic, version, kind, flags, rows, cols = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if kind not in _KINDS:
        raise FormatError(f"unknown artifact kind {kind}")
    if expect is not None and kind != expect:
        raise FormatError(f"expected a {_KINDS[expect]}, found a {_KINDS[kind]}")
    if rows * cols * 8 > sys.maxsize:
        raise FormatError(f"dimensions {rows}x{cols} overflow")
    need = HEADER.size + rows * cols * 8
    if len(buf) < need:
        raise FormatError(f"truncated stream: {len(buf)} bytes, {rows}x{cols} needs {need}")
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype="<f8", offset=HEADER.size).reshape((rows, cols), order="F")
    arr = arr.astype(np.float64)
    try:
        if kind == KIND_DICTIONARY:
            return Dictionary(arr, allow_undercomplete=bool(flags & 1))
        if kind == KIND_IMAGE:
            return GrayImage(arr)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return arr


def save(path, obj):
    with open(path, "wb") as fh:
        fh.write(to_bytes(obj))


def load(path, expect=None):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), expect)


def matrix_csv(M, prefix="atom"):
    """CSV text with one column per matrix column (atom or patch), header first."""
    M = M.atoms if isinstance(M, Dictionary) else np.asarray(M, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{prefix}_{j}" for j in range(M.shape[1])])
    for row in M:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _decode(source):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source))
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return io.BytesIO(fh.read())
    return source


def load_image_grayscale(source):
    """Decode PGM, PNG or any Pillow-readable stream into a :class:`GrayImage`.

    Colour input is reduced to luminance ``0.299 R + 0.587 G + 0.114 B`` in
    floating point, without rounding. 16-bit grey input is rescaled to [0, 255].
    """
    try:
        with Image.open(_decode(source)) as im:
            im.load()
            if im.mode in ("L", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            elif im.mode.startswith("I"):
                raw = np.asarray(im, dtype=np.float64)
                arr = raw * (255.0 / 65535.0)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = rgb @ np.array(LUMA)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"cannot decode image: {exc}") from exc
    return GrayImage(arr)


def quantize(img):
    """Clamp to [0, 255] and round to 8-bit; only used when writing files."""
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(px), 0, 255).astype(np.uint8)


def pgm_bytes(img):
    """Binary (P5) 8-bit PGM encoding."""
    out = io.BytesIO()
    Image.fromarray(quantize(img), mode="L").save(out, format="PPM")
    return out.getvalue()


def write_pgm(path, img):
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))
