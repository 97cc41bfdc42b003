"""Reader and writer for ENVI-style header/binary cube pairs.

The header is a line-oriented ``key = value`` text file; brace-delimited
values such as the wavelength list may span several lines. Payloads are
flat binary in bsq, bil or bip order and are converted to band-last
arrays on load.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .cube import HyperCube, RawFrame, WavelengthAxis

# ENVI data type codes
DTYPES = {
    1: np.uint8,
    2: np.int16,
    3: np.int32,
    4: np.float32,
    5: np.float64,
    12: np.uint16,
    13: np.uint32,
}
DTYPE_CODES = {np.dtype(v): k for k, v in DTYPES.items()}

REQUIRED_KEYS = ("samples", "lines", "bands", "data type", "interleave")


class EnviError(ValueError):
    pass


class MissingHeaderKey(EnviError):
    pass


class PayloadSizeError(EnviError):
    pass


class UnknownInterleave(EnviError):
    pass


PAYLOAD_SUFFIXES = (".bin", ".raw", ".dat", ".img", "")


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix.lower() == ".hdr":
        for suffix in PAYLOAD_SUFFIXES:
            cand = p.with_suffix(suffix)
            if cand.exists():
                return p, cand
        return p, p.with_suffix(".bin")
    hdr = p.with_suffix(".hdr")
    alt = Path(str(p) + ".hdr")
    if not hdr.exists() and alt.exists():
        hdr = alt
    return hdr, p


def header_path(path) -> Path:
    return _paths(path)[0]


def parse_header(text: str) -> dict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise EnviError("header must start with the line 'ENVI'")
    body = "\n".join(lines[1:])
    out = {}
    for m in re.finditer(r"^\s*([^=\n]+?)\s*=\s*(\{[^}]*\}|[^\n]*)", body, re.M):
        key = m.group(1).strip().lower()
        val = m.group(2).strip()
        if val.startswith("{"):
            val = val[1:-1].strip()
        out[key] = val
    return out


def read_header(path) -> dict:
    hdr, _ = _paths(path)
    return parse_header(Path(hdr).read_text())


def _axis_from_header(h: dict, bands: int) -> WavelengthAxis:
    if "wavelength" not in h:
        return WavelengthAxis(np.arange(bands, dtype=np.float64))
    wl = [float(s) for s in h["wavelength"].replace("\n", " ").split(",") if s.strip()]
    if len(wl) != bands:
        raise EnviError(f"header declares {bands} bands but lists {len(wl)} wavelengths")
    return WavelengthAxis(np.array(wl))


def load_cube(path, kind: str | None = None):
    """Load ``path`` (either the header or the payload file).

    Float payloads become :class:`HyperCube`, integer payloads
    :class:`RawFrame`, unless ``kind`` ("cube" or "raw") overrides it.
    """
    hdr_path, data_path = _paths(path)
    h = read_header(hdr_path)
    for key in REQUIRED_KEYS:
        if key not in h:
            raise MissingHeaderKey(f"header {hdr_path} is missing '{key}'")
    samples, lines, bands = int(h["samples"]), int(h["lines"]), int(h["bands"])
    code = int(h["data type"])
    if code not in DTYPES:
        raise EnviError(f"unsupported data type {code}")
    interleave = h["interleave"].strip().lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise UnknownInterleave(f"unknown interleave '{interleave}'")
    axis = _axis_from_header(h, bands)

    dtype = np.dtype(DTYPES[code])
    byte_order = int(h.get("byte order", 0))
    dtype = dtype.newbyteorder(">" if byte_order == 1 else "<")
    offset = int(h.get("header offset", 0))
    nbytes = os.path.getsize(data_path) - offset
    expected = samples * lines * bands * dtype.itemsize
    if nbytes != expected:
        raise PayloadSizeError(
            f"payload {data_path} has {nbytes} bytes, header implies {expected}"
        )
    flat = np.fromfile(data_path, dtype=dtype, offset=offset)
    if interleave == "bsq":
        data = flat.reshape(bands, lines, samples).transpose(1, 2, 0)
    elif interleave == "bil":
        data = flat.reshape(lines, bands, samples).transpose(0, 2, 1)
    else:
        data = flat.reshape(lines, samples, bands)
    data = np.ascontiguousarray(data).astype(dtype.newbyteorder("="), copy=False)

    if kind is None:
        kind = "cube" if np.issubdtype(dtype, np.floating) else "raw"
    if kind == "raw":
        return RawFrame(data, axis)
    return HyperCube(data, axis)


def save_cube(cube, path, interleave: str = "bsq", dtype=None, description: str = ""):
    """Write ``cube`` as a header/payload pair.

    Calibrated cubes default to little-endian float32, raw frames to uint16.
    """
    hdr_path, data_path = _paths(path)
    if dtype is None:
        dtype = np.uint16 if isinstance(cube, RawFrame) else np.float32
    dtype = np.dtype(dtype)
    if dtype not in DTYPE_CODES:
        raise EnviError(f"cannot store dtype {dtype}")
    interleave = interleave.lower()
    data = np.asarray(cube.data).astype(dtype.newbyteorder("<"))
    if interleave == "bsq":
        payload = data.transpose(2, 0, 1)
    elif interleave == "bil":
        payload = data.transpose(0, 2, 1)
    elif interleave == "bip":
        payload = data
    else:
        raise UnknownInterleave(f"unknown interleave '{interleave}'")
    lines, samples, bands = data.shape
    wl = ", ".join(repr(float(v)) for v in cube.axis.values)
    text = (
        "ENVI\n"
        f"description = {{{description}}}\n"
        f"samples = {samples}\n"
        f"lines = {lines}\n"
        f"bands = {bands}\n"
        "header offset = 0\n"
        "file type = ENVI Standard\n"
        f"data type = {DTYPE_CODES[dtype]}\n"
        f"interleave = {interleave}\n"
        "byte order = 0\n"
        "wavelength units = Nanometers\n"
        f"wavelength = {{{wl}}}\n"
    )
    Path(data_path).parent.mkdir(parents=True, exist_ok=True)
    Path(hdr_path).write_text(text)
    np.ascontiguousarray(payload).tofile(data_path)
    return hdr_path, data_path
