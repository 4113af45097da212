"""On-disk formats: HZT1 tensors, binary PPM/PGM images, dataset manifests.

HZT1: magic `HZT1`, u32 LE rank (always 4), four u32 LE dims (N,C,H,W),
then N*C*H*W little-endian float32 values in C order.

RGB images are 8-bit binary PPM (P6, maxval 255); structure maps are 16-bit
binary PGM (P5, maxval 65535, MSB first per Netpbm) with a JSON sidecar
`<path>.json` holding {"scale": units_per_level, "kind": "depth"|"disparity"}.
PGM level 0 marks an invalid pixel.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

HZT_MAGIC = b"HZT1"


# -- HZT1 ------------------------------------------------------------------------


def write_hzt(path, array: np.ndarray):
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim != 4:
        raise FormatError(f"HZT1 stores rank-4 tensors, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(HZT_MAGIC)
        f.write(struct.pack("<5I", 4, *arr.shape))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_hzt(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    return parse_hzt(data, str(path))


def parse_hzt(data: bytes, origin: str = "<bytes>") -> np.ndarray:
    if data[:4] != HZT_MAGIC:
        raise FormatError(f"{origin}: bad HZT1 magic {data[:4]!r}")
    if len(data) < 24:
        raise FormatError(f"{origin}: truncated HZT1 header")
    rank, n, c, h, w = struct.unpack("<5I", data[4:24])
    if rank != 4:
        raise FormatError(f"{origin}: HZT1 rank must be 4, got {rank}")
    count = n * c * h * w
    expected = 24 + 4 * count
    if len(data) != expected:
        raise FormatError(f"{origin}: HZT1 payload is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=24, count=count)
    return arr.reshape(n, c, h, w).astype(np.float32)


# -- PPM / PGM --------------------------------------------------------------------


def write_ppm(path, image: np.ndarray):
    """Write an HxWx3 float image in [0,1] as binary P6, quantized to 8 bits."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an HxWx3 image, got shape {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    magic, dims, data = _read_pnm(path)
    if magic != b"P6":
        raise FormatError(f"{path}: expected P6, got {magic!r}")
    w, h, maxval = dims
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    if len(data) != w * h * 3:
        raise FormatError(f"{path}: raster is {len(data)} bytes, expected {w * h * 3}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return (raw.astype(np.float32) / 255.0).copy()


def write_pgm16(path, values: np.ndarray, mask: np.ndarray, scale: float, kind: str):
    """Write a structure map as 16-bit P5 plus a JSON sidecar.

    Stored level = round(value / scale), clipped to [1, 65535] for valid
    pixels; invalid pixels get level 0.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 2:
        raise FormatError(f"PGM needs an HxW map, got shape {vals.shape}")
    levels = np.clip(np.rint(vals / scale), 1, 65535).astype(np.uint16)
    levels[~np.asarray(mask, dtype=bool)] = 0
    h, w = levels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(levels.astype(">u2").tobytes())
    with open(str(path) + ".json", "w") as f:
        json.dump({"scale": scale, "kind": kind}, f)
        f.write("\n")


def read_pgm16(path) -> tuple[np.ndarray, np.ndarray, float, str]:
    """Read a structure PGM; returns (values, valid mask, scale, kind)."""
    magic, dims, data = _read_pnm(path)
    if magic != b"P5":
        raise FormatError(f"{path}: expected P5, got {magic!r}")
    w, h, maxval = dims
    if maxval != 65535:
        raise FormatError(f"{path}: only maxval 65535 PGM supported, got {maxval}")
    if len(data) != w * h * 2:
        raise FormatError(f"{path}: raster is {len(data)} bytes, expected {w * h * 2}")
    sidecar = str(path) + ".json"
    try:
        with open(sidecar) as f:
            meta = json.load(f)
        scale = float(meta["scale"])
        kind = str(meta["kind"])
    except (OSError, KeyError, ValueError) as e:
        raise FormatError(f"{sidecar}: bad or missing structure sidecar ({e})") from e
    if kind not in ("depth", "disparity"):
        raise FormatError(f"{sidecar}: kind must be 'depth' or 'disparity', got {kind!r}")
    levels = np.frombuffer(data, dtype=">u2").reshape(h, w)
    mask = levels > 0
    values = levels.astype(np.float32) * np.float32(scale)
    return values, mask, scale, kind


def _read_pnm(path) -> tuple[bytes, tuple[int, int, int], bytes]:
    with open(path, "rb") as f:
        blob = f.read()
    magic = blob[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PNM header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    return magic, (fields[0], fields[1], fields[2]), blob[pos:]


# -- dataset manifests -------------------------------------------------------------


@dataclass
class SourceEntry:
    """One RGB-D source: paths are relative to the manifest's directory."""

    image: str
    structure: str
    kind: str  # "depth" | "disparity"
    split: str  # "train" | "val" | "test"

    def validate(self):
        if self.kind not in ("depth", "disparity"):
            raise FormatError(f"manifest kind must be depth|disparity, got {self.kind!r}")
        if self.split not in ("train", "val", "test"):
            raise FormatError(f"manifest split must be train|val|test, got {self.split!r}")


def load_manifest(path) -> list[SourceEntry]:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid manifest JSON ({e})") from e
    if not isinstance(raw, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    entries = []
    for i, rec in enumerate(raw):
        try:
            entry = SourceEntry(
                image=rec["image"], structure=rec["structure"], kind=rec["kind"], split=rec["split"]
            )
        except (TypeError, KeyError) as e:
            raise FormatError(f"{path}: entry {i} missing field {e}") from e
        entry.validate()
        entries.append(entry)
    return entries


def save_manifest(path, entries: list[SourceEntry]):
    recs = [
        {"image": e.image, "structure": e.structure, "kind": e.kind, "split": e.split}
        for e in entries
    ]
    with open(path, "w") as f:
        json.dump(recs, f, indent=1, sort_keys=True)
        f.write("\n")


def sha256_file(path) -> str:
    import hashlib

    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


__all__ = [
    "write_hzt",
    "read_hzt",
    "parse_hzt",
    "write_ppm",
    "read_ppm",
    "write_pgm16",
    "read_pgm16",
    "SourceEntry",
    "load_manifest",
    "save_manifest",
    "sha256_file",
    "HZT_MAGIC",
]
