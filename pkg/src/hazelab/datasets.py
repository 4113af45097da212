"""File-backed scene sources and dataset emission.

A source manifest lists RGB-D inputs (PPM image + 16-bit PGM or HZT1
structure).  Loading prepares each source the way the haze pipeline expects:
disparity sources are margin-cropped first, remaining invalid pixels are
filled by nearest-neighbor assignment, and everything is resized to the
working resolution.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .formats import (
    SourceEntry,
    load_manifest,
    read_pgm16,
    read_ppm,
    save_manifest,
    write_hzt,
    write_pgm16,
    write_ppm,
)
from .scenes import ProceduralSource, procedural_sources
from .synthesis import (
    HazeParams,
    SceneSource,
    StructureMap,
    crop_margins,
    fill_occlusions_nearest,
    resize_bilinear,
    resize_structure,
)

DEPTH_PGM_SCALE = 0.001  # meters per level; 16 bits cover 65.5 m


class FileSource(SceneSource):
    def __init__(
        self,
        entry: SourceEntry,
        root: Path,
        size: tuple[int, int],
        crop_left: float = 0.15,
        crop_bottom: float = 0.2,
    ):
        self.entry = entry
        self.root = Path(root)
        self.size = tuple(size)
        self.crop_left = crop_left
        self.crop_bottom = crop_bottom
        self.name = Path(entry.image).stem
        self.kind = entry.kind

    def load(self):
        image = read_ppm(self.root / self.entry.image)
        spath = self.root / self.entry.structure
        if str(spath).endswith(".hzt"):
            from .formats import read_hzt

            values = read_hzt(spath)[0, 0]
            structure = StructureMap(values, self.entry.kind)
        else:
            values, mask, _scale, kind = read_pgm16(spath)
            if kind != self.entry.kind:
                raise FormatError(
                    f"{spath}: sidecar kind {kind!r} contradicts manifest kind {self.entry.kind!r}"
                )
            structure = StructureMap(values, kind, mask)
        if image.shape[:2] != structure.shape:
            raise FormatError(
                f"{self.entry.image}: image {image.shape[:2]} and structure "
                f"{structure.shape} sizes differ"
            )
        if structure.kind == "disparity" and (self.crop_left or self.crop_bottom):
            image, structure = crop_margins(image, structure, self.crop_left, self.crop_bottom)
        if not structure.mask.all():
            structure = fill_occlusions_nearest(structure)
        if image.shape[:2] != self.size:
            image = resize_bilinear(image, self.size)
            structure = resize_structure(structure, self.size)
        return image, structure


def manifest_sources(
    manifest_path,
    split: str,
    size: tuple[int, int],
    crop_left: float = 0.15,
    crop_bottom: float = 0.2,
) -> list[FileSource]:
    manifest_path = Path(manifest_path)
    entries = [e for e in load_manifest(manifest_path) if e.split == split]
    return [
        FileSource(e, manifest_path.parent, size, crop_left, crop_bottom) for e in entries
    ]


# -- procedural source emission -----------------------------------------------------

# Disjoint seed blocks so train/val/test scenes never repeat.
SPLIT_SEED_OFFSETS = {"train": 0, "val": 100_000, "test": 200_000}


def split_procedural_sources(
    counts: dict[str, int], base_seed: int, size: tuple[int, int], max_depth: float = 50.0
) -> dict[str, list[ProceduralSource]]:
    return {
        split: procedural_sources(
            counts.get(split, 0), base_seed + SPLIT_SEED_OFFSETS[split], size, max_depth
        )
        for split in ("train", "val", "test")
    }


def write_procedural_sources(
    out_dir, counts: dict[str, int], base_seed: int, size: tuple[int, int], max_depth: float = 50.0
) -> Path:
    """Emit procedural scenes as PPM+PGM files plus a manifest; returns its path."""
    out = Path(out_dir)
    (out / "sources").mkdir(parents=True, exist_ok=True)
    entries = []
    for split, sources in split_procedural_sources(counts, base_seed, size, max_depth).items():
        for src in sources:
            image, structure = src.load()
            image_rel = f"sources/{src.name}.ppm"
            struct_rel = f"sources/{src.name}_depth.pgm"
            write_ppm(out / image_rel, image)
            write_pgm16(out / struct_rel, structure.values, structure.mask, DEPTH_PGM_SCALE, "depth")
            entries.append(
                SourceEntry(image=image_rel, structure=struct_rel, kind="depth", split=split)
            )
    manifest_path = out / "manifest.json"
    save_manifest(manifest_path, entries)
    return manifest_path


# -- static hazy set emission ---------------------------------------------------------


def write_static_set(out_dir, sources, protocol: str, seed: int, betas=None) -> Path:
    """Write hazy/clean/transmission triples for a protocol; returns samples.json path."""
    from .evaluate import iter_protocol_samples

    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    records = []
    count = 0
    for sample in iter_protocol_samples(sources, protocol, seed, betas):
        stem = sample.sample_id.replace("|", "_")
        hazy_rel = f"samples/{stem}_hazy.ppm"
        clean_rel = f"samples/{stem}_clean.ppm"
        t_rel = f"samples/{stem}_t.hzt"
        write_ppm(out / hazy_rel, sample.hazy)
        write_ppm(out / clean_rel, sample.clean)
        write_hzt(out / t_rel, sample.transmission[None, None, :, :])
        records.append(
            {
                "id": sample.sample_id,
                "hazy": hazy_rel,
                "clean": clean_rel,
                "transmission": t_rel,
                "beta": sample.beta,
                "illumination": [float(v) for v in sample.illumination],
            }
        )
        count += 1
    index_path = out / "samples.json"
    with open(index_path, "w") as f:
        json.dump({"protocol": protocol, "seed": seed, "count": count, "samples": records},
                  f, indent=1, sort_keys=True)
        f.write("\n")
    return index_path
