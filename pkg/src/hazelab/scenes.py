"""Procedural desk-scale scene generator.

Scenes stand in for real RGB-D corpora: each one has a bright hue-constrained
sky band (depth pinned at the configured maximum), a receding ground plane,
textured green vegetation blobs, and arbitrary-color object blobs, all with a
depth field consistent with the layout.  The region/color correlations are
what the semantic modules can learn from.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .synthesis import SceneSource, StructureMap

_SCENE_TAG = 0x5C31

NEAR_DEPTH = 2.0
FAR_DEPTH = 30.0


def _hsv(rng, hue, sat, val) -> np.ndarray:
    return np.asarray(
        colorsys.hsv_to_rgb(rng.uniform(*hue), rng.uniform(*sat), rng.uniform(*val)),
        dtype=np.float32,
    )


def _ellipse_mask(h, w, cy, cx, ry, rx) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def generate_procedural_scene(
    seed: int, size: tuple[int, int] = (64, 64), max_depth: float = 50.0
) -> tuple[np.ndarray, StructureMap]:
    """Deterministic (RGB image, metric depth map) pair for a given seed."""
    h, w = size
    rng = np.random.default_rng(np.random.SeedSequence([_SCENE_TAG, seed]))

    horizon = max(2, int(h * rng.uniform(0.15, 0.35)))
    img = np.zeros((h, w, 3), dtype=np.float32)
    depth = np.zeros((h, w), dtype=np.float32)

    # Sky: bright, blue-constrained hue, slight vertical gradient, depth pinned.
    sky = _hsv(rng, (0.52, 0.65), (0.05, 0.35), (0.70, 0.95))
    grad = np.linspace(1.0, 0.88, horizon, dtype=np.float32)[:, None, None]
    img[:horizon] = sky[None, None, :] * grad
    depth[:horizon] = max_depth

    # Ground plane: brown-gray, perspective depth from FAR at the horizon to NEAR.
    ground = _hsv(rng, (0.04, 0.14), (0.10, 0.35), (0.35, 0.60))
    u = np.linspace(0.0, 1.0, h - horizon, dtype=np.float32)
    ground_depth = 1.0 / (1.0 / FAR_DEPTH + u * (1.0 / NEAR_DEPTH - 1.0 / FAR_DEPTH))
    img[horizon:] = ground[None, None, :]
    img[horizon:] *= (1.0 + 0.04 * rng.standard_normal((h - horizon, w, 1))).astype(np.float32)
    depth[horizon:] = ground_depth[:, None]

    def depth_at_row(row: int) -> float:
        row = int(np.clip(row, horizon, h - 1))
        return float(ground_depth[row - horizon])

    blobs = []
    for _ in range(rng.integers(2, 6)):  # vegetation
        base = int(rng.integers(horizon + 1, h))
        rx = rng.uniform(0.06, 0.2) * w
        ry = rng.uniform(0.08, 0.3) * h
        color = _hsv(rng, (0.22, 0.42), (0.45, 0.90), (0.25, 0.60))
        blobs.append((depth_at_row(base), base, rx, ry, color, 0.10))
    for _ in range(rng.integers(2, 7)):  # generic objects, arbitrary hue
        base = int(rng.integers(horizon + 1, h))
        rx = rng.uniform(0.04, 0.15) * w
        ry = rng.uniform(0.05, 0.2) * h
        color = _hsv(rng, (0.0, 1.0), (0.20, 1.0), (0.20, 0.95))
        blobs.append((depth_at_row(base), base, rx, ry, color, 0.03))

    # Paint far to near so closer blobs occlude.
    for d, base, rx, ry, color, texture in sorted(blobs, key=lambda b: -b[0]):
        cx = rng.uniform(0, w)
        mask = _ellipse_mask(h, w, base - ry * 0.8, cx, ry, rx)
        noise = 1.0 + texture * rng.standard_normal((h, w))
        for c in range(3):
            img[:, :, c] = np.where(mask, color[c] * noise, img[:, :, c])
        depth = np.where(mask, np.float32(min(d, FAR_DEPTH)), depth)

    np.clip(img, 0.0, 1.0, out=img)
    return img, StructureMap(depth, "depth")


class ProceduralSource(SceneSource):
    """Lazy procedural scene, regenerated on demand from its seed."""

    def __init__(self, seed: int, size: tuple[int, int] = (64, 64), max_depth: float = 50.0):
        self.seed = int(seed)
        self.size = tuple(size)
        self.max_depth = float(max_depth)
        self.name = f"proc{self.seed:06d}"

    def load(self):
        return generate_procedural_scene(self.seed, self.size, self.max_depth)


def procedural_sources(
    count: int, base_seed: int, size: tuple[int, int] = (64, 64), max_depth: float = 50.0
) -> list[ProceduralSource]:
    return [ProceduralSource(base_seed + i, size, max_depth) for i in range(count)]
