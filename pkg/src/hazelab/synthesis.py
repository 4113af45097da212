"""Hazy/clean pair synthesis from RGB-D sources.

The physical model: I = J*t + A*(1-t) with t = exp(-beta*d) for metric depth
and t = exp(-beta/D) for disparity (D=0 maps to t=0, the infinite-depth sky
convention).  Illumination colors are drawn in HSV and converted with the
standard hexcone formula.

Every random draw is keyed by SeedSequence([seed, role, epoch, image, beta]),
so sample content is independent of iteration scheduling.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, ShapeError

# role tags for the per-sample seed streams
_ROLE_SAMPLE = 0
_ROLE_ORDER = 1


@dataclass
class StructureMap:
    """Scene structure: metric depth in meters or stereo disparity."""

    values: np.ndarray  # HxW float32
    kind: str  # "depth" | "disparity"
    mask: np.ndarray = None  # HxW bool, True where trusted

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeError(f"structure map must be HxW, got shape {self.values.shape}")
        if self.kind not in ("depth", "disparity"):
            raise DataError(f"structure kind must be depth|disparity, got {self.kind!r}")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ShapeError(
                    f"mask shape {self.mask.shape} != values shape {self.values.shape}"
                )

    @property
    def shape(self):
        return self.values.shape


@dataclass
class HazeParams:
    """One haze coefficient plus HSV illumination sampling ranges."""

    beta: float
    hue: tuple[float, float] = (0.0, 1.0)
    saturation: tuple[float, float] = (0.0, 0.5)
    value: tuple[float, float] = (0.6, 1.0)

    def __post_init__(self):
        if self.beta < 0:
            raise DataError(f"beta must be nonnegative, got {self.beta}")
        for name, (lo, hi) in (
            ("hue", self.hue),
            ("saturation", self.saturation),
            ("value", self.value),
        ):
            if not (0.0 <= lo <= hi <= 1.0):
                raise DataError(f"illumination {name} range must satisfy 0 <= lo <= hi <= 1, got {(lo, hi)}")

    @classmethod
    def colored(cls, beta: float) -> "HazeParams":
        return cls(beta=beta)

    @classmethod
    def grayscale(cls, beta: float) -> "HazeParams":
        return cls(beta=beta, hue=(0.0, 1.0), saturation=(0.0, 0.0), value=(0.6, 1.0))


@dataclass
class HazySample:
    hazy: np.ndarray  # HxWx3 float32 in [0,1]
    clean: np.ndarray
    transmission: np.ndarray  # HxW float32 in [0,1]
    illumination: np.ndarray  # (3,) float32
    beta: float
    sample_id: str


class SceneSource:
    """A named provider of one (clean image, structure map) pair."""

    name: str

    def load(self) -> tuple[np.ndarray, StructureMap]:
        raise NotImplementedError


# -- transmission -----------------------------------------------------------------


def transmission_from_depth(depth: StructureMap, beta: float) -> np.ndarray:
    if depth.kind != "depth":
        raise DataError(f"expected a metric depth map, got kind {depth.kind!r}")
    if not depth.mask.all():
        raise DataError("depth map has unfilled invalid pixels; fill occlusions first")
    if np.any(depth.values <= 0):
        raise DataError("depth values must be positive")
    return np.exp(-np.float32(beta) * depth.values).astype(np.float32)


def transmission_from_disparity(disp: StructureMap, beta: float) -> np.ndarray:
    """t = exp(-beta/D); D = 0 yields t = 0 (infinite depth, e.g. sky)."""
    if disp.kind != "disparity":
        raise DataError(f"expected a disparity map, got kind {disp.kind!r}")
    if not disp.mask.all():
        raise DataError("disparity map has unfilled invalid pixels; fill occlusions first")
    if np.any(disp.values < 0):
        raise DataError("disparity values must be nonnegative")
    d = disp.values
    t = np.zeros_like(d, dtype=np.float32)
    pos = d > 0
    t[pos] = np.exp(-np.float32(beta) / d[pos])
    return t


def transmission_for(structure: StructureMap, beta: float) -> np.ndarray:
    if structure.kind == "depth":
        return transmission_from_depth(structure, beta)
    return transmission_from_disparity(structure, beta)


# -- occlusion filling --------------------------------------------------------------


def fill_occlusions_nearest(sm: StructureMap) -> StructureMap:
    """Assign each invalid pixel the value of its nearest valid pixel.

    Distance is Euclidean in pixel units; equidistant candidates resolve to
    the one earliest in row-major scan order.
    """
    mask = sm.mask
    if mask.all():
        return StructureMap(sm.values.copy(), sm.kind, np.ones_like(mask))
    if not mask.any():
        raise DataError("cannot fill a structure map with zero valid pixels")

    valid_coords = np.argwhere(mask)  # row-major order
    invalid_coords = np.argwhere(~mask)
    tree = cKDTree(valid_coords)
    dist, _ = tree.query(invalid_coords)
    # Squared pixel distances are exact integers; re-resolve each query over
    # all candidates within the found radius and keep the row-major-first one.
    groups = tree.query_ball_point(invalid_coords, dist * (1 + 1e-9) + 1e-9)
    h, w = sm.values.shape
    valid_linear = valid_coords[:, 0] * w + valid_coords[:, 1]
    filled = sm.values.copy()
    for (r, c), cand in zip(invalid_coords, groups):
        cand = np.asarray(cand)
        dr = valid_coords[cand, 0] - r
        dc = valid_coords[cand, 1] - c
        d2 = dr * dr + dc * dc
        best = cand[d2 == d2.min()]
        chosen = best[np.argmin(valid_linear[best])]
        filled[r, c] = sm.values[valid_coords[chosen, 0], valid_coords[chosen, 1]]
    return StructureMap(filled, sm.kind, np.ones_like(mask))


# -- geometry ------------------------------------------------------------------------


def crop_margins(
    image: np.ndarray, structure: StructureMap, left_frac: float, bottom_frac: float
) -> tuple[np.ndarray, StructureMap]:
    """Drop the left and bottom margins (top-right anchored crop)."""
    if not (0.0 <= left_frac < 0.5 and 0.0 <= bottom_frac < 0.5):
        raise DataError(f"crop fractions must be in [0, 0.5), got {(left_frac, bottom_frac)}")
    if image.shape[:2] != structure.values.shape:
        raise ShapeError(
            f"image {image.shape[:2]} and structure {structure.values.shape} sizes differ"
        )
    h, w = image.shape[:2]
    cut_cols = int(left_frac * w)
    cut_rows = int(bottom_frac * h)
    nh, nw = h - cut_rows, w - cut_cols
    if nh < 64 or nw < 64:
        raise DataError(f"crop would leave {nh}x{nw}, need at least 64x64")
    img = image[:nh, cut_cols:].copy()
    sm = StructureMap(
        structure.values[:nh, cut_cols:].copy(),
        structure.kind,
        structure.mask[:nh, cut_cols:].copy(),
    )
    return img, sm


@lru_cache(maxsize=256)
def _resample_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) bilinear weights with half-pixel centers and border clamp."""
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    i0f = np.floor(pos)
    w1 = pos - i0f
    i0 = np.clip(i0f, 0, src - 1).astype(np.int64)
    i1 = np.clip(i0f + 1, 0, src - 1).astype(np.int64)
    m = np.zeros((dst, src), dtype=np.float32)
    np.add.at(m, (np.arange(dst), i0), (1.0 - w1).astype(np.float32))
    np.add.at(m, (np.arange(dst), i1), w1.astype(np.float32))
    return m


def resize_bilinear(array: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an HxW or HxWxC array; output clamped to source range."""
    th, tw = target
    if th < 1 or tw < 1:
        raise DataError(f"resize target must be at least 1x1, got {target}")
    arr = np.asarray(array, dtype=np.float32)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    mh = _resample_matrix(h, th)
    mw = _resample_matrix(w, tw)
    out = np.einsum("Hh,hwc,Ww->HWc", mh, arr, mw, optimize=True)
    out = np.clip(out, arr.min(), arr.max()).astype(np.float32)
    return out[:, :, 0] if squeeze else out


def resize_structure(sm: StructureMap, target: tuple[int, int]) -> StructureMap:
    if not sm.mask.all():
        raise DataError("resize a structure map only after occlusion filling")
    return StructureMap(resize_bilinear(sm.values, target), sm.kind)


# -- illumination and composition ------------------------------------------------------


def sample_illumination(params: HazeParams, rng: np.random.Generator) -> np.ndarray:
    """Draw HSV from the configured uniform ranges and convert to RGB."""
    h = rng.uniform(*params.hue)
    s = rng.uniform(*params.saturation)
    v = rng.uniform(*params.value)
    return np.asarray(colorsys.hsv_to_rgb(h, s, v), dtype=np.float32)


def compose_haze(clean: np.ndarray, t: np.ndarray, illumination: np.ndarray) -> np.ndarray:
    """I = J*t + A*(1-t), elementwise per channel."""
    if clean.shape[:2] != t.shape:
        raise ShapeError(f"clean {clean.shape[:2]} and transmission {t.shape} sizes differ")
    if np.any(t < 0) or np.any(t > 1):
        raise DataError("transmission values must lie in [0,1]")
    a = np.asarray(illumination, dtype=np.float32).reshape(1, 1, 3)
    tt = t.astype(np.float32)[:, :, None]
    return (clean * tt + a * (np.float32(1) - tt)).astype(np.float32)


def invert_haze(
    hazy: np.ndarray, t: np.ndarray, illumination: np.ndarray, t_floor: float = 0.1
) -> np.ndarray:
    """J = (I - A*(1-t)) / max(t, t_floor), clamped to [0,1].  Oracle only."""
    a = np.asarray(illumination, dtype=np.float32).reshape(1, 1, 3)
    tt = np.maximum(t.astype(np.float32), np.float32(t_floor))[:, :, None]
    t_raw = t.astype(np.float32)[:, :, None]
    j = (hazy - a * (np.float32(1) - t_raw)) / tt
    return np.clip(j, 0.0, 1.0).astype(np.float32)


# -- deterministic sample streams -------------------------------------------------------


def sample_rng(seed: int, epoch_index: int, image_index: int, beta_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, _ROLE_SAMPLE, epoch_index, image_index, beta_index])
    )


def synthesize_sample(
    clean: np.ndarray,
    structure: StructureMap,
    params: HazeParams,
    rng: np.random.Generator,
    sample_id: str,
) -> HazySample:
    illumination = sample_illumination(params, rng)
    t = transmission_for(structure, params.beta)
    hazy = compose_haze(clean, t, illumination)
    return HazySample(
        hazy=hazy,
        clean=clean,
        transmission=t,
        illumination=illumination,
        beta=params.beta,
        sample_id=sample_id,
    )


def epoch_stream(
    sources: Sequence[SceneSource],
    params_list: Sequence[HazeParams],
    seed: int,
    epoch_index: int,
    shuffle: bool = True,
) -> Iterator[HazySample]:
    """Yield one sample per (source, haze params) pair with fresh illumination.

    Content depends only on (seed, epoch_index, image index, beta index), so
    any prefetch scheduling reproduces the same samples; the yield order is
    itself a deterministic per-epoch shuffle.
    """
    if not sources:
        raise DataError("epoch_stream: empty source set")
    if not params_list:
        raise DataError("epoch_stream: empty haze parameter list")
    pairs = [(i, b) for i in range(len(sources)) for b in range(len(params_list))]
    if shuffle:
        order_rng = np.random.default_rng(
            np.random.SeedSequence([seed, _ROLE_ORDER, epoch_index])
        )
        order_rng.shuffle(pairs)
    cache: dict[int, tuple[np.ndarray, StructureMap]] = {}
    for image_index, beta_index in pairs:
        if image_index not in cache:
            cache[image_index] = sources[image_index].load()
        clean, structure = cache[image_index]
        rng = sample_rng(seed, epoch_index, image_index, beta_index)
        sample_id = f"{sources[image_index].name}|b{beta_index}|e{epoch_index}"
        yield synthesize_sample(clean, structure, params_list[beta_index], rng, sample_id)
