"""Testset protocols and whole-set evaluation.

Protocols regenerate their hazy sets deterministically from a seed:
  - testsetA: one hazy image per (source, beta) with random colored
    illumination, over all sources;
  - testsetB: grayscale illumination (S=0), metric-depth sources only;
  - custom: caller-provided HazeParams list, no source filter.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .dcp import dcp_dehaze
from .errors import ConfigError
from .metrics import MetricsReport, score_pair
from .network import BaselineModel, Model
from .synthesis import HazeParams, HazySample, SceneSource, sample_rng, synthesize_sample

DEFAULT_BETAS = (0.1, 0.2, 0.3, 0.4)

Method = Callable[[HazySample], np.ndarray]


def protocol_params(protocol: str, betas: Sequence[float] | None = None) -> list[HazeParams]:
    betas = tuple(betas) if betas is not None else DEFAULT_BETAS
    if protocol == "testsetA":
        return [HazeParams.colored(b) for b in betas]
    if protocol in ("testsetB", "custom"):
        if protocol == "testsetB":
            return [HazeParams.grayscale(b) for b in betas]
        return [HazeParams.colored(b) for b in betas]
    raise ConfigError(f"protocol: unknown protocol {protocol!r}")


def filter_sources(protocol: str, sources: Sequence[SceneSource]) -> list[SceneSource]:
    """testsetB keeps metric-depth sources only (the indoor-style subset)."""
    if protocol != "testsetB":
        return list(sources)
    kept = []
    for src in sources:
        kind = getattr(src, "kind", "depth")
        if kind == "depth":
            kept.append(src)
    if not kept:
        raise ConfigError("protocol: testsetB needs at least one metric-depth source")
    return kept


def iter_protocol_samples(
    sources: Sequence[SceneSource],
    protocol: str,
    seed: int,
    betas: Sequence[float] | None = None,
):
    """Deterministic evaluation samples in source-major order (no shuffling)."""
    params_list = protocol_params(protocol, betas)
    kept = filter_sources(protocol, sources)
    if not kept:
        raise ConfigError("protocol: empty source set")
    for i, src in enumerate(kept):
        clean, structure = src.load()
        for b, params in enumerate(params_list):
            rng = sample_rng(seed, 0, i, b)
            yield synthesize_sample(clean, structure, params, rng, f"{src.name}|b{b}")


def identity_method(sample: HazySample) -> np.ndarray:
    return sample.hazy


def dcp_method(sample: HazySample) -> np.ndarray:
    return dcp_dehaze(sample.hazy)


def model_method(model: Model) -> Method:
    def run(sample: HazySample) -> np.ndarray:
        return model.predict(sample.hazy)

    return run


def baseline_method(model: BaselineModel) -> Method:
    """Ablation baseline: ground-truth illumination accompanies each sample."""

    def run(sample: HazySample) -> np.ndarray:
        return model.predict(sample.hazy, sample.illumination[None, :])

    return run


def evaluate_set(
    method: Method,
    sources: Sequence[SceneSource],
    protocol: str,
    seed: int,
    betas: Sequence[float] | None = None,
    weights_hash: str = "",
    collect_images: int = 0,
) -> tuple[MetricsReport, list[tuple[str, np.ndarray, np.ndarray, np.ndarray]]]:
    """Run `method` over the regenerated protocol set; rows in source order."""
    report = MetricsReport(protocol=protocol, weights_hash=weights_hash)
    images: list[tuple[str, np.ndarray, np.ndarray, np.ndarray]] = []
    for sample in iter_protocol_samples(sources, protocol, seed, betas):
        pred = method(sample)
        report.rows.append(
            score_pair(sample.sample_id, sample.beta, sample.illumination, pred, sample.clean)
        )
        if len(images) < collect_images:
            images.append((sample.sample_id, sample.hazy, pred, sample.clean))
    return report, images
