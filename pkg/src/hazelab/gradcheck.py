"""Finite-difference gradient verification for the engine ops.

The check projects the op output onto a fixed random direction, computes the
analytic input gradients via backward(), and compares them element by element
against central differences (h=1e-3, op arithmetic in 32-bit; the projection
and difference quotient are accumulated in float64 so the comparison is not
swamped by reduction noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import FLOAT, Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<24s} max_rel_err={self.max_rel_error:.3e}  tol={self.tolerance:.0e}  {status}"


def grad_check(fn, inputs, tolerance: float = 1e-2, h: float = 1e-3, seed: int = 0, name: str = "op"):
    """Compare analytic and numeric gradients of `fn(*inputs)`.

    `fn` maps Tensors to a Tensor.  Relative error per element is
    |a - n| / (|a| + |n| + 1e-2); the additive floor absorbs 32-bit
    finite-difference noise where the true gradient is ~0.
    """
    rng = np.random.default_rng(seed)
    xs = [Tensor(np.array(t.data, dtype=FLOAT, copy=True), requires_grad=True) for t in inputs]
    out = fn(*xs)
    proj = rng.uniform(-1.0, 1.0, size=out.data.shape).astype(FLOAT)

    out.backward(proj)
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in xs]

    proj64 = proj.astype(np.float64)

    def scalar_at(values: list[np.ndarray]) -> float:
        ts = [Tensor(v) for v in values]
        return float((fn(*ts).data.astype(np.float64) * proj64).sum())

    max_rel = 0.0
    for i, x in enumerate(xs):
        base = [np.array(t.data, copy=True) for t in xs]
        numeric = np.zeros_like(x.data, dtype=np.float64)
        flat = base[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + FLOAT(h)
            fp = scalar_at(base)
            flat[j] = orig - FLOAT(h)
            fm = scalar_at(base)
            flat[j] = orig
            numeric.reshape(-1)[j] = (fp - fm) / (2.0 * h)
        a = analytic[i].astype(np.float64)
        rel = np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + 1e-2)
        max_rel = max(max_rel, float(rel.max()))
    return GradCheckResult(name=name, max_rel_error=max_rel, tolerance=tolerance)


# -- standard suite -------------------------------------------------------------


def _rand(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape).astype(FLOAT))


def _rand_separated(rng, shape, min_gap=0.05):
    """Values pairwise separated within each 2x2 pool window (no FD tie flips)."""
    while True:
        x = rng.uniform(-1.0, 1.0, size=shape).astype(FLOAT)
        n, c, h, w = shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
        srt = np.sort(win, axis=1)
        if np.min(np.diff(srt, axis=1)) > min_gap:
            return Tensor(x)


def standard_checks(seed: int = 0, tolerance: float = 1e-2) -> list[GradCheckResult]:
    """Gradient checks for every differentiable op, at one seed."""
    rng = np.random.default_rng(seed)
    results = []

    x = _rand(rng, (1, 2, 5, 5))
    w = _rand(rng, (3, 2, 3, 3))
    b = _rand(rng, (3,))
    results.append(
        grad_check(lambda a, k, c: ops.conv2d(a, k, c, "same"), [x, w, b], tolerance, seed=seed, name="conv2d_same")
    )
    results.append(
        grad_check(lambda a, k, c: ops.conv2d(a, k, c, "valid"), [x, w, b], tolerance, seed=seed, name="conv2d_valid")
    )

    xr = rng.uniform(0.1, 1.0, size=(1, 2, 4, 4)).astype(FLOAT)
    xr *= rng.choice([-1.0, 1.0], size=xr.shape).astype(FLOAT)
    results.append(grad_check(ops.relu, [Tensor(xr)], tolerance, seed=seed, name="relu"))

    results.append(
        grad_check(ops.maxpool2, [_rand_separated(rng, (1, 2, 4, 4))], tolerance, seed=seed, name="maxpool2")
    )
    results.append(
        grad_check(ops.upsample2_bilinear, [_rand(rng, (1, 2, 3, 3))], tolerance, seed=seed, name="upsample2_bilinear")
    )
    results.append(
        grad_check(
            lambda a, b2: ops.concat_channels([a, b2]),
            [_rand(rng, (1, 2, 4, 4)), _rand(rng, (1, 3, 4, 4))],
            tolerance,
            seed=seed,
            name="concat_channels",
        )
    )
    results.append(
        grad_check(ops.softmax_spatial, [_rand(rng, (2, 1, 3, 4))], tolerance, seed=seed, name="softmax_spatial")
    )

    feats = _rand(rng, (1, 3, 3, 3))
    logits = _rand(rng, (1, 1, 3, 3))
    results.append(
        grad_check(
            lambda f, z: ops.weighted_global_pool(f, ops.softmax_spatial(z)),
            [feats, logits],
            tolerance,
            seed=seed,
            name="weighted_global_pool",
        )
    )
    uniform = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=FLOAT))
    results.append(
        grad_check(
            lambda f: ops.weighted_global_pool(f, uniform),
            [feats],
            tolerance,
            seed=seed,
            name="pool_features_only",
        )
    )

    results.append(
        grad_check(
            lambda a: ops.broadcast_spatial(a, (4, 5)),
            [_rand(rng, (1, 3, 1, 1))],
            tolerance,
            seed=seed,
            name="broadcast_spatial",
        )
    )
    results.append(
        grad_check(
            ops.mse_loss,
            [_rand(rng, (1, 2, 4, 4)), _rand(rng, (1, 2, 4, 4))],
            tolerance,
            seed=seed,
            name="mse_loss",
        )
    )
    # Output head of the color module: J = K*I + (1 - K).
    results.append(
        grad_check(
            lambda k, i: k * i + (1.0 - k),
            [_rand(rng, (1, 3, 4, 4)), _rand(rng, (1, 3, 4, 4), 0.0, 1.0)],
            tolerance,
            seed=seed,
            name="kmodel_head",
        )
    )
    return results


def run_suite(seeds=range(5), tolerance: float = 1e-2) -> list[GradCheckResult]:
    """All standard checks across several seeds; worst error kept per op."""
    worst: dict[str, GradCheckResult] = {}
    for seed in seeds:
        for res in standard_checks(seed=seed, tolerance=tolerance):
            cur = worst.get(res.name)
            if cur is None or res.max_rel_error > cur.max_rel_error:
                worst[res.name] = res
    return list(worst.values())
