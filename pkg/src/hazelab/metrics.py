"""Image quality metrics and evaluation reports.

PSNR uses peak 1.0 and is computed per image (aggregates are means of
per-image values, so an aggregate PSNR need not match the aggregate MSE).
SSIM is the standard single-scale form: 11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, L=1, computed per channel over valid window positions and
averaged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeError
from .formats import write_ppm

PSNR_CAP = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    if pred.shape != truth.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {truth.shape} differ")
    diff = pred.astype(np.float64) - truth.astype(np.float64)
    return float((diff * diff).mean())


def psnr(pred: np.ndarray, truth: np.ndarray) -> float:
    """-10*log10(MSE) against peak 1.0, capped at 99 dB for identical images."""
    err = mse(pred, truth)
    if err <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(err)))


def _gaussian_kernel() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * _SSIM_SIGMA**2))
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means restricted to fully valid window positions."""
    half = _SSIM_WINDOW // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(pred: np.ndarray, truth: np.ndarray) -> float:
    if pred.shape != truth.shape:
        raise ShapeError(f"ssim: shapes {pred.shape} and {truth.shape} differ")
    if pred.ndim == 2:
        pred = pred[:, :, None]
        truth = truth[:, :, None]
    h, w = pred.shape[:2]
    if min(h, w) < _SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the {_SSIM_WINDOW}px window")
    kernel = _gaussian_kernel()
    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    scores = []
    for c in range(pred.shape[2]):
        x = pred[:, :, c].astype(np.float64)
        y = truth[:, :, c].astype(np.float64)
        mu_x = _windowed_mean(x, kernel)
        mu_y = _windowed_mean(y, kernel)
        xx = _windowed_mean(x * x, kernel) - mu_x * mu_x
        yy = _windowed_mean(y * y, kernel) - mu_y * mu_y
        xy = _windowed_mean(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        scores.append(float((num / den).mean()))
    return float(np.mean(scores))


# -- reports -----------------------------------------------------------------------


@dataclass
class MetricsRow:
    sample_id: str
    beta: float
    illumination: tuple[float, float, float]
    mse: float
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    protocol: str = ""
    weights_hash: str = ""

    def aggregate(self, name: str):
        if not self.rows:
            return None
        return float(np.mean([getattr(r, name) for r in self.rows]))

    def summary(self) -> dict:
        return {
            "protocol": self.protocol,
            "weights_hash": self.weights_hash,
            "rows": len(self.rows),
            "mse": self.aggregate("mse"),
            "psnr": self.aggregate("psnr"),
            "ssim": self.aggregate("ssim"),
        }


CSV_HEADER = "id,beta,A_r,A_g,A_b,mse,psnr,ssim"


def score_pair(sample_id, beta, illumination, pred, clean) -> MetricsRow:
    return MetricsRow(
        sample_id=sample_id,
        beta=float(beta),
        illumination=tuple(float(v) for v in illumination),
        mse=mse(pred, clean),
        psnr=psnr(pred, clean),
        ssim=ssim(pred, clean),
    )


def write_report_csv(report: MetricsReport, path):
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in report.rows:
            a = r.illumination
            f.write(
                f"{r.sample_id},{r.beta:.9g},{a[0]:.9g},{a[1]:.9g},{a[2]:.9g},"
                f"{r.mse:.9e},{r.psnr:.9e},{r.ssim:.9e}\n"
            )


def read_report_csv(path) -> MetricsReport:
    report = MetricsReport()
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ShapeError(f"{path}: unexpected CSV header {header!r}")
        for line in f:
            parts = line.rstrip("\n").split(",")
            report.rows.append(
                MetricsRow(
                    sample_id=parts[0],
                    beta=float(parts[1]),
                    illumination=(float(parts[2]), float(parts[3]), float(parts[4])),
                    mse=float(parts[5]),
                    psnr=float(parts[6]),
                    ssim=float(parts[7]),
                )
            )
    return report


def write_report_json(report: MetricsReport, path):
    with open(path, "w") as f:
        json.dump(report.summary(), f, indent=1, sort_keys=True)
        f.write("\n")


TRIPTYCH_SEPARATOR = 4


def write_triptych(path, hazy: np.ndarray, pred: np.ndarray, clean: np.ndarray):
    """Side-by-side hazy | predicted | clean with 4px white separators."""
    h, w = hazy.shape[:2]
    sep = np.ones((h, TRIPTYCH_SEPARATOR, 3), dtype=np.float32)
    write_ppm(path, np.concatenate([hazy, sep, pred, sep, clean], axis=1))


def emit_report(
    report: MetricsReport,
    out_dir,
    triptychs: list[tuple[str, np.ndarray, np.ndarray, np.ndarray]] | None = None,
):
    """Write report.csv and report.json (and optional triptych PPMs) to out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json")
    if triptychs:
        trip_dir = out / "triptychs"
        trip_dir.mkdir(exist_ok=True)
        for sample_id, hazy, pred, clean in triptychs:
            safe = sample_id.replace("/", "_").replace("|", "_")
            write_triptych(trip_dir / f"{safe}.ppm", hazy, pred, clean)
    return out / "report.csv", out / "report.json"
