"""MSE/PSNR/SSIM behavior and report emission round trips."""

import json

import numpy as np
import pytest

from hazelab.errors import ShapeError
from hazelab.metrics import (
    CSV_HEADER,
    MetricsReport,
    MetricsRow,
    emit_report,
    mse,
    psnr,
    read_report_csv,
    score_pair,
    ssim,
    write_report_csv,
    write_triptych,
)


def rand_img(seed, shape=(32, 32, 3), lo=0.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape).astype(np.float32)


class TestPsnr:
    def test_formula_at_known_mse(self):
        a = np.zeros((10, 10, 3), np.float32)
        b = np.full((10, 10, 3), 0.1, np.float32)  # mse = 0.01
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-6)

    def test_identical_capped_at_99(self):
        a = rand_img(0)
        assert psnr(a, a) == 99.0

    def test_per_image_consistency_with_mse(self):
        for seed in range(5):
            a, b = rand_img(seed), rand_img(seed + 100)
            err = mse(a, b)
            assert psnr(a, b) == pytest.approx(-10 * np.log10(err), abs=1e-6)

    def test_strictly_decreasing_with_noise_amplitude(self):
        base = rand_img(1, lo=0.2, hi=0.8)
        rng = np.random.default_rng(2)
        noise = rng.uniform(-1, 1, base.shape).astype(np.float32)
        values = [psnr(np.clip(base + amp * noise, 0, 1), base) for amp in (0.01, 0.05, 0.1)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identity_is_one(self):
        a = rand_img(3)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_constant_pair_closed_form(self):
        a = np.full((32, 32, 3), 0.5, np.float32)
        b = np.full((32, 32, 3), 0.6, np.float32)
        expected = (2 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-6)

    def test_symmetric(self):
        a, b = rand_img(4), rand_img(5)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_range(self):
        a, b = rand_img(6), rand_img(7)
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_degrades_with_noise(self):
        base = rand_img(8, lo=0.2, hi=0.8)
        rng = np.random.default_rng(9)
        noise = rng.uniform(-1, 1, base.shape).astype(np.float32)
        s1 = ssim(np.clip(base + 0.02 * noise, 0, 1), base)
        s2 = ssim(np.clip(base + 0.2 * noise, 0, 1), base)
        assert s1 > s2

    def test_small_image_rejected(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def make_report(n=3):
    report = MetricsReport(protocol="testsetA", weights_hash="cafe")
    for i in range(n):
        pred, truth = rand_img(i), rand_img(i + 50)
        report.rows.append(score_pair(f"s{i}", 0.1 * (i + 1), (0.9, 0.8, 0.7), pred, truth))
    return report


class TestReports:
    def test_aggregates_are_row_means(self):
        report = make_report(4)
        assert report.aggregate("mse") == pytest.approx(
            np.mean([r.mse for r in report.rows])
        )
        assert report.summary()["rows"] == 4

    def test_empty_report_has_null_aggregates(self, tmp_path):
        report = MetricsReport(protocol="x")
        csv_path, json_path = emit_report(report, tmp_path)
        assert csv_path.read_text() == CSV_HEADER + "\n"
        summary = json.loads(json_path.read_text())
        assert summary["mse"] is None and summary["psnr"] is None

    def test_csv_round_trip_preserves_aggregates(self, tmp_path):
        report = make_report(5)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        back = read_report_csv(path)
        for name in ("mse", "psnr", "ssim"):
            assert back.aggregate(name) == pytest.approx(report.aggregate(name), abs=1e-9)

    def test_csv_column_order(self, tmp_path):
        report = make_report(1)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        assert path.read_text().splitlines()[0] == "id,beta,A_r,A_g,A_b,mse,psnr,ssim"

    def test_triptych_layout(self, tmp_path):
        from hazelab.formats import read_ppm

        h, w = 16, 24
        hazy, pred, clean = rand_img(1, (h, w, 3)), rand_img(2, (h, w, 3)), rand_img(3, (h, w, 3))
        path = tmp_path / "trip.ppm"
        write_triptych(path, hazy, pred, clean)
        img = read_ppm(path)
        assert img.shape == (h, 3 * w + 2 * 4, 3)
        # separators are white
        assert np.all(img[:, w : w + 4] == 1.0)

    def test_emit_writes_triptychs(self, tmp_path):
        report = make_report(2)
        imgs = [("a|b0", rand_img(1, (16, 16, 3)), rand_img(2, (16, 16, 3)), rand_img(3, (16, 16, 3)))]
        emit_report(report, tmp_path, imgs)
        assert (tmp_path / "triptychs" / "a_b0.ppm").exists()
