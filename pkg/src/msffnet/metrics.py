"""PSNR and SSIM in the linear and mu-law tonemapped domains."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import MU

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def tonemap_mu_np(h: np.ndarray, mu: float = MU) -> np.ndarray:
    return np.log1p(mu * np.clip(np.asarray(h, dtype=np.float64), 0.0, 1.0)) / math.log1p(mu)


def _domain(x: np.ndarray, domain: str, mu: float) -> np.ndarray:
    if domain == "mu":
        return tonemap_mu_np(x, mu)
    if domain in ("linear", "l"):
        return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    raise ValueError(f"unknown domain {domain!r}; use 'mu' or 'linear'")


def psnr(pred: np.ndarray, gt: np.ndarray, domain: str = "mu", mu: float = MU) -> float:
    """10 log10(1 / MSE) with peak 1; identical inputs give math.inf."""
    a, b = _domain(pred, domain, mu), _domain(gt, domain, mu)
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def _gray(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=-1) if x.ndim == 3 else x


def ssim(pred: np.ndarray, gt: np.ndarray, domain: str = "mu", mu: float = MU) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows of the channel-mean image."""
    a, b = _gray(_domain(pred, domain, mu)), _gray(_domain(gt, domain, mu))
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    names: list[str] = field(default_factory=list)
    psnr_mu: list[float] = field(default_factory=list)
    psnr_l: list[float] = field(default_factory=list)
    ssim_mu: list[float] = field(default_factory=list)
    ssim_l: list[float] = field(default_factory=list)

    COLUMNS = ("psnr_mu", "psnr_l", "ssim_mu", "ssim_l")

    def add(self, name: str, pred: np.ndarray, gt: np.ndarray, mu: float = MU) -> None:
        self.names.append(name)
        self.psnr_mu.append(psnr(pred, gt, "mu", mu))
        self.psnr_l.append(psnr(pred, gt, "linear", mu))
        self.ssim_mu.append(ssim(pred, gt, "mu", mu))
        self.ssim_l.append(ssim(pred, gt, "linear", mu))

    def mean(self) -> dict[str, float]:
        return {col: float(np.mean(getattr(self, col))) if self.names else math.nan
                for col in self.COLUMNS}

    def rows(self):
        for i, name in enumerate(self.names):
            yield [name] + [getattr(self, col)[i] for col in self.COLUMNS]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("scene",) + self.COLUMNS)
            for row in self.rows():
                writer.writerow(row[:1] + [repr(v) for v in row[1:]])
            writer.writerow(["mean"] + [repr(v) for v in self.mean().values()])

    def summary(self) -> str:
        header = f"{'scene':<16}{'PSNR-mu':>10}{'PSNR-L':>10}{'SSIM-mu':>10}{'SSIM-L':>10}"
        lines = [header, "-" * len(header)]
        for row in self.rows():
            lines.append(f"{row[0]:<16}{row[1]:>10.4f}{row[2]:>10.4f}{row[3]:>10.4f}{row[4]:>10.4f}")
        m = self.mean()
        lines.append("-" * len(header))
        lines.append(f"{'mean':<16}{m['psnr_mu']:>10.4f}{m['psnr_l']:>10.4f}"
                     f"{m['ssim_mu']:>10.4f}{m['ssim_l']:>10.4f}")
        return "\n".join(lines)
