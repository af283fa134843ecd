"""Distance metrics d(x, x') between an image and its perturbed copy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .image import as_array

METRIC_NAMES = ("one_minus_ssim", "ciede2000", "l0", "l1", "l2")


@dataclass(frozen=True)
class MetricKind:
    """One of ``one_minus_ssim``, ``ciede2000`` or ``lp`` with p in {0, 1, 2}.

    ``eps`` is the l-infinity bound used to normalise the lp distances.
    """

    tag: str
    p: int | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.tag not in ("one_minus_ssim", "ciede2000", "lp"):
            raise ValueError(f"unknown metric {self.tag!r}")
        if self.tag == "lp":
            if self.p not in (0, 1, 2):
                raise ValueError("lp metric needs p in {0, 1, 2}")
            if self.eps is None or self.eps <= 0:
                raise ValueError("lp metric needs eps > 0")

    @classmethod
    def parse(cls, name: str, eps: float = 0.05) -> "MetricKind":
        """Build from a CLI-style name: ssim, one_minus_ssim, ciede2000, l0, l1, l2."""
        if name in ("ssim", "one_minus_ssim"):
            return cls("one_minus_ssim")
        if name == "ciede2000":
            return cls("ciede2000")
        if name in ("l0", "l1", "l2"):
            return cls("lp", p=int(name[1]), eps=eps)
        raise ValueError(f"unknown metric {name!r}")

    @property
    def name(self) -> str:
        return f"l{self.p}" if self.tag == "lp" else self.tag


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 3")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel(self) -> np.ndarray:
        r = np.arange(self.window_size) - self.window_size // 2
        g = np.exp(-(r**2) / (2.0 * self.gaussian_sigma**2))
        return g / g.sum()


DEFAULT_SSIM = SsimParams()


def _check_pair(x, y):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")


class _SsimReference:
    """Gaussian-window statistics of a fixed image, reused across comparisons."""

    def __init__(self, x, params: SsimParams):
        x = as_array(x)
        if min(x.shape[0], x.shape[1]) < params.window_size:
            raise ValueError(
                f"image {x.shape[:2]} smaller than SSIM window {params.window_size}"
            )
        self.x = x
        self.params = params
        self.kernel = params.kernel()
        self.mu_x = kernels.gaussian_filter_valid(x, self.kernel)
        exx = kernels.gaussian_filter_valid(x * x, self.kernel)
        self.sxx = exx - self.mu_x * self.mu_x

    def index(self, y) -> float:
        y = as_array(y)
        _check_pair(self.x, y)
        return kernels.ssim_mean(
            self.x, y, self.mu_x, self.sxx, self.kernel, self.params.c1, self.params.c2
        )


def ssim_index(x, y, params: SsimParams = DEFAULT_SSIM) -> float:
    """Mean Gaussian-windowed SSIM over all valid window positions and channels."""
    return _SsimReference(x, params).index(y)


def one_minus_ssim(x, y, params: SsimParams = DEFAULT_SSIM) -> float:
    return 1.0 - ssim_index(x, y, params)


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB in [0, 1] (D65) to CIELAB. Accepts a triple or any (..., 3) array."""
    return kernels.srgb_to_lab(np.asarray(rgb, dtype=np.float64))


def ciede2000_pair(lab1, lab2) -> float:
    return float(kernels.ciede2000(np.asarray(lab1, float)[None], np.asarray(lab2, float)[None])[0])


def _require_rgb(a):
    if a.shape[2] != 3:
        raise ValueError("CIEDE2000 needs a 3-channel RGB image")


def ciede2000_image(x, y) -> float:
    """Mean per-pixel CIEDE2000 difference."""
    x, y = as_array(x), as_array(y)
    _check_pair(x, y)
    _require_rgb(x)
    return float(np.mean(kernels.ciede2000(rgb_to_lab(x), rgb_to_lab(y))))


def lp_normalized(x, y, p: int, eps: float) -> float:
    """l_p distance divided by its maximum over the eps-ball, so it lies in [0, 1]."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, y = as_array(x), as_array(y)
    _check_pair(x, y)
    h, w, c = x.shape
    diff = np.abs(x - y)
    if p == 0:
        return int(np.count_nonzero(diff.max(axis=2))) / (h * w)
    ratio = diff / eps
    if p == 1:
        return float(ratio.sum()) / (h * w * c)
    if p == 2:
        return math.sqrt(float(np.sum(ratio * ratio))) / math.sqrt(h * w * c)
    raise ValueError(f"p must be 0, 1 or 2, got {p}")


def lp_normalized_noise(noise, channels: int, p: int, eps: float) -> float:
    """Normalised l_p size of a channel-shared per-pixel noise map.

    Same normaliser as :func:`lp_normalized`, evaluated on the unclamped noise
    itself, so that with N=1 noise the l1 and l0 values coincide exactly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    noise = np.asarray(noise, dtype=np.float64)
    h, w = noise.shape
    if p == 0:
        return int(np.count_nonzero(noise)) / (h * w)
    ratio = np.abs(noise) / eps
    if p == 1:
        return float(ratio.sum()) * channels / (h * w * channels)
    if p == 2:
        return math.sqrt(float(np.sum(ratio * ratio)) * channels) / math.sqrt(h * w * channels)
    raise ValueError(f"p must be 0, 1 or 2, got {p}")


def distance(metric: MetricKind, x, y, ssim_params: SsimParams = DEFAULT_SSIM) -> float:
    if metric.tag == "one_minus_ssim":
        return one_minus_ssim(x, y, ssim_params)
    if metric.tag == "ciede2000":
        return ciede2000_image(x, y)
    return lp_normalized(x, y, metric.p, metric.eps)


def prepare_distance(metric: MetricKind, x, ssim_params: SsimParams = DEFAULT_SSIM):
    """Return ``d(y)`` with ``x`` fixed; caches the reference-image statistics."""
    if metric.tag == "one_minus_ssim":
        ref = _SsimReference(x, ssim_params)
        return lambda y: 1.0 - ref.index(y)
    if metric.tag == "ciede2000":
        xa = as_array(x)
        _require_rgb(xa)
        lab_x = rgb_to_lab(xa)

        def d(y):
            ya = as_array(y)
            _check_pair(xa, ya)
            return float(np.mean(kernels.ciede2000(lab_x, rgb_to_lab(ya))))

        return d
    return lambda y: lp_normalized(x, y, metric.p, metric.eps)
