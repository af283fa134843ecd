"""Numpy implementations of the numeric kernels.

These are the reference versions; ``_ckernels`` mirrors every function here
with the same signature and must agree to within floating-point rounding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# sRGB (D65) -> XYZ
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
LAB_EPSILON = 216.0 / 24389.0
LAB_KAPPA = 24389.0 / 27.0


def gaussian_filter_valid(a, kernel):
    """Separable 'valid' filtering of an (H, W, C) stack with a 1-D kernel."""
    a = np.asarray(a, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    # Tap-by-tap accumulation: the rounding does not depend on memory layout,
    # so equal inputs give bit-equal outputs wherever they sit in a stack.
    n = kernel.size
    h, w = a.shape[0] - n + 1, a.shape[1] - n + 1
    rows = kernel[0] * a[0:h]
    for k in range(1, n):
        rows = rows + kernel[k] * a[k : k + h]
    out = kernel[0] * rows[:, 0:w]
    for k in range(1, n):
        out = out + kernel[k] * rows[:, k : k + w]
    return out


def srgb_to_lab(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ SRGB_TO_XYZ.T
    t = xyz / D65_WHITE
    f = np.where(t > LAB_EPSILON, np.cbrt(t), (LAB_KAPPA * t + 16.0) / 116.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def ciede2000(lab1, lab2):
    """Vectorised CIEDE2000 with kL = kC = kH = 1 over (..., 3) Lab arrays."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c_bar7 = c_bar**7
    g = 0.5 * (1.0 - np.sqrt(c_bar7 / (c_bar7 + 25.0**7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where((b1 == 0) & (a1p == 0), 0.0, h1p)
    h2p = np.where((b2 == 0) & (a2p == 0), 0.0, h2p)

    chroma_zero = (c1p * c2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(chroma_zero, 0.0, dh)

    dLp = L2 - L1
    dCp = c2p - c1p
    dHp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    Lbar = 0.5 * (L1 + L2)
    Cbar = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    hbar = np.where(
        np.abs(h1p - h2p) <= 180.0,
        0.5 * hsum,
        np.where(hsum < 360.0, 0.5 * (hsum + 360.0), 0.5 * (hsum - 360.0)),
    )
    hbar = np.where(chroma_zero, hsum, hbar)

    T = (
        1.0
        - 0.17 * np.cos(np.radians(hbar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * hbar))
        + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0))
    )
    d_theta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    Cbar7 = Cbar**7
    rc = 2.0 * np.sqrt(Cbar7 / (Cbar7 + 25.0**7))
    lsq = (Lbar - 50.0) ** 2
    sl = 1.0 + 0.015 * lsq / np.sqrt(20.0 + lsq)
    sc = 1.0 + 0.045 * Cbar
    sh = 1.0 + 0.015 * Cbar * T
    rt = -np.sin(np.radians(2.0 * d_theta)) * rc

    tl = dLp / sl
    tc = dCp / sc
    th = dHp / sh
    return np.sqrt(np.maximum(tl * tl + tc * tc + th * th + rt * tc * th, 0.0))


def conv3x3_valid(x, weight, bias):
    """Stride-1 'valid' 3x3 convolution. x: (H, W, Cin); weight: (Cout, Cin, 3, 3)."""
    x = np.asarray(x, dtype=np.float64)
    windows = sliding_window_view(x, (3, 3), axis=(0, 1))  # (H-2, W-2, Cin, 3, 3)
    return np.einsum("hwcij,ocij->hwo", windows, weight) + bias


def ssim_mean(x, y, mu_x, sxx, kernel, c1, c2):
    """Mean SSIM of ``y`` against ``x`` given the filtered statistics of ``x``.

    ``mu_x`` is the windowed mean of x and ``sxx`` its windowed variance.
    """
    c = x.shape[2]
    stacked = gaussian_filter_valid(np.concatenate([y, y * y, x * y], axis=2), kernel)
    mu_y, eyy, exy = stacked[..., :c], stacked[..., c : 2 * c], stacked[..., 2 * c :]
    syy = eyy - mu_y * mu_y
    sxy = exy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def draw_categorical(logits, u):
    """Inverse-CDF draw per row of an (n, K) logit array given n uniforms."""
    logits = np.asarray(logits, dtype=np.float64)
    cdf = np.cumsum(_softmax(logits), axis=-1)
    idx = (np.asarray(u)[:, None] >= cdf).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1).astype(np.int64)


def categorical_step(logits, indices, r0, r1, c0, c1, advantage, lr, full, allowed):
    """In-place descent on advantage * log p(indices) for cells in [r0, r1) x [c0, c1).

    ``full`` selects the complete softmax gradient; otherwise only the sampled
    entry moves. Cells with ``allowed[r, c] == 0`` are skipped (``allowed`` may
    be None).
    """
    cells = logits[r0:r1, c0:c1]
    k = indices[r0:r1, c0:c1]
    p = _softmax(cells)
    onehot = np.eye(logits.shape[2])[k]
    if full:
        grad = advantage * (onehot - p)
    else:
        p_k = np.take_along_axis(p, k[..., None], axis=-1)
        grad = advantage * (1.0 - p_k) * onehot
    if allowed is not None:
        grad = grad * (np.asarray(allowed)[r0:r1, c0:c1, None] != 0)
    cells -= lr * grad
