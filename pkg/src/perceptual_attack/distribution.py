"""Per-tile categorical noise distribution and its score-function update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

MAX_FREQUENCY = 12
GRAD_MODES = ("full_categorical", "paper_eq5")


@dataclass(frozen=True, eq=False)
class SampleSpace:
    """The 2N+1 noise levels eps, eps - eps/N, ..., 0, ..., -eps."""

    eps: float
    n_freq: int
    values: np.ndarray

    @property
    def size(self) -> int:
        return 2 * self.n_freq + 1

    @property
    def zero_index(self) -> int:
        return self.n_freq


def build_sample_space(eps: float, n_freq: int) -> SampleSpace:
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 1 <= n_freq <= MAX_FREQUENCY:
        raise ValueError(f"n_freq must be in [1, {MAX_FREQUENCY}], got {n_freq}")
    # eps * (N - i) / N keeps the endpoints and the midpoint exact.
    values = np.array([eps * ((n_freq - i) / n_freq) for i in range(2 * n_freq + 1)])
    values.flags.writeable = False
    return SampleSpace(float(eps), int(n_freq), values)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ThetaField:
    logits: np.ndarray  # (tile_h, tile_w, 2N+1)

    @property
    def tile_h(self) -> int:
        return self.logits.shape[0]

    @property
    def tile_w(self) -> int:
        return self.logits.shape[1]

    @property
    def n_values(self) -> int:
        return self.logits.shape[2]

    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    indices: np.ndarray  # (tile_h, tile_w) ints into SampleSpace.values

    @classmethod
    def zeros(cls, tile_h: int, tile_w: int, space: SampleSpace) -> "NoiseGrid":
        return cls(np.full((tile_h, tile_w), space.zero_index, dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.indices.shape


@dataclass(frozen=True)
class Square:
    """Tile-space region [r0, r1) x [c0, c1)."""

    r0: int
    c0: int
    r1: int
    c1: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.r0, self.r1), slice(self.c0, self.c1)


def grid_shape(h: int, w: int, tile_size: int) -> tuple[int, int]:
    return -(-h // tile_size), -(-w // tile_size)


def init_uniform_theta(tile_h: int, tile_w: int, n_freq: int) -> ThetaField:
    if tile_h < 1 or tile_w < 1:
        raise ValueError("grid dimensions must be positive")
    return ThetaField(np.zeros((tile_h, tile_w, 2 * n_freq + 1)))


def sample_cell(theta: ThetaField, cell: tuple[int, int], rng: np.random.Generator) -> int:
    r, c = cell
    if not (0 <= r < theta.tile_h and 0 <= c < theta.tile_w):
        raise IndexError(f"cell {cell} outside {theta.tile_h}x{theta.tile_w} grid")
    return int(kernels.draw_categorical(theta.logits[r, c][None], rng.random(1))[0])


def square_side(q: float, tile_h: int, tile_w: int) -> int:
    return max(1, int(math.floor(math.sqrt(q * tile_h * tile_w) + 0.5)))


def square_extent(q: float, tile_h: int, tile_w: int) -> tuple[int, int]:
    """Height and width of the resampled square, clipped to the grid."""
    if not 0 < q <= 1:
        raise ValueError("q must be in (0, 1]")
    if q == 1:
        return tile_h, tile_w
    side = square_side(q, tile_h, tile_w)
    return min(side, tile_h), min(side, tile_w)


def place_square(q: float, tile_h: int, tile_w: int, u_row: float, u_col: float) -> Square:
    """Square with its top-left corner chosen uniformly from two uniforms in [0, 1)."""
    sh, sw = square_extent(q, tile_h, tile_w)
    r0 = min(int(u_row * (tile_h - sh + 1)), tile_h - sh)
    c0 = min(int(u_col * (tile_w - sw + 1)), tile_w - sw)
    return Square(r0, c0, r0 + sh, c0 + sw)


def resample_square(
    delta_best: NoiseGrid,
    q: float,
    theta: ThetaField,
    allowed_tiles: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[NoiseGrid, Square]:
    """Copy ``delta_best`` and redraw one random square of cells from ``theta``.

    ``allowed_tiles`` is a tile-level boolean grid (see
    :meth:`PixelMask.tiles_allowed`); cells in the square with no perturbable
    pixel are set to the zero-noise index instead of being sampled.
    Returns the new grid and the square that was redrawn.
    """
    if rng is None:
        raise ValueError("an explicit random generator is required")
    th, tw = delta_best.shape
    if theta.logits.shape[:2] != (th, tw):
        raise ValueError("theta and noise grid dimensions differ")
    sh, sw = square_extent(q, th, tw)
    u = rng.random(2 + sh * sw)
    square = place_square(q, th, tw, u[0], u[1])
    out = delta_best.indices.copy()
    region = out[square.slices]
    logits = theta.logits[square.slices]
    u_cells = u[2:].reshape(sh, sw)
    if allowed_tiles is None:
        drawn = kernels.draw_categorical(logits.reshape(-1, theta.n_values), u[2:])
        region[...] = drawn.reshape(sh, sw)
    else:
        ok = allowed_tiles[square.slices]
        region[~ok] = theta.n_values // 2
        if ok.any():
            region[ok] = kernels.draw_categorical(logits[ok], u_cells[ok])
    return NoiseGrid(out), square


def grad_step(
    theta: ThetaField,
    delta: NoiseGrid,
    region: Square,
    loss: float,
    baseline: float,
    lr: float,
    mode: str = "full_categorical",
    allowed_tiles: np.ndarray | None = None,
) -> ThetaField:
    """One descent step on (loss - baseline) * log p(delta) over the cells in ``region``.

    ``paper_eq5`` moves only the sampled entry of each cell, by
    -lr * A * (1 - p_k); ``full_categorical`` also moves every other entry by
    +lr * A * p_i, which is the exact gradient of A * log p_k. Cells whose
    ``allowed_tiles`` entry is False were not sampled and are left alone.
    """
    if mode not in GRAD_MODES:
        raise ValueError(f"unknown gradient mode {mode!r}")
    th, tw = theta.tile_h, theta.tile_w
    if not (0 <= region.r0 < region.r1 <= th and 0 <= region.c0 < region.c1 <= tw):
        raise ValueError(f"region {region} outside {th}x{tw} grid")
    advantage = loss - baseline
    if advantage == 0:
        return theta
    logits = theta.logits.copy()
    kernels.categorical_step(
        logits, delta.indices, region.r0, region.r1, region.c0, region.c1,
        float(advantage), float(lr), mode == "full_categorical", allowed_tiles,
    )
    return ThetaField(logits)


def expand_to_pixels(
    delta: NoiseGrid,
    space: SampleSpace,
    tile_size: int,
    h: int,
    w: int,
    mask=None,
) -> np.ndarray:
    """Per-pixel (h, w) noise map; edge tiles are cropped, masked pixels get 0."""
    if delta.shape != grid_shape(h, w, tile_size):
        raise ValueError(
            f"grid {delta.shape} does not tile a {h}x{w} image with tile size {tile_size}"
        )
    tiles = space.values[delta.indices]
    noise = np.repeat(np.repeat(tiles, tile_size, axis=0), tile_size, axis=1)[:h, :w]
    if mask is not None:
        noise = np.where(mask.allowed, noise, 0.0)
    return noise
