"""Desk-scale stand-in target: a random two-layer classifier and smooth images.

    perceptual-attack-toy --out toy/ --images 50 --seed 0

writes ``toy/model.json`` and ``toy/images/img_XXX.png``.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .image import ImageTensor, save_png
from .oracle import Layer, Model, builtin_forward, save_weights

SIZE = 32
CHANNELS = 3
CLASSES = 10
HIDDEN = 64


def make_classifier(seed: int = 0, hidden: int = HIDDEN, size: int = SIZE,
                    channels: int = CHANNELS, classes: int = CLASSES) -> Model:
    rng = np.random.default_rng(seed)
    n_in = size * size * channels
    w1 = rng.normal(0.0, 1.0 / np.sqrt(n_in), (hidden, n_in)) * 8.0
    b1 = rng.normal(0.0, 0.5, hidden)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), (classes, hidden)) * 2.0
    b2 = np.zeros(classes)
    layers = (
        Layer("dense", w1, b1),
        Layer("relu"),
        Layer("dense", w2, b2),
    )
    for layer in layers:
        for a in (layer.w, layer.b):
            if a is not None:
                a.flags.writeable = False
    return Model(layers, (size, size, channels))


def smooth_image(rng: np.random.Generator, size: int = SIZE, channels: int = CHANNELS) -> np.ndarray:
    """Low-frequency cosine mixture in [0.15, 0.85], quantised to 8 bits."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((size, size, channels))
    base = rng.uniform(0.3, 0.7, channels)
    for c in range(channels):
        field = np.zeros((size, size))
        for _ in range(4):
            fy, fx = rng.integers(0, 4, 2)
            phase = rng.uniform(0, 2 * np.pi)
            field += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
        field /= np.abs(field).max() + 1e-12
        img[:, :, c] = base[c] + 0.15 * field
    img = np.clip(img, 0.15, 0.85)
    return np.floor(img * 255.0 + 0.5) / 255.0


def margin(logits) -> float:
    top2 = np.sort(logits)[-2:]
    return float(top2[1] - top2[0])


def make_inputs(model: Model, n: int, seed: int = 0, min_margin: float = 1.0,
                max_tries: int = 100_000) -> list[ImageTensor]:
    """``n`` smooth images the model classifies with top-2 logit gap above ``min_margin``."""
    rng = np.random.default_rng(seed)
    size, _, channels = model.input_shape
    out = []
    for _ in range(max_tries):
        img = smooth_image(rng, size, channels)
        if margin(builtin_forward(model, img)) > min_margin:
            out.append(ImageTensor(img))
            if len(out) == n:
                return out
    raise RuntimeError(f"found only {len(out)} of {n} inputs with margin > {min_margin}")


def write_toy(outdir, n: int = 50, seed: int = 0) -> tuple[Path, list[Path]]:
    outdir = Path(outdir)
    (outdir / "images").mkdir(parents=True, exist_ok=True)
    model = make_classifier(seed)
    model_path = outdir / "model.json"
    save_weights(model, model_path)
    paths = []
    for i, img in enumerate(make_inputs(model, n, seed)):
        p = outdir / "images" / f"img_{i:03d}.png"
        save_png(img, p)
        paths.append(p)
    return model_path, paths


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write a toy model and test images.")
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    model_path, paths = write_toy(args.out, args.images, args.seed)
    print(f"wrote {model_path} and {len(paths)} images")


if __name__ == "__main__":
    main()
