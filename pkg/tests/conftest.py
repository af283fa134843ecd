import numpy as np
import pytest

from perceptual_attack import kernels
from perceptual_attack.image import ImageTensor
from perceptual_attack.oracle import BuiltinOracle, Layer, Model

BACKENDS = kernels.backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Route the package's kernel calls through each available backend in turn."""
    impl = BACKENDS[request.param]
    for name in (
        "gaussian_filter_valid", "srgb_to_lab", "ciede2000", "conv3x3_valid",
        "ssim_mean", "draw_categorical", "categorical_step",
    ):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=16, w=16, c=3):
    return ImageTensor(rng.random((h, w, c)))


def linear_oracle(weight, bias, shape):
    """Dense-only model: logits = weight @ x.ravel() + bias."""
    model = Model((Layer("dense", np.asarray(weight, float), np.asarray(bias, float)),), shape)
    return BuiltinOracle(model)


class ScriptedOracle:
    """Returns logits from a callable of the queried image; counts calls."""

    def __init__(self, fn, num_classes=2):
        self.fn = fn
        self.calls = 0
        self.num_classes = num_classes

    def _forward(self, x):
        self.calls += 1
        return np.asarray(self.fn(x.data), dtype=np.float64)

    def close(self):
        pass


ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
