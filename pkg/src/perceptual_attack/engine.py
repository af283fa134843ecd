"""The attack loop: learn a tile noise distribution until the label flips."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .distribution import (
    GRAD_MODES,
    MAX_FREQUENCY,
    NoiseGrid,
    build_sample_space,
    expand_to_pixels,
    grad_step,
    grid_shape,
    init_uniform_theta,
    resample_square,
)
from .image import ImageTensor, PixelMask, apply_noise
from .metrics import MetricKind
from .oracle import QueryCounter, predict_logits, predicted_class

DYNAMIC = "dynamic"
LAMBDA_LADDER = (1000.0, 500.0, 250.0, 125.0, 62.5, 31.25, 15.625, 0.0)
MIN_MASK_FRACTION = 0.10
LR_SCHEDULES = ("constant", "decaying")


@dataclass(frozen=True)
class AttackConfig:
    eps: float = 0.05
    n_freq: int = 1
    q: float = 0.01
    lam: float | str = 10.0
    lr: float = 0.01
    lr_schedule: str = "constant"
    tile_size: int = 2
    metric: MetricKind = field(default_factory=lambda: MetricKind("one_minus_ssim"))
    max_queries: int = 10_000
    seed: int = 0
    grad_mode: str = "full_categorical"
    mask: PixelMask | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 1 <= self.n_freq <= MAX_FREQUENCY:
            raise ValueError(f"n_freq must be in [1, {MAX_FREQUENCY}], got {self.n_freq}")
        if not 0 < self.q <= 1:
            raise ValueError("q must be in (0, 1]")
        if self.lam != DYNAMIC and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            raise ValueError(f"lambda must be >= 0 or {DYNAMIC!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")

    @property
    def dynamic(self) -> bool:
        return self.lam == DYNAMIC


@dataclass
class AttackState:
    """Loop state; ``best_loss`` is the baseline b, ``best_delta`` is delta at T*."""

    t: int
    theta: object
    best_delta: NoiseGrid
    best_loss: float
    trace: list[float]
    counter: QueryCounter


@dataclass
class AttackResult:
    success: bool
    queries_used: int
    adversarial: ImageTensor
    delta: np.ndarray
    scores: dict[str, float]
    lambda_used: float
    original_class: int
    final_class: int
    trace: list[float]
    stages: list[dict] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def margin_loss(logits, y: int) -> float:
    """max(0, f_y - max_{k != y} f_k)."""
    others = np.array(logits, dtype=np.float64)
    true_score = others[y]
    others[y] = -np.inf
    return max(0.0, float(true_score - others.max()))


def total_loss(logits, y: int, x, x_adv, lam: float, metric: MetricKind) -> float:
    loss = margin_loss(logits, y)
    if lam == 0:
        return loss
    return loss + lam * metrics.distance(metric, x, x_adv)


def is_success(logits, original_class: int) -> bool:
    """Evaluated on logits already fetched for the loss; costs no extra query."""
    return predicted_class(logits) != original_class


def learning_rate_at(schedule: str, base_lr: float, t: int) -> float:
    if t < 1:
        raise ValueError("step index starts at 1")
    if schedule == "constant":
        return base_lr
    if schedule == "decaying":
        return base_lr / math.sqrt(t * math.log(t + 1))
    raise ValueError(f"unknown schedule {schedule!r}")


def score_pair(x: ImageTensor, x_adv: ImageTensor, eps: float) -> dict[str, float]:
    """All reported distortion scores, recomputed from the returned image pair."""
    xa, xb = x.data, x_adv.data
    if x.channels == 1:  # grey as neutral RGB for the colour metric
        xa3, xb3 = np.repeat(xa, 3, axis=2), np.repeat(xb, 3, axis=2)
    else:
        xa3, xb3 = xa, xb
    small = min(x.height, x.width) < metrics.DEFAULT_SSIM.window_size
    return {
        "one_minus_ssim": math.nan if small else metrics.one_minus_ssim(xa, xb),
        "ciede2000": metrics.ciede2000_image(xa3, xb3),
        "l0": metrics.lp_normalized(xa, xb, 0, eps),
        "l1": metrics.lp_normalized(xa, xb, 1, eps),
        "l2": metrics.lp_normalized(xa, xb, 2, eps),
    }


def _check_mask(config: AttackConfig, x: ImageTensor) -> None:
    mask = config.mask
    if mask is None:
        return
    if (mask.height, mask.width) != (x.height, x.width):
        raise ValueError("mask dimensions do not match the image")
    if mask.allowed_fraction < MIN_MASK_FRACTION:
        raise ValueError(
            f"mask leaves {mask.allowed_fraction:.1%} of the image perturbable; "
            f"need at least {MIN_MASK_FRACTION:.0%}"
        )


@dataclass
class _Stage:
    success: bool
    delta: NoiseGrid
    x_adv: ImageTensor
    logits: np.ndarray | None
    trace: list[float]
    distance: float | None = None


class _Runner:
    """Shared machinery for plain and dynamic-lambda attacks on one image."""

    def __init__(self, config: AttackConfig, x: ImageTensor, oracle, counter: QueryCounter):
        _check_mask(config, x)
        self.config = config
        self.x = x
        self.oracle = oracle
        self.counter = counter
        self.space = build_sample_space(config.eps, config.n_freq)
        self.grid = grid_shape(x.height, x.width, config.tile_size)
        self.allowed_tiles = (
            None if config.mask is None else config.mask.tiles_allowed(config.tile_size)
        )
        self.rng = np.random.default_rng(config.seed)
        self._distance = None
        self.clean_logits = None
        self.y = None

    def distance(self, x_adv) -> float:
        if self._distance is None:
            self._distance = metrics.prepare_distance(self.config.metric, self.x)
        return self._distance(x_adv)

    def loss(self, logits, x_adv, lam) -> float:
        loss = margin_loss(logits, self.y)
        if lam == 0:
            return loss
        return loss + lam * self.distance(x_adv)

    def query(self, x_adv) -> np.ndarray:
        return predict_logits(self.oracle, x_adv, self.counter)

    def realise(self, delta: NoiseGrid) -> ImageTensor:
        noise = expand_to_pixels(
            delta, self.space, self.config.tile_size, self.x.height, self.x.width, self.config.mask
        )
        return apply_noise(self.x, noise)

    def query_clean(self) -> bool:
        if self.counter.remaining < 1:
            return False
        self.clean_logits = self.query(self.x)
        self.y = predicted_class(self.clean_logits)
        return True

    def optimise(self, lam: float, start: NoiseGrid | None, limit: int) -> _Stage:
        """Run the sampling loop with ``lam`` until the label flips or ``limit`` queries."""
        cfg = self.config
        if start is None:
            delta0, x0, logits0 = NoiseGrid.zeros(*self.grid, self.space), self.x, self.clean_logits
        else:
            delta0, x0 = start, self.realise(start)
            logits0 = self.query(x0)
            if is_success(logits0, self.y):
                return _Stage(True, delta0, x0, logits0, [])
        state = AttackState(
            t=0,
            theta=init_uniform_theta(*self.grid, cfg.n_freq),
            best_delta=delta0,
            best_loss=self.loss(logits0, x0, lam),
            trace=[],
            counter=self.counter,
        )
        last = (delta0, x0, logits0)
        previous = None  # (delta, square, loss, baseline at sampling time)
        while self.counter.used < limit:
            state.t += 1
            if previous is not None:
                p_delta, p_square, p_loss, p_base = previous
                state.theta = grad_step(
                    state.theta,
                    p_delta,
                    p_square,
                    p_loss,
                    p_base,
                    learning_rate_at(cfg.lr_schedule, cfg.lr, state.t),
                    cfg.grad_mode,
                    self.allowed_tiles,
                )
            baseline = state.best_loss
            delta, square = resample_square(
                state.best_delta, cfg.q, state.theta, self.allowed_tiles, self.rng
            )
            x_adv = self.realise(delta)
            logits = self.query(x_adv)
            loss = self.loss(logits, x_adv, lam)
            previous = (delta, square, loss, baseline)
            if loss < state.best_loss:
                state.best_loss = loss
                state.best_delta = delta
            state.trace.append(state.best_loss)
            last = (delta, x_adv, logits)
            if is_success(logits, self.y):
                return _Stage(True, delta, x_adv, logits, state.trace)
        # no flip: report the best noise found
        best_x = last[1] if state.best_delta is last[0] else self.realise(state.best_delta)
        return _Stage(False, state.best_delta, best_x, None, state.trace)

    def result(self, stage: _Stage | None, lam, stages=()) -> AttackResult:
        y = self.y if self.y is not None else -1
        if stage is None:
            x_adv, success, trace = self.x, False, []
            noise = np.zeros((self.x.height, self.x.width))
        else:
            x_adv, success, trace = stage.x_adv, stage.success, stage.trace
            noise = expand_to_pixels(
                stage.delta, self.space, self.config.tile_size,
                self.x.height, self.x.width, self.config.mask,
            )
        # every queried sample before the last was not adversarial
        final = predicted_class(stage.logits) if success else y
        return AttackResult(
            success=success,
            queries_used=self.counter.used,
            adversarial=x_adv,
            delta=noise,
            scores=score_pair(self.x, x_adv, self.config.eps),
            lambda_used=float(lam),
            original_class=y,
            final_class=final,
            trace=list(trace),
            stages=list(stages),
        )


def run_attack(config: AttackConfig, x: ImageTensor, oracle) -> AttackResult:
    """Attack ``x`` with a fixed lambda; failure to flip within budget is a result."""
    if config.dynamic:
        return dynamic_lambda_search(config, x, oracle)
    counter = QueryCounter(config.max_queries)
    runner = _Runner(config, x, oracle, counter)
    if not runner.query_clean():
        return runner.result(None, config.lam)
    stage = runner.optimise(float(config.lam), None, config.max_queries)
    return runner.result(stage, config.lam)


def dynamic_lambda_search(config: AttackConfig, x: ImageTensor, oracle) -> AttackResult:
    """Run the lambda ladder from 1000 down to 0, one budget slice per rung.

    Each rung starts from the noise the previous rung ended on. Among the rungs
    that flip the label, the one with the smallest distance under
    ``config.metric`` is returned.
    """
    counter = QueryCounter(config.max_queries)
    runner = _Runner(config, x, oracle, counter)
    if not runner.query_clean():
        return runner.result(None, 0.0)
    per_stage = config.max_queries // len(LAMBDA_LADDER)
    best: tuple[float, _Stage, float] | None = None
    start = None
    log = []
    for i, lam in enumerate(LAMBDA_LADDER):
        if counter.remaining < 1:
            break
        last_rung = i == len(LAMBDA_LADDER) - 1
        limit = config.max_queries if last_rung else min(config.max_queries, (i + 1) * per_stage)
        if counter.used >= limit:
            continue
        before = counter.used
        stage = runner.optimise(lam, start, limit)
        entry = {"lambda": lam, "success": stage.success, "queries": counter.used - before}
        if stage.success:
            stage.distance = runner.distance(stage.x_adv)
            entry["distance"] = stage.distance
            if best is None or stage.distance < best[0]:
                best = (stage.distance, stage, lam)
        log.append(entry)
        start = stage.delta
    if best is None:
        return runner.result(stage if log else None, 0.0, log)
    return runner.result(best[1], best[2], log)
