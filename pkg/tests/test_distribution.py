import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from perceptual_attack.distribution import (
    NoiseGrid,
    Square,
    ThetaField,
    build_sample_space,
    expand_to_pixels,
    grad_step,
    init_uniform_theta,
    place_square,
    resample_square,
    sample_cell,
    softmax,
    square_extent,
)
from perceptual_attack.image import PixelMask


def test_sample_space_values():
    s = build_sample_space(0.05, 1)
    assert list(s.values) == [0.05, 0.0, -0.05]
    s = build_sample_space(0.05, 12)
    assert s.size == 25 and s.values[12] == 0.0
    assert s.values[0] == 0.05 and s.values[-1] == -0.05
    assert np.allclose(np.diff(s.values), -0.05 / 12)
    for bad in (0, 13):
        with pytest.raises(ValueError):
            build_sample_space(0.05, bad)
    with pytest.raises(ValueError):
        build_sample_space(0.0, 1)


def test_uniform_theta_gives_uniform_probabilities():
    theta = init_uniform_theta(3, 4, 2)
    assert np.allclose(theta.probabilities(), 0.2)


def test_square_geometry():
    assert square_extent(0.01, 16, 16) == (2, 2)  # sqrt(2.56) = 1.6 -> 2
    assert square_extent(0.001, 16, 16) == (1, 1)
    assert square_extent(1.0, 5, 7) == (5, 7)
    assert square_extent(0.9, 2, 20) == (2, 6)
    assert place_square(0.01, 16, 16, 0.0, 0.0) == Square(0, 0, 2, 2)
    assert place_square(0.01, 16, 16, 0.9999, 0.9999) == Square(14, 14, 16, 16)
    with pytest.raises(ValueError):
        square_extent(0.0, 4, 4)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.floats(0.001, 1.0), st.integers(0, 2**32))
def test_resample_changes_only_the_square(th, tw, q, seed):
    rng = np.random.default_rng(seed)
    theta = ThetaField(rng.normal(size=(th, tw, 3)))
    best = NoiseGrid(rng.integers(0, 3, (th, tw)))
    new, sq = resample_square(best, q, theta, rng=rng)
    outside = np.ones((th, tw), bool)
    outside[sq.slices] = False
    assert np.array_equal(new.indices[outside], best.indices[outside])
    assert new.indices.min() >= 0 and new.indices.max() <= 2
    assert (sq.r1 - sq.r0, sq.c1 - sq.c0) == square_extent(q, th, tw)
    assert best.indices is not new.indices


def test_resample_respects_allowed_tiles():
    rng = np.random.default_rng(0)
    theta = ThetaField(np.tile([5.0, -5.0, -5.0], (4, 4, 1)))  # strongly prefers +eps
    allowed = np.zeros((4, 4), bool)
    allowed[:, 2:] = True
    new, _ = resample_square(NoiseGrid.zeros(4, 4, build_sample_space(0.05, 1)), 1.0, theta,
                             allowed, rng)
    assert np.all(new.indices[:, :2] == 1)
    assert np.all(new.indices[:, 2:] == 0)


def test_resample_requires_rng():
    theta = init_uniform_theta(2, 2, 1)
    with pytest.raises(ValueError):
        resample_square(NoiseGrid(np.ones((2, 2), int)), 0.5, theta)


def test_sample_cell_frequencies():
    rng = np.random.default_rng(5)
    theta = ThetaField(np.log(np.array([0.2, 0.5, 0.3]))[None, None])
    draws = np.bincount([sample_cell(theta, (0, 0), rng) for _ in range(20000)], minlength=3)
    assert np.allclose(draws / 20000, [0.2, 0.5, 0.3], atol=0.015)
    with pytest.raises(IndexError):
        sample_cell(theta, (1, 0), rng)


def test_expand_to_pixels_crops_and_masks():
    space = build_sample_space(0.05, 1)
    grid = NoiseGrid(np.array([[0, 2], [1, 0]]))
    noise = expand_to_pixels(grid, space, 2, 3, 4)
    assert noise.shape == (3, 4)
    assert np.all(noise[:2, :2] == 0.05) and np.all(noise[:2, 2:] == -0.05)
    assert np.all(noise[2, :2] == 0.0) and np.all(noise[2, 2:] == 0.05)
    allowed = np.ones((3, 4), bool)
    allowed[0, 0] = False
    masked = expand_to_pixels(grid, space, 2, 3, 4, PixelMask(allowed))
    assert masked[0, 0] == 0.0 and masked[0, 1] == 0.05
    with pytest.raises(ValueError):
        expand_to_pixels(grid, space, 2, 5, 4)


# --- score-function update -------------------------------------------------------


def test_full_categorical_step_by_hand():
    theta = ThetaField(np.zeros((1, 1, 3)))
    out = grad_step(theta, NoiseGrid(np.array([[2]])), Square(0, 0, 1, 1), 1.0, 0.5, 0.3)
    # descent on A * (onehot - p) with A = 0.5, p = 1/3
    want = -0.3 * 0.5 * (np.array([0, 0, 1]) - 1 / 3)
    assert np.allclose(out.logits[0, 0], want)
    assert np.all(theta.logits == 0)  # input left untouched


def test_sampled_entry_mode_moves_only_that_logit():
    theta = ThetaField(np.zeros((1, 2, 3)))
    out = grad_step(theta, NoiseGrid(np.array([[0, 1]])), Square(0, 0, 1, 2), 0.0, 1.0, 0.1,
                    mode="paper_eq5")
    assert out.logits[0, 0, 0] == pytest.approx(0.1 * (1 - 1 / 3))
    assert out.logits[0, 1, 1] == pytest.approx(0.1 * (1 - 1 / 3))
    assert out.logits[0, 0, 1] == 0 and out.logits[0, 0, 2] == 0


def test_step_limited_to_region_and_allowed_tiles():
    theta = ThetaField(np.zeros((3, 3, 3)))
    allowed = np.ones((3, 3), bool)
    allowed[1, 1] = False
    out = grad_step(theta, NoiseGrid(np.zeros((3, 3), int)), Square(1, 1, 3, 3), 2.0, 1.0, 0.5,
                    allowed_tiles=allowed)
    changed = np.any(out.logits != 0, axis=2)
    assert changed.tolist() == [[False] * 3, [False, False, True], [False, True, True]]


def test_step_validates_inputs():
    theta = init_uniform_theta(2, 2, 1)
    d = NoiseGrid(np.ones((2, 2), int))
    with pytest.raises(ValueError):
        grad_step(theta, d, Square(0, 0, 3, 1), 1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        grad_step(theta, d, Square(0, 0, 1, 1), 1.0, 0.0, 0.1, mode="adam")


states = st.tuples(
    st.integers(0, 2**32 - 1),
    st.integers(1, 12),
    st.sampled_from(["full_categorical", "paper_eq5"]),
    st.floats(0.0, 5.0),
    # |A| >= 1e-6: smaller steps fall below float resolution of the logits
    st.one_of(st.floats(-3.0, -1e-6), st.floats(1e-6, 3.0)),
    st.floats(1e-3, 1.0),
)


def _random_state(seed, n_freq):
    rng = np.random.default_rng(seed)
    th, tw = rng.integers(1, 6, 2)
    theta = ThetaField(rng.normal(0, 2, (th, tw, 2 * n_freq + 1)))
    delta = NoiseGrid(rng.integers(0, 2 * n_freq + 1, (th, tw)))
    r0, c0 = rng.integers(0, th), rng.integers(0, tw)
    region = Square(int(r0), int(c0), int(rng.integers(r0 + 1, th + 1)),
                    int(rng.integers(c0 + 1, tw + 1)))
    return theta, delta, region


def sampled_probs(theta, delta, region):
    p = softmax(theta.logits)
    r, c = np.mgrid[region.slices]
    return p[r, c, delta.indices[r, c]]


def check_three_cases(state):
    seed, n_freq, mode, baseline, advantage, lr = state
    theta, delta, region = _random_state(seed, n_freq)
    before = sampled_probs(theta, delta, region)
    same = grad_step(theta, delta, region, baseline, baseline, lr, mode)
    assert np.array_equal(same.logits, theta.logits)
    after = sampled_probs(grad_step(theta, delta, region, baseline + advantage, baseline, lr, mode),
                          delta, region)
    # probabilities saturated at 1.0 cannot move in floating point
    live = before < 1.0
    if advantage < 0:
        assert np.all(after[live] > before[live])
    else:
        assert np.all(after[live] < before[live])


@settings(max_examples=300, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(states)
def test_three_case_behaviour(backend, state):
    check_three_cases(state)


def test_full_categorical_is_exact_log_prob_gradient(rng):
    logits = rng.normal(size=(1, 1, 5))
    theta = ThetaField(logits.copy())
    k = 3
    out = grad_step(theta, NoiseGrid(np.array([[k]])), Square(0, 0, 1, 1), 1.0, 0.0, 1.0)
    h = 1e-6
    fd = np.zeros(5)
    for i in range(5):
        up, dn = logits[0, 0].copy(), logits[0, 0].copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (math.log(softmax(up)[k]) - math.log(softmax(dn)[k])) / (2 * h)
    assert np.allclose(logits[0, 0] - out.logits[0, 0], fd, atol=1e-8)
