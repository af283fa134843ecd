import math
from dataclasses import replace

import numpy as np
import pytest

from perceptual_attack.engine import (
    LAMBDA_LADDER,
    AttackConfig,
    dynamic_lambda_search,
    is_success,
    learning_rate_at,
    margin_loss,
    run_attack,
    total_loss,
)
from perceptual_attack.image import BoundingBox, ImageTensor, mask_from_bbox
from perceptual_attack.metrics import MetricKind
from perceptual_attack.toy import make_classifier, make_inputs
from perceptual_attack.oracle import BuiltinOracle

from conftest import ScriptedOracle, linear_oracle


def test_margin_loss_by_hand():
    assert margin_loss([2.0, 5.0, 1.0], 1) == 3.0
    assert margin_loss([2.0, 5.0, 1.0], 0) == 0.0
    assert margin_loss([4.0, 4.0], 0) == 0.0


def test_total_loss_adds_weighted_distance():
    x = ImageTensor(np.full((2, 2, 3), 0.5))
    y = ImageTensor(np.full((2, 2, 3), 0.55))
    l0 = MetricKind.parse("l0", 0.05)
    assert total_loss([4.0, 0.5], 0, x, y, 0.0, l0) == 3.5
    assert total_loss([4.0, 0.5], 0, x, y, 2.0, l0) == pytest.approx(5.5)


def test_success_uses_tie_rule():
    assert not is_success([3.0, 3.0], 0)
    assert is_success([3.0, 3.0], 1)


def test_learning_rate_schedules():
    assert learning_rate_at("constant", 0.2, 50) == 0.2
    assert learning_rate_at("decaying", 1.0, 1) == pytest.approx(1 / math.sqrt(math.log(2)))
    t = np.arange(1, 10_001)
    rates = np.array([learning_rate_at("decaying", 1.0, int(k)) for k in t])
    assert np.all(np.diff(rates) < 0)
    with pytest.raises(ValueError):
        learning_rate_at("decaying", 1.0, 0)


def test_decaying_rate_squares_do_not_converge():
    # sum of 1/(t ln(t+1)) grows like ln ln t: the tail over [1e3, 1e6] is about ln 2
    t = np.arange(1_000, 1_000_001, dtype=float)
    tail = float(np.sum(1.0 / (t * np.log(t + 1))))
    assert tail > 0.6
    assert learning_rate_at("decaying", 1.0, 1_000) ** 2 == pytest.approx(
        1 / (1000 * math.log(1001))
    )


def test_config_validation():
    for bad in (dict(eps=0), dict(q=0), dict(q=1.5), dict(lam=-1), dict(lam="auto"),
                dict(lr=0), dict(lr_schedule="cosine"), dict(tile_size=0),
                dict(max_queries=0), dict(grad_mode="sgd")):
        with pytest.raises(ValueError):
            AttackConfig(**bad)


def flat_image(h=12, w=12, c=1, v=0.5):
    return ImageTensor(np.full((h, w, c), v))


def test_budget_of_one_spends_only_the_clean_query():
    oracle = ScriptedOracle(lambda x: [1.0, 0.0])
    r = run_attack(AttackConfig(max_queries=1, lam=0.0), flat_image(), oracle)
    assert not r.success and r.queries_used == 1 == oracle.calls
    assert r.trace == [] and np.all(r.delta == 0)
    assert r.final_class == r.original_class == 0


def test_easy_flip_in_few_queries():
    # any change from the clean image flips the label
    oracle = ScriptedOracle(lambda x: [1.0, 0.0] if np.all(x == 0.5) else [0.0, 1.0])
    r = run_attack(AttackConfig(q=1.0, lam=0.0, tile_size=1), flat_image(), oracle)
    assert r.success and r.queries_used <= 3 and r.queries_used == oracle.calls
    assert r.final_class == 1 and len(r.trace) == r.queries_used - 1


def test_never_flipping_model_exhausts_budget():
    oracle = ScriptedOracle(lambda x: [1.0 + x.mean(), 0.0])
    r = run_attack(AttackConfig(max_queries=50, lam=0.0), flat_image(), oracle)
    assert not r.success and r.queries_used == 50 == oracle.calls
    assert len(r.trace) == 49
    assert all(a >= b for a, b in zip(r.trace, r.trace[1:]))
    assert np.max(np.abs(r.adversarial.data - 0.5)) <= 0.05 + 1e-12


@pytest.fixture(scope="module")
def toy():
    model = make_classifier(0, hidden=32)
    return BuiltinOracle(model), make_inputs(model, 3, seed=1)


def test_attack_on_toy_is_deterministic(toy):
    oracle, xs = toy
    cfg = AttackConfig(lam=10.0, max_queries=400, seed=7)
    a, b = run_attack(cfg, xs[0], oracle), run_attack(cfg, xs[0], oracle)
    assert a.queries_used == b.queries_used and a.trace == b.trace
    assert np.array_equal(a.delta, b.delta)
    c = run_attack(replace(cfg, seed=8), xs[0], oracle)
    assert c.trace != a.trace or c.queries_used != a.queries_used


def test_lambda_zero_ignores_metric(toy):
    oracle, xs = toy
    base = AttackConfig(lam=0.0, max_queries=300, seed=3)
    runs = [run_attack(replace(base, metric=MetricKind.parse(m, 0.05)), xs[1], oracle)
            for m in ("ssim", "ciede2000", "l2")]
    for r in runs[1:]:
        assert r.trace == runs[0].trace and np.array_equal(r.delta, runs[0].delta)


def test_result_fields_are_consistent(toy):
    oracle, xs = toy
    r = run_attack(AttackConfig(lam=0.0, max_queries=2000, seed=1), xs[2], oracle)
    assert r.success
    assert np.array_equal(r.adversarial.data, np.clip(xs[2].data + r.delta[:, :, None], 0, 1))
    assert set(np.unique(r.delta)) <= {-0.05, 0.0, 0.05}
    assert r.final_class != r.original_class
    assert r.trace[-1] >= 0.0


def test_mask_keeps_noise_outside_box(toy):
    oracle, xs = toy
    mask = mask_from_bbox(BoundingBox(8, 0, 24, 32), 32, 32)
    r = run_attack(AttackConfig(lam=0.0, max_queries=500, seed=2, mask=mask), xs[0], oracle)
    assert np.all(r.delta[:, 8:24] == 0)
    assert np.array_equal(r.adversarial.data[:, 8:24], xs[0].data[:, 8:24])


def test_odd_tile_mask_boundary(toy):
    oracle, xs = toy
    # box edge at x=9 splits tiles of size 2: the shared tile carries noise only left of 9
    mask = mask_from_bbox(BoundingBox(9, 0, 32, 32), 32, 32)
    r = run_attack(AttackConfig(lam=0.0, q=0.3, max_queries=200, seed=0, mask=mask), xs[0], oracle)
    assert np.all(r.delta[:, 9:] == 0)


def test_tiny_mask_rejected(toy):
    oracle, xs = toy
    mask = mask_from_bbox(BoundingBox(0, 0, 32, 30), 32, 32)
    with pytest.raises(ValueError, match="perturbable"):
        run_attack(AttackConfig(mask=mask), xs[0], oracle)


def test_grayscale_scores_use_neutral_colour():
    oracle = ScriptedOracle(lambda x: [0.0, 1.0] if np.any(x != 0.5) else [1.0, 0.0])
    r = run_attack(AttackConfig(q=1.0, lam=0.0), flat_image(16, 16, 1), oracle)
    assert r.success and r.scores["ciede2000"] > 0 and not math.isnan(r.scores["one_minus_ssim"])


# --- dynamic lambda ----------------------------------------------------------------


def test_dynamic_all_stages_fail_uses_whole_budget():
    oracle = ScriptedOracle(lambda x: [5.0, 0.0])
    cfg = AttackConfig(lam="dynamic", max_queries=83)
    r = run_attack(cfg, flat_image(), oracle)
    assert not r.success and r.queries_used == 83 == oracle.calls
    assert [s["lambda"] for s in r.stages] == list(LAMBDA_LADDER)
    per = 83 // 8
    # first rung shares its slice with the clean query; each later rung starts with a warm query
    assert [s["queries"] for s in r.stages] == [per - 1] + [per] * 6 + [83 - 7 * per]


def test_dynamic_warm_start_success_costs_one_query(toy):
    oracle, xs = toy
    r = dynamic_lambda_search(AttackConfig(lam="dynamic", max_queries=8000, seed=4), xs[0], oracle)
    assert r.success
    assert sum(s["queries"] for s in r.stages) + 1 == r.queries_used
    first = next(i for i, s in enumerate(r.stages) if s["success"])
    assert all(s["success"] and s["queries"] == 1 for s in r.stages[first + 1:])
    wins = [s for s in r.stages if s["success"]]
    assert r.lambda_used == min(wins, key=lambda s: s["distance"])["lambda"]


def test_dynamic_reports_the_winning_stage():
    # graded margin; flips once the image brightens by 0.02 on average
    def fn(x):
        gap = 0.52 - x.mean()
        return [gap, -gap]

    oracle = ScriptedOracle(fn)
    r = run_attack(AttackConfig(lam="dynamic", max_queries=4000, q=0.2, seed=1), flat_image(16, 16), oracle)
    assert r.success
    wins = [s for s in r.stages if s["success"]]
    best = min(s["distance"] for s in wins)
    assert r.scores["one_minus_ssim"] == pytest.approx(best, abs=1e-12)
    assert r.queries_used <= 4000 and r.queries_used == oracle.calls
