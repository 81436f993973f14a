import json

import numpy as np
import pytest

from cubefield.errors import DataError, DivergenceError
from cubefield.intervals import Box3, Interval
from cubefield.nets import TargetArch, TargetNetParams, hyper_forward, target_point_batch
from cubefield.training import (OptimizerState, TrainConfig, adam_step, init_optimizer,
                                loss_interval, loss_point, sample_balanced_batch, train)
from cubefield.voxels import LabeledCube, VoxelGrid, gen_shape, grid_cells, sample_point

TINY = dict(epochs=3, batch_cubes=32, resolution=8, n_enc=4, enc_hidden=(16,),
            d_lat=8, head_hidden=(16,), target_hidden=(8,))


def tiny_config(**overrides):
    return TrainConfig(**{**TINY, **overrides})


@pytest.fixture(scope="module")
def tiny_grids():
    return [gen_shape("sphere", 8, {"radius": 0.25}), gen_shape("box", 8)]


def unit_params(values):
    # 1-hidden-unit net: sigmoid(w2 * relu(w1 . p + b1) + b2)
    return TargetNetParams(np.array(values, dtype=float), TargetArch((1,)))


def test_loss_point_zero_when_predictions_match():
    rng = np.random.default_rng(0)
    params = TargetNetParams(rng.standard_normal(TargetArch((8,)).param_count),
                             TargetArch((8,)))
    pts = rng.uniform(0, 1, (16, 3))
    preds = target_point_batch(params, pts)
    batch = [(pts[i], preds[i]) for i in range(16)]
    assert loss_point(params, batch) == pytest.approx(0.0, abs=1e-15)


def test_loss_point_single_sample():
    params = unit_params([0, 0, 0, 0, 0, 0])  # constant 0.5
    assert loss_point(params, [((0.3, 0.4, 0.5), 1.0)]) == pytest.approx(0.25)


def test_loss_point_permutation_invariant():
    rng = np.random.default_rng(1)
    params = TargetNetParams(rng.standard_normal(TargetArch((8,)).param_count),
                             TargetArch((8,)))
    batch = [(rng.uniform(0, 1, 3), float(rng.integers(0, 2))) for _ in range(10)]
    a = loss_point(params, batch)
    b = loss_point(params, batch[::-1])
    assert a == pytest.approx(b, rel=1e-12)


def test_loss_point_empty_batch():
    with pytest.raises(ValueError):
        loss_point(unit_params([0] * 6), [])


def test_loss_interval_worst_case_contributions():
    # the 0.3/0.9 bound example: label 1 scores (0.3-1)^2, label 0 scores 0.9^2
    cube = Box3(Interval(0.2, 0.3), Interval(0.2, 0.3), Interval(0.2, 0.3))

    class FakeParams:
        pass

    # drive through the real API with a crafted 1-unit network is fragile;
    # instead check the rule directly on a real network's bounds
    rng = np.random.default_rng(2)
    params = TargetNetParams(rng.standard_normal(TargetArch((8,)).param_count),
                             TargetArch((8,)))
    from cubefield.nets import target_interval_forward
    iv = target_interval_forward(params, cube)
    inside = loss_interval(params, [LabeledCube(cube, 1)])
    outside = loss_interval(params, [LabeledCube(cube, 0)])
    assert inside == pytest.approx((iv.lo - 1.0) ** 2)
    assert outside == pytest.approx(iv.hi ** 2)


def test_loss_interval_empty_batch():
    rng = np.random.default_rng(3)
    params = TargetNetParams(rng.standard_normal(TargetArch((8,)).param_count),
                             TargetArch((8,)))
    with pytest.raises(ValueError):
        loss_interval(params, [])


def test_loss_interval_dominates_loss_point():
    # worst-case residual of a cube is >= the residual at any interior point
    rng = np.random.default_rng(4)
    params = TargetNetParams(rng.standard_normal(TargetArch((8, 8)).param_count),
                             TargetArch((8, 8)))
    cells = grid_cells(4)
    for label in (0, 1):
        for cube in cells[:: 7]:
            li = loss_interval(params, [LabeledCube(cube, label)])
            for _ in range(25):
                p = sample_point(cube, rng)
                lp = loss_point(params, [(p, float(label))])
                assert li >= lp - 1e-12


# ---- adam ---------------------------------------------------------------------


def test_adam_first_step_is_learning_rate():
    phi = {"w": np.array([0.0])}
    grads = {"w": np.array([1.0])}
    state = init_optimizer(phi)
    adam_step(phi, grads, state, TrainConfig(learning_rate=1e-3))
    assert phi["w"][0] == pytest.approx(-1e-3, rel=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_keeps_parameters():
    phi = {"w": np.array([1.5, -2.5])}
    state = init_optimizer(phi)
    adam_step(phi, {"w": np.zeros(2)}, state, TrainConfig())
    assert np.array_equal(phi["w"], [1.5, -2.5])


def test_adam_rejects_nan_gradient():
    phi = {"w": np.array([0.0])}
    state = init_optimizer(phi)
    with pytest.raises(DivergenceError):
        adam_step(phi, {"w": np.array([np.nan])}, state, TrainConfig())


def test_adam_missing_gradient():
    phi = {"w": np.array([0.0])}
    state = init_optimizer(phi)
    with pytest.raises(DataError):
        adam_step(phi, {}, state, TrainConfig())


# ---- batch sampling --------------------------------------------------------------


def test_sample_balanced_batch_ratio():
    rng = np.random.default_rng(5)
    inside = np.arange(10)
    outside = np.arange(10, 100)
    for batch in (16, 17, 64):
        idx, labels = sample_balanced_batch(rng, inside, outside, batch, 0.5)
        assert len(idx) == batch
        n_in = int(labels.sum())
        assert abs(n_in - batch * 0.5) <= 0.5 + 1e-9
        assert np.all(np.isin(idx[labels == 1], inside))
        assert np.all(np.isin(idx[labels == 0], outside))


def test_sample_balanced_batch_single_class_fallback():
    rng = np.random.default_rng(6)
    idx, labels = sample_balanced_batch(rng, np.array([], dtype=int), np.arange(5), 8, 0.5)
    assert labels.sum() == 0
    idx, labels = sample_balanced_batch(rng, np.arange(5), np.array([], dtype=int), 8, 0.5)
    assert labels.sum() == 8


# ---- training loop ------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(DataError):
        TrainConfig(variant="both")
    with pytest.raises(DataError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(DataError):
        TrainConfig(beta1=1.0)
    with pytest.raises(DataError):
        TrainConfig(balance=1.5)


def test_train_config_text_roundtrip():
    cfg = tiny_config(variant="interval", learning_rate=3e-4, seed=9)
    text = cfg.to_text()
    assert TrainConfig.from_text(text) == cfg
    assert "enc_hidden=16" in text


def test_train_config_from_text_errors():
    with pytest.raises(DataError):
        TrainConfig.from_text("nonsense")
    with pytest.raises(DataError):
        TrainConfig.from_text("unknown_key=4")
    with pytest.raises(DataError):
        TrainConfig.from_text("epochs=abc")


def test_train_rejects_bad_datasets(tiny_grids):
    with pytest.raises(DataError):
        train([], tiny_config())
    mixed = [tiny_grids[0], gen_shape("sphere", 4)]
    with pytest.raises(DataError):
        train(mixed, tiny_config())
    with pytest.raises(DataError):
        train(tiny_grids, tiny_config(resolution=16))


def test_train_telemetry_record_count_and_fields(tiny_grids, tmp_path):
    path = tmp_path / "tel.jsonl"
    _, telemetry = train(tiny_grids, tiny_config(), telemetry_path=path)
    assert len(telemetry) == 3
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == 3
    for i, rec in enumerate(lines):
        assert rec["epoch"] == i
        assert rec["step"] == (i + 1) * len(tiny_grids)
        assert set(rec) == {"epoch", "step", "loss", "wall_ms", "mem_bytes"}
        assert np.isfinite(rec["loss"])


def test_train_seeded_determinism(tiny_grids):
    m1, t1 = train(tiny_grids, tiny_config(seed=7))
    m2, t2 = train(tiny_grids, tiny_config(seed=7))
    for name in m1.names():
        assert m1.phi[name].tobytes() == m2.phi[name].tobytes()
    assert [r["loss"] for r in t1] == [r["loss"] for r in t2]


def test_train_different_seeds_differ(tiny_grids):
    m1, _ = train(tiny_grids, tiny_config(seed=1))
    m2, _ = train(tiny_grids, tiny_config(seed=2))
    assert any(not np.array_equal(m1.phi[n], m2.phi[n]) for n in m1.names())


def test_train_loss_trend_decreases():
    grid = gen_shape("sphere", 8, {"radius": 0.25})
    _, telemetry = train([grid], tiny_config(epochs=120, batch_cubes=64, seed=0))
    losses = [r["loss"] for r in telemetry]
    head = np.mean(losses[: len(losses) // 10])
    tail = np.mean(losses[-len(losses) // 10:])
    assert tail < head


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_aborts_with_last_good(tiny_grids):
    # lr large enough to overflow the forward pass into NaN on step two
    cfg = tiny_config(learning_rate=1e100, epochs=10)
    with pytest.raises(DivergenceError) as exc:
        with np.errstate(all="ignore"):
            train(tiny_grids, cfg)
    err = exc.value
    assert err.last_good is not None
    assert all(np.isfinite(v).all() for v in err.last_good.values())


def test_train_interval_variant_runs(tiny_grids):
    model, telemetry = train(tiny_grids, tiny_config(variant="interval"))
    assert len(telemetry) == 3
    _, params = hyper_forward(model, tiny_grids[0])
    assert np.isfinite(params.theta).all()
