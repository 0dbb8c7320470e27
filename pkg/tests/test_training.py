import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aisf.data import GeneratorConfig, Scaler, generate_synthetic
from aisf.experiment import RunSpec, new_model, prepare, run
from aisf.models import BlockConfig
from aisf.tensor import GradTape, Rng, ShapeError, Tensor
from aisf.training import (
    OptimState,
    PlateauScheduler,
    TrainConfig,
    TrainingDiverged,
    adamw_step,
    clip_grad_norm,
    hte_loss,
    metric_hte,
    metric_huber,
    metric_mae,
    metric_report,
    metric_rmse,
    metric_rpd,
    per_step_rows,
    plateau_schedule,
    _unscale_clip,
    train,
)

finite = st.floats(-1e3, 1e3)


class TestMetrics:
    def test_hte_zero(self):
        assert metric_hte(np.zeros(4), np.zeros(4)) == 0.0

    def test_hte_unit_residual(self):
        assert metric_hte(np.array([0.0]), np.array([1.0])) == pytest.approx(0.761594, abs=1e-6)

    def test_hte_derivative(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        with GradTape() as tape:
            loss = hte_loss(p, np.array([1.0]))
        g = tape.backward(loss)[p]
        # d/dr r tanh r = tanh r + r sech^2 r at r = 1, and dr/dpred = -1
        assert -g[0] == pytest.approx(1.181568, abs=1e-6)
        h = 1e-6
        fd = (metric_hte(np.array([h]), np.array([1.0])) - metric_hte(np.array([-h]), np.array([1.0]))) / (2 * h)
        assert g[0] == pytest.approx(fd, rel=1e-7)

    @given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite))
    def test_hte_bounded_by_mae(self, p, y):
        assert metric_hte(p, y) <= metric_mae(p, y) + 1e-12

    @given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite))
    def test_huber_bounded_by_mae(self, p, y):
        assert 0 <= metric_huber(p, y) <= metric_mae(p, y) + 1e-12

    def test_rpd_extremes(self):
        assert metric_rpd(np.array([0.0]), np.array([5.0])) == 2.0
        assert metric_rpd(np.array([5.0]), np.array([0.0])) == -2.0
        assert metric_rpd(np.array([-1.0]), np.array([1.0])) == 2.0

    def test_rpd_zero_over_zero(self):
        assert metric_rpd(np.zeros(3), np.zeros(3)) == 0.0

    def test_rpd_perfect(self):
        y = np.array([1.0, -2.0, 3.5])
        assert metric_rpd(y, y) == 0.0

    @given(arrays(np.float64, 20, elements=finite), arrays(np.float64, 20, elements=finite))
    def test_rpd_bounds(self, p, y):
        assert -2.0 <= metric_rpd(p, y) <= 2.0

    def test_rmse_example(self):
        assert metric_rmse(np.array([3.0, 4.0]), np.array([0.0, 0.0])) == pytest.approx(3.535534, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metric_mae(np.zeros(3), np.zeros(4))
        with pytest.raises(ShapeError):
            hte_loss(Tensor(np.zeros(3)), np.zeros(4))

    def test_report_breakdown(self):
        rng = Rng(0)
        p, y = rng.normal(0, 1, (6, 3, 5)), rng.normal(0, 1, (6, 3, 5))
        rep = metric_report(p, y)
        assert rep.n_elements == 90
        assert rep.per_variable["sog"]["mae"] == pytest.approx(metric_mae(p[..., 4], y[..., 4]))
        rows = per_step_rows(p, y)
        assert len(rows) == 15 and {r["step"] for r in rows} == {1, 2, 3}


class TestAdamW:
    def test_zero_gradient_shrinks_by_decay(self):
        p = Tensor(np.array([2.0, -3.0]))
        adamw_step([p], [np.zeros(2)], OptimState.for_params([p]), 1e-3)
        np.testing.assert_allclose(p.data, np.array([2.0, -3.0]) * (1 - 1e-5), rtol=1e-15)

    def test_first_step(self):
        p = Tensor(np.array([1.0]))
        adamw_step([p], [np.array([1.0])], OptimState.for_params([p]), 1e-3)
        assert p.data[0] == pytest.approx(1 - 1e-3 * (1 / (1 + 1e-8) + 0.01), abs=1e-15)

    def test_nonfinite_gradient_names_parameter(self):
        p = Tensor(np.zeros(1))
        with pytest.raises(FloatingPointError, match="w0"):
            adamw_step([p], [np.array([np.nan])], OptimState.for_params([p]), 1e-3, ["w0"])

    def test_moment_shape_mismatch(self):
        p = Tensor(np.zeros(2))
        st_ = OptimState([np.zeros(3)], [np.zeros(3)])
        with pytest.raises(ShapeError):
            adamw_step([p], [np.zeros(2)], st_, 1e-3)


class TestClipNorm:
    def test_scaled_to_one(self):
        g, n = clip_grad_norm([np.array([2.0, 0.0])], 1.0)
        assert n == 2.0
        np.testing.assert_allclose(g[0], [1.0, 0.0])

    def test_small_unchanged(self):
        g, _ = clip_grad_norm([np.array([0.3, 0.4])], 1.0)
        np.testing.assert_array_equal(g[0], [0.3, 0.4])

    def test_zeros_unchanged(self):
        g, n = clip_grad_norm([np.zeros(3)], 1.0)
        assert n == 0.0 and np.all(g[0] == 0)

    @given(st.lists(arrays(np.float64, 3, elements=finite), min_size=1, max_size=4))
    def test_norm_bounded(self, gs):
        out, _ = clip_grad_norm(gs, 1.0)
        assert math.sqrt(sum(float(np.sum(g * g)) for g in out)) <= 1.0 + 1e-12

    def test_bad_max_norm(self):
        with pytest.raises(ValueError):
            clip_grad_norm([np.ones(1)], 0.0)


class TestScheduler:
    def test_constant_losses_factor_fifth(self):
        assert plateau_schedule([1, 1, 1, 1], factor=0.2)[-1] == pytest.approx(2e-4)
        assert plateau_schedule([1] * 7, factor=0.2)[-1] == pytest.approx(4e-5)

    def test_default_factor(self):
        assert plateau_schedule([1, 1, 1, 1])[-1] == pytest.approx(8e-4)

    def test_improvement_resets(self):
        lrs = plateau_schedule([5, 4, 3, 2, 1, 1, 1, 0.5, 0.5, 0.5, 0.5], factor=0.2)
        assert lrs[6] == pytest.approx(1e-3) and lrs[-1] == pytest.approx(2e-4)

    def test_threshold(self):
        s = PlateauScheduler(1e-3, patience=1, factor=0.5)
        s.step(1.0)
        assert s.step(1.0 - 1e-7) == pytest.approx(5e-4)

    @given(st.lists(st.floats(0, 10), max_size=30))
    def test_lr_non_increasing(self, losses):
        lrs = plateau_schedule(losses)
        assert all(b <= a for a, b in zip([1e-3] + lrs, lrs))


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [{"lr": 0}, {"batch_size": 0}, {"lr_decay_factor": 1.0}, {"dropout_p": 1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


SMALL = BlockConfig(conv_out_channels=4, hidden_size=4)


@pytest.fixture(scope="module")
def small_net():
    return generate_synthetic(GeneratorConfig(n_vessels=6, max_messages=120), Rng(3))


def small_spec(**kw):
    return RunSpec(model="proposed", w=6, s=2, block=SMALL, train=TrainConfig(max_epochs=3, batch_size=32, **kw))


class TestLoop:
    def test_deterministic(self, small_net):
        a, _ = run(small_net, small_spec())
        b, _ = run(small_net, small_spec())
        assert a.history == b.history

    def test_seed_changes_history(self, small_net):
        a, _ = run(small_net, small_spec())
        b, _ = run(small_net, small_spec(seed=2121))
        assert a.history != b.history

    def test_best_epoch_restored(self, small_net):
        res, _ = run(small_net, small_spec())
        best = min(res.history, key=lambda r: r.test_hte)
        assert res.best_epoch == best.epoch
        assert res.test_report.hte == pytest.approx(best.test_hte, rel=1e-12)

    def test_divergence_reported(self, small_net):
        spec = small_spec()
        data = prepare(small_net, spec.w, spec.s, spec.seed)
        model = new_model(spec)
        p = next(iter(model.parameters()))
        p.data = np.full(p.shape, np.nan)
        with pytest.raises(FloatingPointError, match="non-finite"):
            train(model, data.train, data.test, data.scaler, spec.train)

    def test_control_not_trained(self, small_net):
        res, _ = run(small_net, RunSpec(model="control", w=6, s=2))
        assert len(res.history) == 1 and res.best_epoch == 0

    def test_empty_rejected(self, small_net):
        spec = small_spec()
        data = prepare(small_net, spec.w, spec.s, spec.seed)
        with pytest.raises(ValueError):
            train(new_model(spec), data.train, [], data.scaler, spec.train)

    def test_loss_clip_passes_gradient(self):
        # a prediction far below the lower bound still receives a gradient
        sc = Scaler().fit(np.array([[0.0] * 5, [1.0] * 5]))
        p = Tensor(np.full((1, 1, 5), -10.0), requires_grad=True)
        with GradTape() as tape:
            loss = hte_loss(_unscale_clip(p, sc), np.full((1, 1, 5), 0.5))
        assert np.all(tape.backward(loss)[p] != 0)


def test_nonfinite_loss_raises_diverged(small_net):
    spec = small_spec()
    data = prepare(small_net, spec.w, spec.s, spec.seed)
    model = new_model(spec)
    # the AR shortcut feeds the output directly, so a NaN there reaches the loss
    for name, p in model.named_parameters():
        if name.startswith("ar"):
            p.data = np.full(p.shape, np.nan)
    with pytest.raises(TrainingDiverged, match="epoch 1, batch 0"):
        train(model, data.train, data.test, data.scaler, spec.train)
