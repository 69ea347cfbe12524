import math

import numpy as np
import pytest

from mrcae.datasets import build_pyramid, gen_two_modes
from mrcae.errors import ConfigError, TrainingError
from mrcae.model import new_model
from mrcae.trainer import (CSV_COLUMNS, AdamState, TrainConfig, adam_step, level_data, progressive_train,
                           should_stop, train_phase)


def scalar_adam(ws, gs_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Hand-rolled per-scalar Adam for comparison."""
    out = []
    for w0, gs in zip(ws, zip(*gs_seq)):
        w, m, v = w0, 0.0, 0.0
        for t, g in enumerate(gs, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(w)
    return out


class TestAdam:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=6)
        grads = [rng.normal(size=6) for _ in range(5)]
        expected = scalar_adam(list(w), [list(g) for g in grads], lr=0.01)
        state = AdamState()
        weights = {"w": w.copy()}
        for g in grads:
            adam_step(weights, {"w": g}, state, lr=0.01)
        np.testing.assert_allclose(weights["w"], expected, rtol=1e-14, atol=1e-15)
        assert state.step == 5

    def test_first_step_is_sign_like(self):
        w = {"a": np.array([1.0, 1.0, 1.0])}
        adam_step(w, {"a": np.array([3.0, -0.2, 0.0])}, AdamState(), lr=0.1)
        np.testing.assert_allclose(w["a"], [0.9, 1.1, 1.0], rtol=1e-7)

    def test_zero_gradient(self):
        w = {"a": np.arange(4.0), "b": np.ones((2, 2))}
        before = {k: v.copy() for k, v in w.items()}
        state = AdamState()
        for _ in range(3):
            adam_step(w, {k: np.zeros_like(v) for k, v in w.items()}, state)
        assert state.step == 3
        for k in w:
            np.testing.assert_array_equal(w[k], before[k])

    def test_deterministic_100_steps(self):
        def run():
            rng = np.random.default_rng(42)
            w = {"x": rng.normal(size=(3, 3)), "y": rng.normal(size=2)}
            state = AdamState()
            for _ in range(100):
                adam_step(w, {k: rng.normal(size=v.shape) for k, v in w.items()}, state)
            return w
        a, b = run(), run()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"a": np.zeros(3)}, {"a": np.zeros(4)}, AdamState())


class TestEarlyStop:
    def test_plateau_fires_at_first_window(self):
        losses = [1.0, 0.5, 0.3, 0.2, 0.15, 0.12, 0.1, 0.09, 0.08, 0.07, 0.06]
        losses += [0.06] * 10
        fired = [n for n in range(1, len(losses) + 1) if should_stop(losses[:n])]
        assert fired[0] == 21

    def test_checked_only_at_window_boundaries(self):
        flat = [1.0] * 30
        assert [n for n in range(1, 31) if should_stop(flat[:n])] == [11, 21]

    def test_steady_decrease_does_not_fire(self):
        losses = [0.99**i for i in range(51)]
        assert not any(should_stop(losses[:n]) for n in range(1, 52))

    def test_threshold(self):
        base = [1.0] + [0.5] * 9
        assert should_stop(base + [1.0 - 0.9e-3])
        assert not should_stop(base + [1.0 - 1.1e-3])

    def test_zero_window_disables(self):
        assert not should_stop([1.0] * 21, window=0)


def _one_level_data(field, T=6, seed=0):
    finest = np.repeat(field[None, None], T, axis=0)
    return build_pyramid(finest, 1, seed=seed)


class TestTrainPhase:
    def test_single_epoch(self):
        pyr = _one_level_data(np.random.default_rng(0).normal(size=(7, 7)))
        m = new_model((7, 7), 1)
        m.deepen(0.01, np.random.default_rng(0))
        hist = train_phase(m, level_data(pyr, 0), TrainConfig(max_epochs=1))
        assert [r["epoch"] for r in hist.rows] == [1]

    def test_epochs_must_be_positive(self):
        with pytest.raises(ConfigError):
            TrainConfig(max_epochs=0).validate()

    def test_constant_data_learned_by_bias(self):
        pyr = _one_level_data(np.full((7, 7), 0.3), T=10)
        m = new_model((7, 7), 1)
        m.deepen(1e-3, np.random.default_rng(1))
        cfg = TrainConfig(omega=1.0, max_epochs=500, learning_rate=1e-2, early_stop_window=0)
        hist = train_phase(m, level_data(pyr, 0), cfg)
        losses = [r["train_total"] for r in hist.rows]
        assert len(losses) == 500
        assert losses[-1] < 1e-6
        assert np.mean(losses[250:]) < np.mean(losses[:250])

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_loss_aborts(self):
        pyr = _one_level_data(np.random.default_rng(0).normal(size=(7, 7)) * 1e200)
        m = new_model((7, 7), 1)
        m.deepen(0.01, np.random.default_rng(0))
        with pytest.raises(TrainingError, match="non-finite"):
            train_phase(m, level_data(pyr, 0), TrainConfig(max_epochs=3))

    def test_minibatch_runs(self):
        pyr = _one_level_data(np.random.default_rng(0).normal(size=(7, 7)), T=20)
        m = new_model((7, 7), 1)
        m.deepen(0.01, np.random.default_rng(0))
        hist = train_phase(m, level_data(pyr, 0), TrainConfig(max_epochs=3, batch_size=4), rng=np.random.default_rng(0))
        assert len(hist.rows) == 3


@pytest.fixture(scope="module")
def small_pyramid():
    return build_pyramid(gen_two_modes(31, 31, 30), 3, seed=2)


class TestProgressive:
    def test_explicit_schedule(self, small_pyramid):
        cfg = TrainConfig(widen_schedule=[1, 2, 3], group_channels=2, max_epochs=3, seed=1)
        model, hist = progressive_train(small_pyramid, cfg)
        assert model.group_counts() == [1, 2, 3]
        assert len(hist.phases) == 3 + 6
        for ph in hist.phases:
            assert ph["params"] > 0
        assert hist.rows[-1]["params"] == model.count_params()
        assert list(hist.to_csv().splitlines()[0].split(",")) == CSV_COLUMNS

    def test_deterministic_csv(self, small_pyramid):
        cfg = TrainConfig(widen_schedule=[1, 1, 1], group_channels=2, max_epochs=4, seed=5)
        a = progressive_train(small_pyramid, cfg)[1].to_csv(include_wall=False)
        b = progressive_train(small_pyramid, cfg)[1].to_csv(include_wall=False)
        assert a == b

    def test_auto_stops_on_empty_mask(self):
        pyr = _one_level_data(np.zeros((15, 15)), T=10)
        model, hist = progressive_train(pyr, TrainConfig(max_epochs=2, max_groups=3, eps=[1e-12]))
        assert model.group_counts() == [0]
        assert [p["op"] for p in hist.phases] == ["deepen"]

    def test_auto_respects_cap(self, small_pyramid):
        cfg = TrainConfig(max_epochs=2, max_groups=2, eps=[0.0, 0.0, 0.0], group_channels=1)
        model, _ = progressive_train(small_pyramid, cfg)
        assert model.group_counts() == [2, 2, 2]

    def test_growth_leaves_existing_arrays_unchanged(self, small_pyramid, monkeypatch):
        from mrcae.model import MrCaeModel
        orig = MrCaeModel.widen
        calls = []

        def widen_and_check(self, *a, **kw):
            before = {n: x.copy() for n, x in self.parameters()}
            out = orig(self, *a, **kw)
            after = dict(self.parameters())
            assert all(after[n].tobytes() == x.tobytes() for n, x in before.items())
            calls.append(1)
            return out

        monkeypatch.setattr(MrCaeModel, "widen", widen_and_check)
        progressive_train(small_pyramid, TrainConfig(widen_schedule=[1, 1, 1], group_channels=2, max_epochs=2))
        assert len(calls) == 3

    def test_freeze_lower(self, small_pyramid):
        first = {}

        def grab(model, hist):
            if not first and model.top_level == 1:
                first.update({n: a.copy() for n, a in model.parameters() if n.startswith("levels.0.")})

        cfg = TrainConfig(widen_schedule=[0, 1, 0], group_channels=2, max_epochs=3, freeze_lower=True)
        model, _ = progressive_train(small_pyramid, cfg, on_phase=grab)
        params = dict(model.parameters())
        for n, a in first.items():
            assert params[n].tobytes() == a.tobytes()

    def test_dense_masks(self, small_pyramid):
        cfg = TrainConfig(widen_schedule=[1, 1, 1], group_channels=2, max_epochs=2, mask_mode="dense")
        model, _ = progressive_train(small_pyramid, cfg)
        assert all(g.mask.bits.all() for b in model.levels for g in b.groups)

    def test_bad_schedule_length(self, small_pyramid):
        with pytest.raises(ConfigError):
            progressive_train(small_pyramid, TrainConfig(widen_schedule=[1, 2]))


def test_config_round_trip():
    cfg = TrainConfig(eps=[0.1, 0.2], widen_schedule=[1, 2], seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
