import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemat.core import N_SAMPLES, CaptureMeta, Dataset, LabeledSample, MaterialClass, Waveform
from wavemat.tcn import (
    TcnModel,
    TcnParams,
    forward,
    init_tcn,
    load_tcn,
    loss_and_grads,
    predict_tcn,
    save_tcn,
    train_tcn,
)

TINY = TcnParams(channel_sizes=(4, 4), dropout=0.05, readout="last", seed=0)
TABLE2 = (MaterialClass(0, "a"), MaterialClass(1, "b"))


def fd_gradients(model, X, y, dropout_seed, eps=1e-5):
    """Central finite differences over every parameter component."""
    out = {}
    for name, arr in model.named_parameters():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + eps
            lp, _ = loss_and_grads(model, X, y, dropout_seed)
            arr[ix] = orig - eps
            lm, _ = loss_and_grads(model, X, y, dropout_seed)
            arr[ix] = orig
            g[ix] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name, g in analytic.items():
        fd = numeric[name]
        rel = np.abs(g - fd) / np.maximum.reduce([np.abs(g), np.abs(fd), np.full_like(g, 1e-6)])
        worst = max(worst, float(rel.max()))
    return worst


class TestInit:
    def test_same_seed_same_weights(self):
        a = init_tcn(TINY, 3, 7)
        b = init_tcn(TINY, 3, 7)
        for (na, wa), (nb, wb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(wa, wb)

    def test_different_seed_differs(self):
        a = init_tcn(TINY, 3, 7)
        b = init_tcn(TINY, 3, 8)
        assert not np.array_equal(a.head_w, b.head_w)

    def test_default_channel_list_gives_eight_blocks(self):
        model = init_tcn(TcnParams(), 4, 0)
        assert len(model.blocks) == 8

    def test_head_width_matches_class_count(self):
        model = init_tcn(TINY, 4, 0)
        assert model.head_w.shape == (4, 4)
        assert model.head_b.shape == (4,)

    def test_residual_projection_shape_law(self):
        model = init_tcn(TcnParams(channel_sizes=(8, 8, 16), seed=1), 2, 1)
        # channel change (1->8, 8->16) needs a projection; 8->8 must not
        assert model.blocks[0].proj is not None
        assert model.blocks[1].proj is None
        assert model.blocks[2].proj is not None
        assert model.blocks[2].proj.w.shape == (16, 8, 1)


class TestForward:
    def test_zero_head_gives_uniform_probabilities(self):
        model = init_tcn(TINY, 4, 3)
        model.head_w[:] = 0.0
        model.head_b[:] = 0.0
        probs = forward(model, np.random.default_rng(0).random((5, 16)))
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_eval_mode_deterministic(self):
        model = init_tcn(TINY, 3, 1)
        X = np.random.default_rng(1).random((4, 32))
        assert np.array_equal(forward(model, X), forward(model, X))

    def test_dropout_only_in_train_mode(self):
        params = TcnParams(channel_sizes=(8, 8), dropout=0.5, seed=2)
        model = init_tcn(params, 2, 2)
        X = np.random.default_rng(2).random((3, 16))
        train_a = forward(model, X, train_mode=True, dropout_seed=1)
        train_b = forward(model, X, train_mode=True, dropout_seed=2)
        assert not np.array_equal(train_a, train_b)
        assert np.array_equal(
            forward(model, X, train_mode=True, dropout_seed=1),
            train_a,
        )

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 6), k=st.integers(2, 5))
    def test_probabilities_sum_to_one(self, seed, n, k):
        rng = np.random.default_rng(seed)
        model = init_tcn(TcnParams(channel_sizes=(6, 6), seed=seed), k, seed)
        probs = forward(model, rng.random((n, 24)) * 2.0)
        assert probs.shape == (n, k)
        assert np.all(probs >= 0.0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_waveform_batch_accepted(self):
        model = init_tcn(TINY, 2, 0)
        w = Waveform(np.random.default_rng(0).random(N_SAMPLES))
        probs = forward(model, [w, w])
        assert probs.shape == (2, 2)
        assert np.array_equal(probs[0], probs[1])


class TestLoss:
    def test_uniform_prediction_over_four_classes_is_ln4(self):
        model = init_tcn(TcnParams(channel_sizes=(4, 4), dropout=0.0, seed=0), 4, 0)
        model.head_w[:] = 0.0
        model.head_b[:] = 0.0
        X = np.random.default_rng(0).random((8, 16))
        y = np.array([0, 1, 2, 3] * 2)
        loss, _ = loss_and_grads(model, X, y, dropout_seed=0)
        assert loss == pytest.approx(math.log(4.0), rel=1e-12)

    def test_confident_correct_prediction_drives_loss_to_zero(self):
        model = init_tcn(TcnParams(channel_sizes=(4, 4), dropout=0.0, seed=0), 2, 0)
        model.head_w[:] = 0.0
        model.head_b[:] = [40.0, -40.0]  # always class 0, saturated softmax
        X = np.random.default_rng(0).random((4, 16))
        loss, _ = loss_and_grads(model, X, np.zeros(4, dtype=int), dropout_seed=0)
        assert loss < 1e-12


class TestGradients:
    @pytest.mark.parametrize("readout", ["last", "mean"])
    def test_matches_central_finite_differences(self, readout):
        params = TcnParams(channel_sizes=(4, 4), dropout=0.05, readout=readout, seed=1)
        model = init_tcn(params, 3, 5)
        rng = np.random.default_rng(2)
        X = rng.random((4, 8))
        y = np.array([0, 1, 2, 0])
        _, analytic = loss_and_grads(model, X, y, dropout_seed=11)
        numeric = fd_gradients(model, X, y, dropout_seed=11)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_kernel_width_two_gradients(self):
        params = TcnParams(kernel_size=2, channel_sizes=(3, 3), dropout=0.0, readout="mean", seed=4)
        model = init_tcn(params, 2, 9)
        rng = np.random.default_rng(5)
        X = rng.random((3, 8))
        y = np.array([0, 1, 0])
        _, analytic = loss_and_grads(model, X, y, dropout_seed=0)
        numeric = fd_gradients(model, X, y, dropout_seed=0)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_layers_arch_gradients(self):
        params = TcnParams(channel_sizes=(4, 4), dropout=0.05, readout="mean", arch="layers", seed=6)
        model = init_tcn(params, 2, 3)
        rng = np.random.default_rng(6)
        X = rng.random((3, 8))
        y = np.array([0, 1, 1])
        _, analytic = loss_and_grads(model, X, y, dropout_seed=3)
        numeric = fd_gradients(model, X, y, dropout_seed=3)
        assert max_rel_error(analytic, numeric) < 1e-4


def toy_dataset(n=16, scale_hi=0.8, scale_lo=0.2, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        level = scale_hi if i % 2 else scale_lo
        arr = np.clip(rng.normal(level, 0.02, N_SAMPLES), 0.0, 1.0)
        samples.append(
            LabeledSample(Waveform(arr), CaptureMeta(0.0, 1.0, 1 + i % 5), TABLE2[i % 2])
        )
    return Dataset(tuple(samples), TABLE2, seed)


class TestTraining:
    def test_separable_toy_data_reaches_full_training_accuracy(self):
        ds = toy_dataset()
        params = TcnParams(
            channel_sizes=(8, 8), dropout=0.0, readout="mean", iterations=500, batch_size=8, seed=1
        )
        model = train_tcn(ds, params)
        correct = sum(predict_tcn(model, s.waveform) == s.label for s in ds.samples)
        assert correct == len(ds)

    def test_loss_decreases(self):
        ds = toy_dataset(seed=3)
        params = TcnParams(channel_sizes=(8, 8), dropout=0.0, readout="mean", iterations=60, batch_size=8, seed=2)
        model = train_tcn(ds, params)
        first = model.loss_log[0][1]
        last = model.loss_log[-1][1]
        assert last < first

    def test_training_deterministic(self):
        ds = toy_dataset(seed=5)
        params = TcnParams(channel_sizes=(6, 6), dropout=0.05, readout="mean", iterations=30, batch_size=4, seed=11)
        a = train_tcn(ds, params)
        b = train_tcn(ds, params)
        for (_, wa), (_, wb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(wa, wb)
        assert a.loss_log == b.loss_log

    def test_loss_log_one_line_per_iteration(self):
        ds = toy_dataset(seed=6)
        params = TcnParams(channel_sizes=(4, 4), iterations=10, batch_size=4, seed=0, readout="mean")
        model = train_tcn(ds, params)
        assert [step for step, _ in model.loss_log] == list(range(1, 11))

    def test_empty_dataset_rejected(self):
        empty = Dataset((), TABLE2, 0)
        with pytest.raises(ValueError, match="empty"):
            train_tcn(empty, TINY)

    def test_single_class_rejected(self):
        rng = np.random.default_rng(0)
        samples = tuple(
            LabeledSample(Waveform(rng.random(N_SAMPLES)), CaptureMeta(0.0, 1.0, 1), TABLE2[0])
            for _ in range(4)
        )
        ds = Dataset(samples, TABLE2, 0)
        with pytest.raises(ValueError, match="single class"):
            train_tcn(ds, TINY)


class TestPredict:
    def test_consistent_with_forward_argmax(self):
        model = init_tcn(TINY, 3, 2)
        model.class_table = (MaterialClass(0, "x"), MaterialClass(1, "y"), MaterialClass(2, "z"))
        w = Waveform(np.random.default_rng(1).random(N_SAMPLES))
        probs = forward(model, [w])
        assert predict_tcn(model, w).id == int(np.argmax(probs[0]))

    def test_batch_composition_invariance(self):
        model = init_tcn(TcnParams(channel_sizes=(8, 8), readout="mean", seed=3), 3, 3)
        rng = np.random.default_rng(4)
        X = rng.random((6, 40))
        batched = forward(model, X)
        for i in range(6):
            alone = forward(model, X[i : i + 1])
            assert np.allclose(alone[0], batched[i], rtol=1e-12, atol=1e-12)

    def test_zero_weight_head_predicts_class_zero(self):
        model = init_tcn(TINY, 3, 0)
        model.class_table = (MaterialClass(0, "x"), MaterialClass(1, "y"), MaterialClass(2, "z"))
        model.head_w[:] = 0.0
        model.head_b[:] = 0.0
        w = Waveform(np.random.default_rng(0).random(N_SAMPLES))
        assert predict_tcn(model, w).id == 0


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        ds = toy_dataset(seed=8)
        params = TcnParams(channel_sizes=(4, 4), iterations=5, batch_size=4, seed=1, readout="mean")
        model = train_tcn(ds, params)
        path = tmp_path / "model.npz"
        save_tcn(model, path)
        back = load_tcn(path)
        assert back.params == model.params
        assert back.class_table == model.class_table
        assert back.input_scale == model.input_scale
        for (na, wa), (nb, wb) in zip(model.named_parameters(), back.named_parameters()):
            assert na == nb
            assert np.array_equal(wa, wb)
        X = np.random.default_rng(9).random((4, N_SAMPLES))
        assert np.array_equal(forward(model, X), forward(back, X))

    def test_bad_format_rejected(self, tmp_path):
        path = tmp_path / "m.npz"
        np.savez(path, __meta__=np.array('{"format": "nope", "version": 1}'))
        with pytest.raises(ValueError, match="checkpoint"):
            load_tcn(tmp_path / "m.npz")
