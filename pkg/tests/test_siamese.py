import logging
import math
import struct

import numpy as np
import pytest

from vcp.nn import DenseParams, LstmParams, flatten, grad_check, lstm_forward, mae_loss
from vcp.siamese import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    EarlyStopping,
    PairSet,
    SiameseModel,
    TrainConfig,
    TrainingError,
    backward_batch,
    clone,
    encode_branch,
    forward,
    forward_batch,
    load_checkpoint,
    predict,
    predict_batch,
    round_distance,
    save_checkpoint,
    train,
)

from oracles import scalar_lstm


def _embedding(rng, vocab=12, dim=3):
    emb = rng.normal(size=(vocab + 1, dim))
    emb[0] = 0.0
    return emb


def _model(seed=0, vocab=12, dim=3, seq_len=5, hidden=3, **kw):
    rng = np.random.default_rng(seed)
    return SiameseModel.create(_embedding(rng, vocab, dim), seq_len, hidden, seed=seed, **kw)


def _pairs(rng, n, seq_len=5, vocab=12):
    a = rng.integers(0, vocab + 1, size=(n, seq_len))
    b = rng.integers(0, vocab + 1, size=(n, seq_len))
    return PairSet(a, b, rng.uniform(1, 1000, size=n))


class TestForward:
    def test_zero_weights_give_head_bias(self):
        m = _model()
        m.lstm = LstmParams.zeros(3, 3)
        m.head = DenseParams.zeros(2 * 5 * 3)
        m.head.b[0] = 42.0
        assert forward(m, np.array([1, 2, 3, 0, 0]), np.array([4, 0, 0, 0, 0])) == 42.0

    def test_identical_inputs_identical_branches(self):
        m = _model(1)
        seq = np.array([[3, 1, 4, 1, 5]])
        _, cache = forward_batch(m, seq, seq)
        half = cache.features.shape[1] // 2
        np.testing.assert_array_equal(cache.features[:, :half], cache.features[:, half:])
        np.testing.assert_array_equal(cache.features[:, :half], encode_branch(m, seq))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        emb = _embedding(rng, 6, 2)
        m = SiameseModel.create(emb, seq_len=4, hidden=3, seed=9)
        m.head = DenseParams(rng.normal(size=24), np.array([0.3]))
        a, b = np.array([1, 5, 0, 0]), np.array([2, 2, 6, 3])
        ws = m.lstm.W.tolist(), m.lstm.U.tolist(), m.lstm.b.tolist()
        ha = scalar_lstm(emb[a].tolist(), *ws)
        hb = scalar_lstm(emb[b].tolist(), *ws)
        feats = [v for row in ha for v in row] + [v for row in hb for v in row]
        expected = sum(w * f for w, f in zip(m.head.W.tolist(), feats)) + 0.3
        assert forward(m, a, b) == pytest.approx(expected, abs=1e-12)

    def test_output_standardization(self):
        m = _model(2)
        a, b = np.array([[1, 2, 3, 4, 5]]), np.array([[5, 4, 3, 2, 1]])
        base = forward_batch(m, a, b)[0][0]
        m.target_shift, m.target_scale = 100.0, 7.0
        assert forward_batch(m, a, b)[0][0] == pytest.approx(100.0 + 7.0 * base)

    def test_order_matters(self):
        m = _model(3)
        a, b = np.array([1, 2, 3, 4, 5]), np.array([9, 9, 0, 0, 0])
        assert forward(m, a, b) != forward(m, b, a)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            forward(_model(), np.zeros(4, dtype=int), np.zeros(5, dtype=int))

    def test_id_out_of_range(self):
        with pytest.raises(ValueError):
            forward(_model(), np.array([0, 0, 0, 0, 99]), np.zeros(5, dtype=int))

    def test_frozen_embedding_is_read_only(self):
        m = _model()
        assert "embedding" not in m.params()
        with pytest.raises(ValueError):
            m.embedding[1, 0] = 5.0


class TestGradients:
    @pytest.mark.parametrize("trainable", [False, True])
    def test_composed_gradient_check(self, trainable):
        rng = np.random.default_rng(7)
        m = _model(7, vocab=6, dim=2, seq_len=4, hidden=3, trainable_embeddings=trainable)
        m.target_scale = 1.7
        data = _pairs(rng, 3, seq_len=4, vocab=6)
        r = rng.normal(size=3)

        def objective():
            return float(forward_batch(m, data.seq_a, data.seq_b)[0] @ r)

        _, cache = forward_batch(m, data.seq_a, data.seq_b)
        grads = backward_batch(m, r, cache)
        params = m.params()
        if trainable:
            # padding row is pinned: leave it out of the numeric comparison
            assert not grads["embedding"][0].any()
            grads = dict(grads, embedding=grads["embedding"][1:])
            params = dict(params, embedding=m.embedding[1:])
        checks = grad_check(objective, params, grads, eps=1e-4, tol=1e-4, abs_floor=1e-6)
        for name, c in checks.items():
            assert c.passed, (name, c)

    def test_branch_a_update_moves_branch_b(self):
        m = _model(5)
        a = np.array([[1, 2, 3, 4, 5]])
        b = np.array([[6, 7, 8, 9, 10]])
        before_b = encode_branch(m, b).copy()
        # loss that only depends on branch A's features
        _, cache = forward_batch(m, a, b)
        dpred = np.ones(1)
        m.head.W[15:] = 0.0
        grads = backward_batch(m, dpred, cache)
        assert grads["lstm.W"].any()
        m.lstm.W -= 0.1 * grads["lstm.W"]
        assert not np.allclose(encode_branch(m, b), before_b)

    def test_single_parameter_set(self):
        m = _model()
        assert set(m.params()) == {"lstm.W", "lstm.U", "lstm.b", "head.W", "head.b"}
        assert m.head.W.shape == (2 * 5 * 3,)


class TestPredict:
    @pytest.mark.parametrize(
        "raw, expected", [(-3.2, 1), (1500.0, 1000), (263.4, 263), (263.5, 264), (0.4, 1), (999.5, 1000)]
    )
    def test_round_distance(self, raw, expected):
        assert round_distance(raw) == expected

    def test_predict_in_range(self):
        rng = np.random.default_rng(0)
        m = _model(0)
        m.target_shift, m.target_scale = 500.0, 2000.0
        data = _pairs(rng, 200)
        out = predict_batch(m, data)
        assert out.dtype == np.int64
        assert ((out >= 1) & (out <= 1000)).all()
        assert out[0] == predict(m, data.seq_a[0], data.seq_b[0])


class TestEarlyStopping:
    def test_counter(self):
        s = EarlyStopping(2)
        assert s.update(3.0, 1)
        assert not s.update(3.0, 2)  # equal is not an improvement
        assert not s.should_stop
        assert not s.update(4.0, 3)
        assert s.should_stop and s.best_epoch == 1

    def test_stops_after_patience_and_restores_best(self):
        rng = np.random.default_rng(0)
        m = _model(0)
        data = _pairs(rng, 16)
        scores = [9.0, 8.0, 7.0, 7.5, 7.2, 7.1, 7.05, 7.01, 1.0, 1.0]
        snaps = {}

        def metric(model, epoch):
            snaps[epoch] = {k: v.copy() for k, v in model.params().items()}
            return scores[epoch - 1]

        cfg = TrainConfig(max_epochs=10, patience=5, batch_size=8, lr=1e-2)
        _, hist = train(m, data, data, cfg, val_metric=metric)
        assert hist.best_epoch == 3
        assert hist.stopped_epoch == 8
        assert len(hist.val_mae) == 8
        for k, v in m.params().items():
            np.testing.assert_array_equal(v, snaps[3][k])
        assert not np.array_equal(snaps[3]["lstm.W"], snaps[8]["lstm.W"])

    def test_strictly_improving_runs_all_epochs(self):
        rng = np.random.default_rng(1)
        m = _model(1)
        data = _pairs(rng, 8)
        cfg = TrainConfig(max_epochs=7, patience=2, batch_size=4)
        _, hist = train(m, data, data, cfg, val_metric=lambda _m, e: 100.0 - e)
        assert hist.stopped_epoch == 7 and hist.best_epoch == 7
        assert [r["epoch"] for r in hist.rows()] == list(range(1, 8))


class TestTrain:
    def test_one_small_step_lowers_loss(self):
        rng = np.random.default_rng(3)
        m = _model(3)
        data = _pairs(rng, 32)
        before = mae_loss(forward_batch(m, data.seq_a, data.seq_b)[0], data.distance)[0]
        cfg = TrainConfig(max_epochs=1, batch_size=32, lr=1e-4)
        train(m, data, data, cfg)
        after = mae_loss(forward_batch(m, data.seq_a, data.seq_b)[0], data.distance)[0]
        assert after < before

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        data = _pairs(rng, 40)
        cfg = TrainConfig(max_epochs=3, batch_size=16, seed=4)
        m1, h1 = train(_model(2), data, data, cfg)
        m2, h2 = train(_model(2), data, data, cfg)
        assert h1 == h2
        for k in m1.params():
            np.testing.assert_array_equal(m1.params()[k], m2.params()[k])

    def test_learns_constant_target(self):
        rng = np.random.default_rng(9)
        data = _pairs(rng, 64)
        data.distance[:] = 300.0
        m = _model(9, target_shift=250.0, target_scale=100.0)
        cfg = TrainConfig(max_epochs=60, batch_size=16, lr=1e-2)
        _, hist = train(m, data, data, cfg)
        assert hist.val_mae[hist.best_epoch - 1] < 10.0

    def test_empty_sets_rejected(self):
        empty = PairSet(np.zeros((0, 5)), np.zeros((0, 5)), np.zeros(0))
        data = _pairs(np.random.default_rng(0), 4)
        with pytest.raises(ValueError):
            train(_model(), empty, data, TrainConfig())
        with pytest.raises(ValueError):
            train(_model(), data, empty, TrainConfig())

    def test_non_finite_loss_aborts(self):
        data = _pairs(np.random.default_rng(0), 4)
        data.distance[0] = math.inf
        with pytest.raises(TrainingError, match="epoch 1"):
            train(_model(), data, data, TrainConfig(max_epochs=2))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


class TestCheckpoint:
    def test_round_trip_is_byte_identical(self, tmp_path):
        m = _model(4, target_shift=12.5, target_scale=3.0)
        digest = bytes(range(32))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, m, TrainConfig(), digest, extra={"baseline_mean": 55.5})
        loaded, meta = load_checkpoint(p1)
        save_checkpoint(p2, loaded, TrainConfig(**meta["train"]), meta["vocab_hash"], meta["extra"])
        assert p1.read_bytes() == p2.read_bytes()
        assert meta["extra"] == {"baseline_mean": 55.5}
        a, b = np.array([1, 2, 3, 4, 5]), np.array([0, 3, 3, 0, 1])
        assert forward(loaded, a, b) == forward(m, a, b)

    def test_layout_header(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, _model())
        raw = path.read_bytes()
        assert raw[:8] == CHECKPOINT_MAGIC == b"VCPCKPT\x00"
        assert struct.unpack("<I", raw[8:12]) == (1,)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(100))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, _model())
        raw = bytearray(path.read_bytes())
        raw[8:12] = struct.pack("<I", 2)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, _model())
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, _model())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_vocab_hash_mismatch_warns(self, tmp_path, caplog):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, _model(), vocab_hash=b"\x01" * 32)
        with caplog.at_level(logging.WARNING, logger="vcp.siamese"):
            _, meta = load_checkpoint(path, expected_vocab_hash=b"\x02" * 32)
        assert "different vocabulary" in caplog.text
        assert meta["vocab_hash"] == b"\x01" * 32

    def test_trainable_embedding_round_trip(self, tmp_path):
        m = _model(trainable_embeddings=True)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, m)
        loaded, _ = load_checkpoint(path)
        assert loaded.trainable_embeddings
        assert "embedding" in loaded.params()


def test_clone_is_independent():
    m = _model()
    c = clone(m)
    c.lstm.W += 1.0
    assert not np.array_equal(c.lstm.W, m.lstm.W)


def test_flatten_used_per_branch():
    m = _model()
    seq = np.array([[1, 2, 3, 0, 0]])
    h, _ = lstm_forward(m.embedding[seq], m.lstm)
    np.testing.assert_array_equal(encode_branch(m, seq), flatten(h))
