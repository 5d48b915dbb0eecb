import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import modrec.training as training
from modrec.dataset import IQFrame
from modrec.errors import DataError, NumericError, ShapeError
from modrec.model import ModelConfig, build_model
from modrec.seeding import philox
from modrec.training import (
    AdamState,
    SnrConfusion,
    TrainConfig,
    adam_step,
    emit_report,
    evaluate,
    train,
    write_history,
)

TINY = dict(num_classes=2, frame_length=16, residual_channels=4,
            lstm_hidden=8, dense_sizes=(8, 8))


def scalar_adam_oracle(g_seq, lr, b1, b2, eps, w0):
    """Independent scalar Adam, straight from the update equations."""
    w, m, v = w0, 0.0, 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        w -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return w


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0]), np.array([[3.0]])]
    g = [np.zeros(2), np.zeros((1, 1))]
    state = AdamState.fresh(p)
    before = [a.copy() for a in p]
    adam_step(p, g, state, TrainConfig(), t=1)
    for a, b in zip(p, before):
        assert np.array_equal(a, b)


def test_adam_first_step_is_signed_learning_rate():
    # m_hat/sqrt(v_hat) = g/|g| up to eps, so |g| >> eps keeps the
    # deviation under lr * 1e-6
    cfg = TrainConfig(learning_rate=1e-3)
    for g0 in (0.7, -3.0, 0.05):
        p = [np.array([0.5])]
        state = AdamState.fresh(p)
        adam_step(p, [np.array([g0])], state, cfg, t=1)
        update = p[0][0] - 0.5
        assert abs(update - (-cfg.learning_rate * np.sign(g0))) <= cfg.learning_rate * 1e-6


def test_adam_trajectory_matches_scalar_oracle():
    cfg = TrainConfig(learning_rate=0.05)
    w = np.array([1.3])
    state = AdamState.fresh([w])
    grads = []
    w_trace = 1.3
    for t in range(1, 11):
        g = 2.0 * w[0]  # d/dw of w^2
        grads.append(g)
        adam_step([w], [np.array([g])], state, cfg, t=t)
    # oracle replays the same gradient sequence
    expected = scalar_adam_oracle(grads, cfg.learning_rate, cfg.adam_beta1,
                                  cfg.adam_beta2, cfg.adam_eps, 1.3)
    assert w[0] == pytest.approx(expected, abs=1e-12)


def test_adam_shape_mismatch():
    p = [np.zeros(3)]
    state = AdamState.fresh(p)
    with pytest.raises(ShapeError):
        adam_step(p, [np.zeros(4)], state, TrainConfig(), t=1)


def test_adam_nonfinite_gradient_aborts():
    p = [np.zeros(2)]
    state = AdamState.fresh(p)
    with pytest.raises(NumericError):
        adam_step(p, [np.array([1.0, np.nan])], state, TrainConfig(), t=1)


def test_adam_requires_positive_step_index():
    p = [np.zeros(1)]
    with pytest.raises(ShapeError):
        adam_step(p, [np.zeros(1)], AdamState.fresh(p), TrainConfig(), t=0)


# ---------------------------------------------------------------------------
# train


def _toy_frames(rng, n_per_class=30, length=16):
    """Constant-amplitude frames vs zero-ish frames: linearly separable."""
    frames = []
    for _ in range(n_per_class):
        frames.append(IQFrame(i=np.ones(length, np.float32),
                              q=np.ones(length, np.float32), class_index=0, snr_db=10))
        tiny = rng.normal(size=length).astype(np.float32) * 1e-3
        frames.append(IQFrame(i=tiny, q=tiny[::-1].copy(), class_index=1, snr_db=10))
    return frames


def test_train_zero_epochs_returns_initialization():
    rng = philox(1)
    frames = _toy_frames(rng, n_per_class=4)
    cfg_m = ModelConfig(seed=3, **TINY)
    cfg_t = TrainConfig(epochs=0, dtype="float64")
    params, history = train(cfg_m, cfg_t, frames, frames)
    reference = build_model(cfg_m)
    for (n1, t1), (n2, t2) in zip(params.named_tensors(), reference.named_tensors()):
        assert t1.data.tobytes() == t2.data.tobytes(), n1
    assert history.train_loss == [] and history.val_acc == []


def test_train_separates_toy_classes():
    rng = philox(2)
    train_set = _toy_frames(rng, n_per_class=24)
    val_set = _toy_frames(philox(3), n_per_class=8)
    cfg_m = ModelConfig(seed=0, **TINY)
    cfg_t = TrainConfig(epochs=20, batch_size=16, seed=0)
    params, history = train(cfg_m, cfg_t, train_set, val_set)
    assert max(history.val_acc) == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_train_loss_descends(seed):
    frames = _toy_frames(philox(50 + seed), n_per_class=16)
    cfg_m = ModelConfig(seed=seed, **TINY)
    cfg_t = TrainConfig(epochs=5, batch_size=8, seed=seed)
    _, history = train(cfg_m, cfg_t, frames, frames[:8])
    assert history.train_loss[-1] < history.train_loss[0]


def test_train_is_deterministic():
    frames = _toy_frames(philox(4), n_per_class=8)
    cfg_m = ModelConfig(seed=5, **TINY)
    cfg_t = TrainConfig(epochs=2, batch_size=8, seed=7)
    p1, h1 = train(cfg_m, cfg_t, frames, frames[:4])
    p2, h2 = train(cfg_m, cfg_t, frames, frames[:4])
    for t1, t2 in zip(p1.tensors(), p2.tensors()):
        assert t1.data.tobytes() == t2.data.tobytes()
    assert h1.train_loss == h2.train_loss
    assert h1.val_acc == h2.val_acc


def test_train_rejects_empty_sets():
    cfg_m = ModelConfig(seed=0, **TINY)
    with pytest.raises(DataError):
        train(cfg_m, TrainConfig(epochs=1), [], [])


# ---------------------------------------------------------------------------
# evaluate


def _random_eval_set(rng, k=3, snrs=(-10, 0, 10), per=8):
    frames = []
    for ci in range(k):
        for snr in snrs:
            for _ in range(per):
                frames.append(IQFrame(i=rng.normal(size=16).astype(np.float32),
                                      q=rng.normal(size=16).astype(np.float32),
                                      class_index=ci, snr_db=snr))
    return frames


def _stub_predictor(fn):
    """Replace the model's batch predictor with a label-level stub."""

    def wrapper(params, cfg, x, chunk=256):
        return fn(x)

    return wrapper


def test_evaluate_perfect_predictor_is_diagonal(monkeypatch):
    rng = philox(5)
    frames = _random_eval_set(rng)
    labels = np.array([f.class_index for f in frames])
    cursor = {"i": 0}

    def perfect(x):
        lo = cursor["i"]
        cursor["i"] += x.shape[0]
        return labels[lo : cursor["i"]]

    monkeypatch.setattr(training, "predict_array", _stub_predictor(perfect))
    cfg = ModelConfig(num_classes=3, frame_length=16)
    confusion, acc_by_snr, overall = evaluate(build_model(cfg), cfg, frames)
    assert overall == 1.0
    for snr, mat in confusion.matrices.items():
        assert acc_by_snr[snr] == 1.0
        assert np.array_equal(mat, np.diag(np.diag(mat)))


def test_evaluate_constant_predictor_fills_column_zero(monkeypatch):
    rng = philox(6)
    frames = _random_eval_set(rng)
    monkeypatch.setattr(training, "predict_array",
                        _stub_predictor(lambda x: np.zeros(x.shape[0], dtype=np.int64)))
    cfg = ModelConfig(num_classes=3, frame_length=16)
    confusion, acc_by_snr, overall = evaluate(build_model(cfg), cfg, frames)
    n_class0 = sum(1 for f in frames if f.class_index == 0)
    assert overall == pytest.approx(n_class0 / len(frames))
    for mat in confusion.matrices.values():
        assert mat[:, 1:].sum() == 0


def test_evaluate_row_sums_match_stratum_counts():
    rng = philox(7)
    frames = _random_eval_set(rng, k=2, per=5)
    cfg = ModelConfig(num_classes=2, frame_length=16, residual_channels=4,
                      lstm_hidden=8, dense_sizes=(8, 8))
    params = build_model(cfg)
    confusion, acc_by_snr, overall = evaluate(params, cfg, frames)
    recount = {}
    for f in frames:
        key = (int(f.snr_db), int(f.class_index))
        recount[key] = recount.get(key, 0) + 1
    for snr, mat in confusion.matrices.items():
        for ci in range(2):
            assert mat[ci].sum() == recount[(snr, ci)]
    total = sum(m.sum() for m in confusion.matrices.values())
    assert total == len(frames)
    assert overall == pytest.approx(
        sum(np.trace(m) for m in confusion.matrices.values()) / total)


def test_evaluate_rejects_out_of_range_class():
    frames = [IQFrame(i=np.zeros(16, np.float32), q=np.zeros(16, np.float32),
                      class_index=5, snr_db=0)]
    cfg = ModelConfig(num_classes=3, frame_length=16)
    with pytest.raises(DataError):
        evaluate(build_model(cfg), cfg, frames)


# ---------------------------------------------------------------------------
# reports


def _sample_confusion():
    matrices = {
        -10: np.array([[5, 3], [2, 6]], dtype=np.int64),
        10: np.array([[8, 0], [1, 7]], dtype=np.int64),
    }
    acc = {snr: float(np.trace(m)) / float(m.sum()) for snr, m in matrices.items()}
    return SnrConfusion(matrices, ["bpsk", "qpsk"]), acc


def test_emit_report_file_census(tmp_path):
    confusion, acc = _sample_confusion()
    written = emit_report(confusion, acc, tmp_path)
    names = sorted(p.name for p in written)
    assert names == ["accuracy_vs_snr.csv", "accuracy_vs_snr.svg",
                     "confusion_-10.csv", "confusion_10.csv"]


def test_emit_report_csv_round_trip(tmp_path):
    confusion, acc = _sample_confusion()
    emit_report(confusion, acc, tmp_path)
    for snr, mat in confusion.matrices.items():
        with open(tmp_path / f"confusion_{snr}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["label", "bpsk", "qpsk"]
        parsed = np.array([[int(v) for v in row[1:]] for row in rows[1:]])
        assert np.array_equal(parsed, mat)
        assert [row[0] for row in rows[1:]] == ["bpsk", "qpsk"]
    with open(tmp_path / "accuracy_vs_snr.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["snr_db", "accuracy"]
    assert [int(r[0]) for r in rows[1:]] == [-10, 10]
    for row in rows[1:]:
        assert float(row[1]) == acc[int(row[0])]


def test_emit_report_svg_is_wellformed_with_polyline(tmp_path):
    confusion, acc = _sample_confusion()
    emit_report(confusion, acc, tmp_path)
    tree = ET.parse(tmp_path / "accuracy_vs_snr.svg")
    polylines = tree.getroot().findall(".//{http://www.w3.org/2000/svg}polyline")
    assert len(polylines) == 1


def test_write_history(tmp_path):
    history = training.TrainHistory(train_loss=[1.5, 0.9], train_acc=[0.4, 0.7],
                                    val_acc=[0.5, 0.8])
    path = tmp_path / "history.csv"
    write_history(history, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "train_acc", "val_acc"]
    assert [r[0] for r in rows[1:]] == ["0", "1"]
    assert float(rows[1][1]) == 1.5 and float(rows[2][3]) == 0.8
