import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from celleta.errors import BadK, EmptyProfile, InsufficientData, ShapeMismatch, WidthMismatch
from celleta.geo import GridSpec
from celleta.knowledge import CELL_VECTOR_WIDTH
from celleta.models import (
    DEG_METERS, ClassifierConfig, EtaConfig, ModelBundle, chord_feature, class_label, init_head, load_classifier,
    predict_cell_time, save_classifier, speed_level, top_k_mask, train_classifier, train_eta, transfer,
)
from celleta.neural import DenseNet, TrainConfig

NAN = float("nan")
QUICK = TrainConfig(epochs=5, batch_size=16, dropout=0.0)


class TestLevels:
    def test_speed_level_worked(self):
        prof = [10.0, NAN, 20.0, NAN, NAN, NAN, NAN, 30.0]
        assert speed_level(prof, 10) == pytest.approx(10 * 20 / 30)

    def test_class_label_worked(self):
        # level/N = 2/3, mean/global = 20/40 -> 1/3 of the way -> bucket 3 of 10
        assert class_label([10.0, 20.0, 30.0] + [NAN] * 5, 40.0, 10) == 3
        # top of the range clamps to N - 1
        assert class_label([40.0] + [NAN] * 7, 40.0, 10) == 9

    def test_empty(self):
        with pytest.raises(EmptyProfile):
            speed_level([NAN] * 8, 10)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.1, 60.0), min_size=1, max_size=8), st.integers(2, 20))
    def test_label_in_range(self, speeds, n):
        prof = speeds + [NAN] * (8 - len(speeds))
        assert 0 < speed_level(prof, n) <= n + 1e-9
        assert 0 <= class_label(prof, 60.0, n) < n


class TestTopK:
    def test_keeps_k_largest(self):
        p = np.array([0.1, 0.4, 0.05, 0.3, 0.15])
        assert np.array_equal(top_k_mask(p, 2), [0, 0.4, 0, 0.3, 0])

    def test_ties_to_lower_index(self):
        assert np.array_equal(top_k_mask(np.full(4, 0.25), 2), [0.25, 0.25, 0, 0])

    def test_batch(self):
        p = np.array([[0.5, 0.3, 0.2], [0.1, 0.1, 0.8]])
        assert np.array_equal(top_k_mask(p, 1), [[0.5, 0, 0], [0, 0, 0.8]])

    @pytest.mark.parametrize("k", [0, 4])
    def test_bad_k(self, k):
        with pytest.raises(BadK):
            top_k_mask(np.ones(3) / 3, k)


def test_chord_feature():
    diag = 0.001 * DEG_METERS * math.sqrt(2)
    assert chord_feature(diag / 2, 0.001) == pytest.approx(0.5)
    assert chord_feature(2 * diag, 0.001) == 1.0


def test_init_head():
    net = DenseNet.build([3, 4, 3], ["relu", "softmax"], seed=0)
    init_head(net, [0, 0, 1], True, 3)
    assert not net.layers[-1].W.any()
    assert np.allclose(np.exp(net.layers[-1].b), [3 / 6, 2 / 6, 1 / 6])
    reg = DenseNet.build([3, 4, 1], ["relu", "identity"], seed=0)
    init_head(reg, np.array([1.0, 3.0]), False)
    assert reg.layers[-1].b[0] == 2.0


def toy_rows(n=300, seed=0, width=6):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, width))
    secs = 5 + 20 * X[:, 0] + 5 * X[:, 1]
    labels = (X[:, 0] * 4).astype(int)
    return X, secs, labels


class TestTraining:
    def test_classifier_needs_two_labels(self):
        with pytest.raises(InsufficientData):
            train_classifier(np.zeros((5, 3)), np.zeros(5, int))

    def test_eta_needs_positive_labels(self):
        with pytest.raises(InsufficientData):
            train_eta(np.zeros((2, 3)), [1.0, 0.0])

    def test_classifier_learns(self):
        X, _, y = toy_rows()
        m = train_classifier(X, y, ClassifierConfig(n_classes=4, hidden=(16,), train=TrainConfig(epochs=40, lr=0.01)))
        assert m.val_accuracy > 0.7
        assert np.allclose(m.probabilities(X).sum(axis=1), 1)

    def test_eta_positive_and_sane(self):
        X, s, _ = toy_rows()
        m = train_eta(X, s, EtaConfig(hidden=(16,), train=TrainConfig(epochs=40, lr=0.01, dropout=0.0)))
        pred = predict_cell_time(m, X)
        assert (pred > 0).all()
        assert np.mean(np.abs(pred - s) / s) < 0.15
        assert isinstance(predict_cell_time(m, X[0]), float)
        with pytest.raises(ShapeMismatch):
            predict_cell_time(m, np.zeros(3))


@pytest.fixture(scope="module")
def sources():
    X, s, y = toy_rows()
    clf = train_classifier(X, y, ClassifierConfig(n_classes=4, hidden=(8,), train=QUICK))
    eta = train_eta(X, s, EtaConfig(hidden=(8, 8), train=QUICK))
    return clf, eta


class TestTransfer:
    def test_body_frozen_head_trained(self, sources):
        X, s, y = toy_rows(100, seed=1)
        for src, labels in zip(sources, (y, s * 0.6)):
            before = src.net.param_bytes()
            tgt = transfer(src, X, labels, QUICK)
            assert src.net.param_bytes() == before  # source untouched
            assert tgt.net.param_bytes(tgt.body) == src.net.param_bytes(src.body)
            assert tgt.net.param_bytes([len(tgt.net) - 1]) != src.net.param_bytes([len(src.net) - 1])
            assert all(tgt.net.layers[i].frozen for i in tgt.body) and not tgt.net.layers[-1].frozen

    def test_width_mismatch(self, sources):
        with pytest.raises(WidthMismatch):
            transfer(sources[1], np.zeros((4, 5)), np.ones(4), QUICK)

    def test_empty_target(self, sources):
        tgt = transfer(sources[1], np.zeros((0, 6)), np.zeros(0), QUICK)
        assert tgt.history.epochs_run == 0


class TestPersistence:
    def test_bundle_round_trip_is_byte_identical(self, small_trained):
        _, _, models = small_trained
        blob = models.bundle.to_bytes()
        back = ModelBundle.from_bytes(blob)
        assert back.to_bytes() == blob
        assert back.layout["eta_input_width"] == back.eta.net.n_in
        assert back.layout["eta_input_width"] == CELL_VECTOR_WIDTH + back.classifier.n_classes + back.embedding.dim + 1

    def test_classifier_file(self, small_trained, tmp_path):
        _, _, models = small_trained
        b = models.bundle
        save_classifier(tmp_path / "c.ctn", b.classifier, b.global_max_speed, b.grid)
        clf, gmax, grid = load_classifier(tmp_path / "c.ctn")
        assert clf.net.param_bytes() == b.classifier.net.param_bytes()
        assert gmax == b.global_max_speed and isinstance(grid, GridSpec) and grid == b.grid
