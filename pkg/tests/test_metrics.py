import csv
from contextlib import nullcontext
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dilearn.exceptions import DataWarning, InputError
from dilearn.metrics import (AccuracyMatrix, aa_curve, average_accuracy, backward_forgetting, evaluate,
                             metrics_report, write_report_csv, write_report_json)
from dilearn.model import ModelParams


def _linear(W, b):
    W = np.asarray(W, dtype=float)
    return ModelParams("linear", W.shape[1], W.shape[0], {"W": W, "b": np.asarray(b, dtype=float)})


matrices = st.integers(1, 6).flatmap(lambda T: arrays(np.float64, (T, T), elements=st.floats(0, 100)))


class TestEvaluate:
    def test_perfect(self):
        X = np.eye(3)
        assert evaluate(_linear(np.eye(3), np.zeros(3)), X, [0, 1, 2]) == 100.0

    def test_ties_go_to_class_zero(self):
        p = _linear(np.zeros((2, 2)), np.zeros(2))
        assert evaluate(p, np.ones((5, 2)), [0, 0, 1, 1, 1]) == 40.0

    def test_hand_count(self):
        p = _linear(np.eye(2), np.zeros(2))
        assert evaluate(p, [[1, 0], [0, 1], [1, 0]], [0, 1, 1]) == pytest.approx(200 / 3)

    def test_empty(self):
        with pytest.raises(InputError):
            evaluate(_linear(np.eye(2), np.zeros(2)), np.empty((0, 2)), [])


class TestScores:
    def test_single_task(self):
        assert average_accuracy([[73.0]]) == 73.0
        with pytest.warns(DataWarning):
            assert backward_forgetting([[73.0]]) == 0.0

    def test_final_column(self):
        m = np.full((3, 3), 50.0)
        m[:, 2] = [80, 60, 70]
        assert average_accuracy(m) == 70.0

    def test_all_perfect(self):
        assert average_accuracy(np.full((4, 4), 100.0)) == 100.0

    def test_hand_bwf(self):
        m = np.array([[90, 0, 70], [0, 80, 75], [0, 0, 60]], dtype=float)
        assert backward_forgetting(m) == 12.5

    def test_backward_transfer_is_negative(self):
        m = np.array([[60, 65, 70], [0, 50, 58], [0, 0, 40]], dtype=float)
        assert backward_forgetting(m) < 0

    def test_curve(self):
        assert aa_curve([[90, 70], [0, 80]]) == [90.0, 75.0]
        assert aa_curve([[42.0]]) == [42.0]

    @settings(max_examples=100, deadline=None)
    @given(matrices)
    def test_properties(self, m):
        with pytest.warns(DataWarning) if len(m) == 1 else nullcontext():
            bwf = backward_forgetting(m)
        assert aa_curve(m)[-1] == average_accuracy(m)
        assert 0 <= average_accuracy(m) <= 100
        assert -100 <= bwf <= 100

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6).flatmap(lambda T: st.tuples(arrays(np.float64, T, elements=st.floats(0, 100)),
                                                         st.permutations(range(T - 1)))))
    def test_constant_rows_and_relabeling(self, args):
        consts, perm = args
        T = len(consts)
        m = np.repeat(consts[:, None], T, axis=1)
        assert backward_forgetting(m) == 0
        assert average_accuracy(m) == pytest.approx(np.mean(consts))
        # relabel earlier tasks consistently in rows and columns; last task fixed
        rng = np.random.default_rng(T)
        a = rng.uniform(0, 100, size=(T, T))
        order = list(perm) + [T - 1]
        b = a[np.ix_(order, order)]
        assert backward_forgetting(b) == pytest.approx(backward_forgetting(a))
        assert average_accuracy(b) == pytest.approx(average_accuracy(a))


class TestMatrix:
    def test_validation(self):
        with pytest.raises(InputError):
            AccuracyMatrix(np.zeros((2, 3)))
        with pytest.raises(InputError):
            AccuracyMatrix([[101.0]])

    def test_empty_and_fill(self):
        m = AccuracyMatrix.empty(2)
        assert not m.is_complete()
        m[:, 0] = [50, 40]
        m[:, 1] = [45, 60]
        assert m.is_complete() and m.tolist() == [[50, 45], [40, 60]]


class TestReports:
    def test_report_and_files(self, tmp_path):
        m = AccuracyMatrix([[90, 70], [20, 80]])
        r = metrics_report(m, "drift", "synthetic", 3, capacity=200)
        assert r["AA"] == 75.0 and r["BWF"] == 20.0 and r["aa_curve"] == [90.0, 75.0]
        assert r["capacity"] == 200
        write_report_json(r, tmp_path / "r.json")
        assert json.loads((tmp_path / "r.json").read_text()) == r
        write_report_csv(r, tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0] == ["method", "seed", "k", "t", "accuracy"]
        assert rows[2] == ["drift", "3", "1", "2", "70.0"]
        assert len(rows) == 5

    def test_single_task_report_is_quiet(self, recwarn):
        metrics_report(AccuracyMatrix([[50.0]]), "naive", "b", 0)
        assert not [w for w in recwarn if issubclass(w.category, DataWarning)]

