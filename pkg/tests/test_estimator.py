import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.utils.estimator_checks import parametrize_with_checks

from dilearn.datagen import SyntheticConfig, generate_synthetic_stream
from dilearn.estimator import DomainIncrementalClassifier
from dilearn.exceptions import ConfigError, InputError
from dilearn.trainer import MethodConfig, run_sequence


@parametrize_with_checks([DomainIncrementalClassifier(epochs_per_task=5, lr=0.05)])
def test_sklearn_compatible(estimator, check):
    check(estimator)


@pytest.fixture(scope="module")
def sequence():
    return generate_synthetic_stream(SyntheticConfig(num_domains=3, samples_per_class_per_domain=30, seed=2))


def test_partial_fit_matches_trainer(sequence):
    clf = DomainIncrementalClassifier(method="drift", random_state=5)
    for task in sequence:
        clf.partial_fit(task.train.X, task.train.y, classes=np.arange(6))
    ref = run_sequence(sequence, MethodConfig("drift", seed=5), return_state=True)[1]
    assert clf.params_.equal(ref.params)
    assert clf.n_domains_seen_ == 3


def test_fit_sequence_records_matrix(sequence):
    clf = DomainIncrementalClassifier(method="naive").fit_sequence(sequence)
    ref = run_sequence(sequence, MethodConfig("naive"))
    np.testing.assert_array_equal(clf.accuracy_matrix_.a, ref.a)
    last = sequence[-1].test
    assert clf.score(last.X, last.y) == pytest.approx(ref[2, 2] / 100)


def test_fit_sequence_from_pairs_with_string_labels(sequence):
    names = np.array(list("abcdef"))
    pairs = [(t.train.X, names[t.train.y]) for t in sequence]
    clf = DomainIncrementalClassifier(method="joint").fit_sequence(pairs)
    assert set(clf.predict(sequence[0].test.X)) <= set(names)
    assert clf.accuracy_matrix_.T == 3


def test_predict_proba_rows_sum_to_one(sequence):
    clf = DomainIncrementalClassifier().fit(sequence[0].train.X, sequence[0].train.y)
    P = clf.predict_proba(sequence[0].test.X)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert np.array_equal(clf.classes_[P.argmax(axis=1)], clf.predict(sequence[0].test.X))


def test_classes_required_first(sequence):
    with pytest.raises(InputError):
        DomainIncrementalClassifier().partial_fit(sequence[0].train.X, sequence[0].train.y)


def test_unknown_label_rejected(sequence):
    clf = DomainIncrementalClassifier().partial_fit(sequence[0].train.X, sequence[0].train.y, classes=range(6))
    with pytest.raises(InputError):
        clf.partial_fit(sequence[1].train.X, np.full(len(sequence[1].train), 9))


def test_joint_needs_whole_sequence(sequence):
    with pytest.raises(ConfigError):
        DomainIncrementalClassifier(method="joint").partial_fit(sequence[0].train.X, sequence[0].train.y,
                                                                classes=range(6))


def test_bad_params_surface_on_fit(sequence):
    with pytest.raises(ConfigError):
        DomainIncrementalClassifier(lr=-1).fit(sequence[0].train.X, sequence[0].train.y)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        DomainIncrementalClassifier().predict(np.zeros((1, 3)))


def test_pipeline_and_clone(sequence):
    pipe = make_pipeline(StandardScaler(), DomainIncrementalClassifier(lr=0.01, method="ewc"))
    scores = cross_val_score(pipe, sequence[0].train.X, sequence[0].train.y, cv=3)
    assert scores.mean() > 0.5
    est = DomainIncrementalClassifier(buffer_capacity=7, lambda_kd=0.5)
    assert clone(est).get_params() == est.get_params()
