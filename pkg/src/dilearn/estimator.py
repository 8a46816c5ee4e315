"""scikit-learn compatible front end.

``partial_fit`` consumes one domain at a time, so the usual
``for X, y in domains: clf.partial_fit(X, y, classes=...)`` loop drives a
domain-incremental run.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .datagen import DomainSequence, DomainTask, Samples
from .exceptions import ConfigError, InputError
from .metrics import AccuracyMatrix
from .model import LossConfig, forward, tempered_softmax
from .trainer import MethodConfig, init_state, run_sequence, train_task


class DomainIncrementalClassifier(ClassifierMixin, BaseEstimator):
    """Softmax classifier trained over a sequence of domains sharing one label set.

    Parameters
    ----------
    method : str, default="drift"
        One of ``drift``, ``naive``, ``ewc``, ``lwf``, ``joint``,
        ``drift_random``, ``drift_herding``, ``drift_entropy``. ``joint`` is
        only available through :meth:`fit` and :meth:`fit_sequence`.
    arch : {"linear", "mlp"}, default="linear"
    hidden : int, default=32
        Hidden width when ``arch="mlp"``.
    buffer_capacity : int, default=200
    lambda_kd : float, default=1.0
        Weight of the distillation term.
    temperature : float, default=2.0
    random_state : int, default=0

    The remaining parameters mirror :class:`dilearn.trainer.MethodConfig`.

    Attributes
    ----------
    classes_ : ndarray of shape (n_classes,)
    n_features_in_ : int
    n_domains_seen_ : int
    params_ : ModelParams
    accuracy_matrix_ : AccuracyMatrix
        Set by :meth:`fit_sequence` only.
    """

    def __init__(self, method="drift", arch="linear", hidden=32, buffer_capacity=200, epochs_per_task=20,
                 batch_size=16, replay_batch_size=None, lr=1e-3, momentum=0.9, lambda_kd=1.0,
                 temperature=2.0, use_class_loss=True, use_kd_loss=True, kd_t2_scaling=False,
                 kd_on_replay=False, lambda_ewc=3e3, fisher_samples=None, fisher_normalization="sum",
                 snapshot_policy="task_boundary", class_balanced=False, random_state=0):
        self.method = method
        self.arch = arch
        self.hidden = hidden
        self.buffer_capacity = buffer_capacity
        self.epochs_per_task = epochs_per_task
        self.batch_size = batch_size
        self.replay_batch_size = replay_batch_size
        self.lr = lr
        self.momentum = momentum
        self.lambda_kd = lambda_kd
        self.temperature = temperature
        self.use_class_loss = use_class_loss
        self.use_kd_loss = use_kd_loss
        self.kd_t2_scaling = kd_t2_scaling
        self.kd_on_replay = kd_on_replay
        self.lambda_ewc = lambda_ewc
        self.fisher_samples = fisher_samples
        self.fisher_normalization = fisher_normalization
        self.snapshot_policy = snapshot_policy
        self.class_balanced = class_balanced
        self.random_state = random_state

    def _method_config(self) -> MethodConfig:
        loss = LossConfig(self.lambda_kd, self.temperature, self.use_class_loss, self.use_kd_loss,
                          self.kd_t2_scaling, self.kd_on_replay)
        return MethodConfig(
            method=self.method, loss=loss, buffer_capacity=self.buffer_capacity,
            epochs_per_task=self.epochs_per_task, batch_size=self.batch_size,
            replay_batch_size=self.replay_batch_size, lr=self.lr, momentum=self.momentum,
            lambda_ewc=self.lambda_ewc, fisher_samples=self.fisher_samples,
            fisher_normalization=self.fisher_normalization, snapshot_policy=self.snapshot_policy,
            arch=self.arch, hidden=self.hidden, class_balanced=self.class_balanced,
            seed=int(self.random_state),
        ).validate()

    def _encode(self, y) -> np.ndarray:
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[idx] == y):
            raise InputError(f"labels outside the declared classes {self.classes_.tolist()}")
        return idx

    def _task(self, X, y, domain_id) -> DomainTask:
        n = len(y)
        ids = np.arange(self._next_id, self._next_id + n, dtype=np.int64)
        self._next_id += n
        samples = Samples(ids, X, self._encode(y), np.full(n, domain_id, dtype=np.int64))
        return DomainTask(domain_id, samples, Samples.empty(X.shape[1]))

    def partial_fit(self, X, y, classes=None, domain_id=None):
        """Train on one more domain.

        ``classes`` is required on the first call and fixes the label set for
        every later domain.
        """
        first = not hasattr(self, "state_")
        X, y = validate_data(self, X, y, reset=first)
        cfg = self._method_config()
        if cfg.method == "joint":
            raise ConfigError("joint training needs all domains at once; use fit_sequence", field="method")
        if first:
            if classes is None:
                raise InputError("classes must be passed on the first call to partial_fit")
            self.classes_ = np.asarray(unique_labels(classes))
            self.state_ = init_state(X.shape[1], len(self.classes_), cfg)
            self.n_domains_seen_ = 0
            self._next_id = 0
        dom = self.n_domains_seen_ if domain_id is None else int(domain_id)
        train_task(self.state_, self._task(X, y, dom), cfg)
        self.n_domains_seen_ += 1
        self.params_ = self.state_.params
        return self

    def fit(self, X, y):
        """Train from scratch on a single domain."""
        X, y = validate_data(self, X, y)
        for attr in ("state_", "accuracy_matrix_"):
            if hasattr(self, attr):
                delattr(self, attr)
        if self.method == "joint":
            return self.fit_sequence([(X, y)])
        return self.partial_fit(X, y, classes=unique_labels(y))

    def fit_sequence(self, sequence, classes=None):
        """Train through a whole sequence and record the accuracy matrix.

        ``sequence`` is a :class:`DomainSequence`, or a list of ``(X, y)``
        training pairs (then the matrix is computed on the training data).
        """
        cfg = self._method_config()
        if not isinstance(sequence, DomainSequence):
            pairs = [check_X_y(X, y) for X, y in sequence]
            if not pairs:
                raise InputError("sequence is empty")
            self.classes_ = np.asarray(unique_labels(*(y for _, y in pairs)) if classes is None
                                       else unique_labels(classes))
            self._next_id = 0
            tasks = []
            for k, (X, y) in enumerate(pairs):
                task = self._task(X, y, k)
                tasks.append(DomainTask(k, task.train, task.train))
            sequence = DomainSequence(tuple(tasks), len(self.classes_), pairs[0][0].shape[1])
        else:
            self.classes_ = np.arange(sequence.num_classes)
        matrix, state = run_sequence(sequence, cfg, return_state=True)
        self.state_ = state
        self.params_ = state.params
        self.accuracy_matrix_: AccuracyMatrix = matrix
        self.n_features_in_ = sequence.feature_dim
        self.n_domains_seen_ = len(sequence)
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = validate_data(self, X, reset=False)
        return forward(self.params_, X)

    def decision_function(self, X):
        """Class logits; for two classes, the logit margin of ``classes_[1]``."""
        Z = self._logits(X)
        if Z.shape[1] == 2:
            return Z[:, 1] - Z[:, 0]
        return Z

    def predict_proba(self, X):
        return tempered_softmax(self._logits(X))

    def predict(self, X):
        Z = self._logits(X)
        return self.classes_[np.argmax(Z, axis=1)]
