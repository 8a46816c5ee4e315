"""Sequential training over a domain sequence for the replay/distillation method
and its baselines, producing the full accuracy matrix."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .datagen import DomainSequence, DomainTask, Samples
from .exceptions import ConfigError, InputError, TrainingError
from .memory import (MemoryBuffer, draw_replay_batch, entropy_select, herding_select, random_select,
                     reservoir_update)
from .metrics import AccuracyMatrix, evaluate
from .model import (LossBreakdown, LossConfig, ModelParams, OptState, class_loss_and_grad, embed,
                    ewc_penalty_and_grad, fisher_diag, forward, init_params, sgd_update,
                    tempered_softmax, total_loss_and_grad)

METHODS = ("drift", "naive", "joint", "ewc", "lwf", "drift_random", "drift_herding", "drift_entropy")
DRIFT_METHODS = ("drift", "drift_random", "drift_herding", "drift_entropy")
BASELINE_METHODS = ("naive", "ewc", "lwf")
BUFFER_METHODS = DRIFT_METHODS
RUN_LOG_HEADER = ["step", "task_index", "loss_total", "loss_class", "loss_kd", "buffer_fill"]

_EVERY_N = re.compile(r"every_n_steps\((\d+)\)")


def parse_snapshot_policy(policy: str) -> tuple[str, int | None]:
    """``"task_boundary"`` or ``"every_n_steps(n)"`` -> ``(kind, n)``."""
    policy = policy.strip()
    if policy == "task_boundary":
        return policy, None
    match = _EVERY_N.fullmatch(policy)
    if not match:
        raise ConfigError(f"unknown snapshot policy {policy!r}", field="snapshot_policy")
    n = int(match.group(1))
    if n == 0:
        raise ConfigError("every_n_steps needs n >= 1", field="snapshot_policy")
    return "every_n_steps", n


@dataclass(frozen=True)
class MethodConfig:
    method: str = "drift"
    name: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    buffer_capacity: int = 200
    epochs_per_task: int = 20
    batch_size: int = 16
    # None means half the current batch (at least 1)
    replay_batch_size: int | None = None
    lr: float = 1e-3
    momentum: float = 0.9
    lambda_ewc: float = 3e3
    fisher_samples: int | None = None
    # "sum": each stored Fisher rescaled to unit total mass; "none": raw
    fisher_normalization: str = "sum"
    snapshot_policy: str = "task_boundary"
    arch: str = "linear"
    hidden: int = 32
    class_balanced: bool = False
    seed: int = 0

    @property
    def label(self) -> str:
        return self.name or self.method

    @property
    def uses_buffer(self) -> bool:
        return self.method in BUFFER_METHODS

    def validate(self) -> "MethodConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}", field="method")
        for name in ("batch_size", "epochs_per_task"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", field=name)
        if self.buffer_capacity < 0:
            raise ConfigError("must be >= 0", field="buffer_capacity")
        if self.replay_batch_size is not None and self.replay_batch_size < 0:
            raise ConfigError("must be >= 0", field="replay_batch_size")
        if not self.lr > 0:
            raise ConfigError("must be > 0", field="lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must lie in [0, 1)", field="momentum")
        if not self.lambda_ewc >= 0:
            raise ConfigError("must be >= 0", field="lambda_ewc")
        if self.fisher_normalization not in ("sum", "none"):
            raise ConfigError("must be 'sum' or 'none'", field="fisher_normalization")
        if self.seed < 0:
            raise ConfigError("must be a non-negative integer", field="seed")
        parse_snapshot_policy(self.snapshot_policy)
        self.loss.validate()
        return self

    def with_(self, **changes) -> "MethodConfig":
        loss_keys = {k: changes.pop(k) for k in list(changes) if k in LossConfig.__dataclass_fields__}
        cfg = replace(self, **changes)
        if loss_keys:
            cfg = replace(cfg, loss=replace(cfg.loss, **loss_keys))
        return cfg


class RunLog:
    """Per-step training log; rows are appended to ``path`` every ``flush_every`` steps."""

    def __init__(self, path=None, flush_every: int = 100):
        self.path = path
        self.flush_every = max(1, int(flush_every))
        self.rows: list[list] = []
        self._pending: list[list] = []
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerow(RUN_LOG_HEADER)

    def append(self, step, task_index, parts: LossBreakdown, buffer_fill) -> None:
        row = [step, task_index, parts.total, parts.class_, parts.kd, buffer_fill]
        self.rows.append(row)
        if self.path is not None:
            self._pending.append(row)
            if len(self._pending) >= self.flush_every:
                self.flush()

    def flush(self) -> None:
        if self.path is None or not self._pending:
            return
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for r in self._pending:
                writer.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4]), r[5]])
        self._pending.clear()


@dataclass(eq=False)
class TrainState:
    params: ModelParams
    opt: OptState
    buffer: MemoryBuffer
    rngs: dict
    teacher: ModelParams | None = None
    ewc_anchors: list = field(default_factory=list)
    tasks_seen: int = 0
    steps_seen: int = 0
    teacher_refreshes: int = 0
    # task-aware selection modes: task index -> ranked exemplars
    exemplars: dict = field(default_factory=dict)
    log: RunLog | None = None


def init_state(feature_dim: int, num_classes: int, cfg: MethodConfig, log: RunLog | None = None) -> TrainState:
    cfg.validate()
    init_ss, shuffle_ss, buffer_ss, replay_ss, select_ss = np.random.SeedSequence(cfg.seed).spawn(5)
    params = init_params(cfg.arch, feature_dim, num_classes, seed=init_ss, hidden=cfg.hidden)
    opt = OptState.zeros_like(params, cfg.lr, cfg.momentum)
    capacity = cfg.buffer_capacity if cfg.uses_buffer else 0
    rngs = {name: np.random.default_rng(ss) for name, ss in
            (("shuffle", shuffle_ss), ("buffer", buffer_ss), ("replay", replay_ss), ("select", select_ss))}
    return TrainState(params, opt, MemoryBuffer(capacity, cfg.class_balanced), rngs, log=log)


def snapshot_teacher(state: TrainState, policy: str = "task_boundary") -> TrainState:
    """Freeze a copy of the current parameters as the distillation teacher."""
    parse_snapshot_policy(policy)
    state.teacher = state.params.copy()
    state.teacher_refreshes += 1
    return state


StepFn = Callable[[TrainState, np.ndarray, np.ndarray], tuple[LossBreakdown, dict]]


def _run_epochs(state: TrainState, train: Samples, cfg: MethodConfig, task_index: int, step_fn: StepFn,
                max_steps: int | None = None) -> np.ndarray:
    """Shuffled mini-batch SGD; returns the first epoch's visiting order."""
    kind, every = parse_snapshot_policy(cfg.snapshot_policy)
    n = len(train)
    first_order = None
    steps = 0
    epoch = 0
    while True:
        if max_steps is None and epoch >= cfg.epochs_per_task:
            break
        order = state.rngs["shuffle"].permutation(n)
        if first_order is None:
            first_order = order
        for start in range(0, n, cfg.batch_size):
            if max_steps is not None and steps >= max_steps:
                return first_order
            idx = order[start:start + cfg.batch_size]
            parts, grads = step_fn(state, train.X[idx], train.y[idx])
            state.params, state.opt = sgd_update(state.params, state.opt, grads)
            state.steps_seen += 1
            steps += 1
            if kind == "every_n_steps" and state.steps_seen % every == 0:
                snapshot_teacher(state, cfg.snapshot_policy)
            if state.log is not None:
                state.log.append(state.steps_seen, task_index, parts, len(state.buffer))
        epoch += 1
    return first_order


def _finish_task(state: TrainState, cfg: MethodConfig) -> None:
    state.tasks_seen += 1
    if parse_snapshot_policy(cfg.snapshot_policy)[0] == "task_boundary":
        snapshot_teacher(state, cfg.snapshot_policy)
    if state.log is not None:
        state.log.flush()


def _select_exemplars(state: TrainState, task: DomainTask, cfg: MethodConfig, m: int) -> Samples:
    train = task.train
    if cfg.method == "drift_random":
        return random_select(train, m, state.rngs["select"])
    if cfg.method == "drift_herding":
        return herding_select(train, embed(state.params, train.X), m)
    probs = tempered_softmax(forward(state.params, train.X))
    return entropy_select(train, probs, m)


def _rebalance_buffer(state: TrainState, task: DomainTask, cfg: MethodConfig) -> None:
    quota = state.buffer.capacity // state.tasks_seen
    if quota > 0:
        state.exemplars[state.tasks_seen - 1] = _select_exemplars(state, task, cfg, min(quota, len(task.train)))
    kept = [state.exemplars[t][:quota] for t in sorted(state.exemplars)]
    state.buffer.replace_all([s for part in kept for s in part], offered=len(task.train))


def train_drift_task(state: TrainState, task: DomainTask, cfg: MethodConfig) -> TrainState:
    """Train on one domain with replay from the buffer plus distillation from the teacher.

    ``drift`` offers each training sample to the reservoir once the task's
    optimisation is done, so replay batches only ever hold earlier domains.
    The ``drift_*`` ablations instead refill per-task quotas with a selector.
    """
    if cfg.method not in DRIFT_METHODS:
        raise ConfigError(f"train_drift_task does not handle method {cfg.method!r}", field="method")
    if len(task.train) == 0:
        raise InputError("task has no training samples")
    dim = task.train.dim
    replay_k = max(1, cfg.batch_size // 2) if cfg.replay_batch_size is None else cfg.replay_batch_size

    def step(state, X, y):
        replay = draw_replay_batch(state.buffer, replay_k, state.rngs["replay"])
        if replay:
            rb = Samples.from_list(replay, dim)
            return total_loss_and_grad(state.params, state.teacher, X, y, rb.X, rb.y, cfg.loss, breakdown=True)
        return total_loss_and_grad(state.params, state.teacher, X, y, cfg=cfg.loss, breakdown=True)

    order = _run_epochs(state, task.train, cfg, state.tasks_seen, step)
    if cfg.method == "drift":
        for i in order:
            reservoir_update(state.buffer, task.train[int(i)], state.rngs["buffer"])
        _finish_task(state, cfg)
    else:
        _finish_task(state, cfg)
        _rebalance_buffer(state, task, cfg)
    return state


def train_baseline_task(state: TrainState, task: DomainTask, cfg: MethodConfig) -> TrainState:
    """Naive fine-tuning, EWC (penalty per stored anchor) or LwF (distillation, no buffer)."""
    if cfg.method not in BASELINE_METHODS:
        raise ConfigError(f"train_baseline_task does not handle method {cfg.method!r}", field="method")
    if len(task.train) == 0:
        raise InputError("task has no training samples")

    if cfg.method == "naive" or (cfg.method == "ewc" and cfg.lambda_ewc == 0):
        def step(state, X, y):
            loss, grads = class_loss_and_grad(state.params, X, y)
            return LossBreakdown(loss, loss), grads
    elif cfg.method == "ewc":
        # lambda_ewc weighs the penalty against a data term summed over the
        # task; our class loss is a mean, so divide by the task size
        lam = cfg.lambda_ewc / len(task.train)

        def step(state, X, y):
            loss, grads = class_loss_and_grad(state.params, X, y)
            parts = LossBreakdown(loss, loss)
            for anchor, fisher in state.ewc_anchors:
                pen, g = ewc_penalty_and_grad(state.params, anchor, fisher, lam)
                parts.ewc += pen
                grads = {k: grads[k] + g[k] for k in grads}
            parts.total = parts.class_ + parts.ewc
            return parts, grads
    else:
        def step(state, X, y):
            return total_loss_and_grad(state.params, state.teacher, X, y, cfg=cfg.loss, breakdown=True)

    _run_epochs(state, task.train, cfg, state.tasks_seen, step)
    if cfg.method == "ewc":
        fisher = fisher_diag(state.params, task.train.X, task.train.y, cfg.fisher_samples)
        if cfg.fisher_normalization == "sum":
            total = sum(float(v.sum()) for v in fisher.values())
            if total > 0:
                fisher = {k: v / total for k, v in fisher.items()}
        state.ewc_anchors.append((state.params.copy(), fisher))
    _finish_task(state, cfg)
    return state


def step_budget(sequence: DomainSequence, cfg: MethodConfig) -> int:
    """Optimizer steps a sequential run of ``cfg`` takes over ``sequence``."""
    return sum(cfg.epochs_per_task * math.ceil(len(t.train) / cfg.batch_size) for t in sequence.tasks)


def train_joint(sequence: DomainSequence, cfg: MethodConfig, log: RunLog | None = None) -> ModelParams:
    """One run over the shuffled union of all training sets, with the sequential step budget."""
    if len(sequence) == 0:
        raise InputError("sequence is empty")
    cfg = cfg.validate()
    state = init_state(sequence.feature_dim, sequence.num_classes, cfg, log)
    union = Samples.concat([t.train for t in sequence.tasks])

    def step(state, X, y):
        loss, grads = class_loss_and_grad(state.params, X, y)
        return LossBreakdown(loss, loss), grads

    _run_epochs(state, union, cfg, 0, step, max_steps=step_budget(sequence, cfg))
    if log is not None:
        log.flush()
    return state.params


def train_task(state: TrainState, task: DomainTask, cfg: MethodConfig) -> TrainState:
    if cfg.method in DRIFT_METHODS:
        return train_drift_task(state, task, cfg)
    return train_baseline_task(state, task, cfg)


def evaluate_column(params: ModelParams, sequence: DomainSequence) -> list[float]:
    return [evaluate(params, t.test.X, t.test.y) for t in sequence.tasks]


def run_sequence(sequence: DomainSequence, cfg: MethodConfig, log: RunLog | None = None,
                 return_state: bool = False):
    """Train through ``sequence`` in order, evaluating every task after each one.

    ``joint`` trains once on all data; each column then holds that model's
    accuracies.
    """
    if len(sequence) == 0:
        raise InputError("sequence is empty")
    cfg = cfg.validate()
    T = len(sequence)
    matrix = AccuracyMatrix.empty(T)
    if cfg.method == "joint":
        params = train_joint(sequence, cfg, log)
        column = evaluate_column(params, sequence)
        for t in range(T):
            matrix[:, t] = column
        if return_state:
            state = init_state(sequence.feature_dim, sequence.num_classes, cfg)
            state.params = params
            state.tasks_seen = T
            return matrix, state
        return matrix
    state = init_state(sequence.feature_dim, sequence.num_classes, cfg, log)
    for t, task in enumerate(sequence.tasks):
        try:
            train_task(state, task, cfg)
            matrix[:, t] = evaluate_column(state.params, sequence)
        except Exception as exc:
            raise TrainingError(f"task {t} (domain {task.domain_id}) failed: {exc}", partial=matrix) from exc
    return (matrix, state) if return_state else matrix
