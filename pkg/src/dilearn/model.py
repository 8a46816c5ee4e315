"""Linear / one-hidden-layer tanh softmax classifiers with hand-derived gradients.

Parameters live in a :class:`ModelParams` holding an ordered dict of float64
arrays; gradients use the same keys. Every function here is pure: inputs are
never mutated.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, InputError, NumericError, ShapeError

ARCH_TAGS = {"linear": 0, "mlp": 1}
CHECKPOINT_MAGIC = b"DRFT"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class ModelParams:
    arch: str
    feature_dim: int
    num_classes: int
    tensors: dict
    hidden: int | None = None

    @property
    def names(self) -> tuple:
        return ("W", "b") if self.arch == "linear" else ("W1", "b1", "W2", "b2")

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.feature_dim, self.num_classes,
                           {k: v.copy() for k, v in self.tensors.items()}, self.hidden)

    def with_tensors(self, tensors: dict) -> "ModelParams":
        return ModelParams(self.arch, self.feature_dim, self.num_classes, tensors, self.hidden)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in self.names])

    def from_flat(self, vec) -> "ModelParams":
        out, pos = {}, 0
        for k in self.names:
            shape = self.tensors[k].shape
            size = int(np.prod(shape))
            out[k] = np.asarray(vec[pos:pos + size], dtype=float).reshape(shape)
            pos += size
        return self.with_tensors(out)

    def same_shape(self, other: "ModelParams") -> bool:
        return (self.arch == other.arch and self.names == other.names
                and all(self.tensors[k].shape == other.tensors[k].shape for k in self.names))

    def allclose(self, other: "ModelParams", **kw) -> bool:
        return self.same_shape(other) and all(np.allclose(self.tensors[k], other.tensors[k], **kw)
                                              for k in self.names)

    def equal(self, other: "ModelParams") -> bool:
        return self.same_shape(other) and all(np.array_equal(self.tensors[k], other.tensors[k])
                                              for k in self.names)


@dataclass(eq=False)
class OptState:
    velocity: dict
    lr: float = 1e-3
    momentum: float = 0.9

    @classmethod
    def zeros_like(cls, p: ModelParams, lr=1e-3, momentum=0.9) -> "OptState":
        if not lr > 0:
            raise ConfigError(f"must be > 0, got {lr!r}", field="lr")
        if not 0 <= momentum < 1:
            raise ConfigError(f"must lie in [0, 1), got {momentum!r}", field="momentum")
        return cls({k: np.zeros_like(v) for k, v in p.tensors.items()}, lr, momentum)


@dataclass(frozen=True)
class LossConfig:
    lambda_: float = 1.0
    temperature: float = 2.0
    use_class_loss: bool = True
    use_kd_loss: bool = True
    kd_t2_scaling: bool = False
    kd_on_replay: bool = False

    def validate(self):
        if not self.temperature > 0:
            raise ConfigError(f"must be > 0, got {self.temperature!r}", field="temperature")
        if not self.lambda_ >= 0:
            raise ConfigError(f"must be >= 0, got {self.lambda_!r}", field="lambda")
        if not (self.use_class_loss or self.use_kd_loss):
            raise ConfigError("at least one of use_class_loss / use_kd_loss must be enabled",
                              field="use_class_loss")
        return self


def parse_arch(arch: str, hidden: int | None = None) -> tuple[str, int | None]:
    """Accept ``"linear"``, ``"mlp"`` or ``"mlp(32)"``."""
    arch = arch.strip()
    if arch.startswith("mlp(") and arch.endswith(")"):
        return "mlp", int(arch[4:-1])
    if arch == "mlp":
        return "mlp", 32 if hidden is None else int(hidden)
    if arch == "linear":
        return "linear", None
    raise ConfigError(f"unknown architecture {arch!r}", field="arch")


def init_params(arch: str, d: int, C: int, seed, hidden: int | None = None) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    arch, hidden = parse_arch(arch, hidden)
    if d < 1 or C < 1:
        raise ConfigError("feature_dim and num_classes must be >= 1")
    rng = np.random.default_rng(seed)

    def uniform(rows, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(rows, fan_in))

    if arch == "linear":
        tensors = {"W": uniform(C, d), "b": np.zeros(C)}
    else:
        if hidden is None or hidden < 1:
            raise ConfigError("hidden width must be >= 1", field="hidden")
        tensors = {"W1": uniform(hidden, d), "b1": np.zeros(hidden),
                   "W2": uniform(C, hidden), "b2": np.zeros(C)}
    return ModelParams(arch, d, C, tensors, hidden)


def _check_input(p: ModelParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p.feature_dim:
        raise ShapeError(f"expected rows of dimension {p.feature_dim}, got shape {X.shape}")
    return X


def _forward(p: ModelParams, X: np.ndarray):
    t = p.tensors
    if p.arch == "linear":
        return X @ t["W"].T + t["b"], None
    H = np.tanh(X @ t["W1"].T + t["b1"])
    return H @ t["W2"].T + t["b2"], H


def forward(p: ModelParams, X) -> np.ndarray:
    """Logits of shape ``(n, C)``."""
    return _forward(p, _check_input(p, X))[0]


def embed(p: ModelParams, X) -> np.ndarray:
    """Penultimate representation: inputs for linear models, hidden units for MLPs."""
    X = _check_input(p, X)
    return X if p.arch == "linear" else _forward(p, X)[1]


def _backward(p: ModelParams, X, H, dZ) -> dict:
    t = p.tensors
    if p.arch == "linear":
        return {"W": dZ.T @ X, "b": dZ.sum(axis=0)}
    dA = (dZ @ t["W2"]) * (1.0 - H * H)
    return {"W1": dA.T @ X, "b1": dA.sum(axis=0), "W2": dZ.T @ H, "b2": dZ.sum(axis=0)}


def tempered_softmax(logits, T: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits, T: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_labels(p: ModelParams, y) -> np.ndarray:
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= p.num_classes):
        raise InputError(f"labels must lie in [0, {p.num_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def zero_grads(p: ModelParams) -> dict:
    return {k: np.zeros_like(v) for k, v in p.tensors.items()}


def class_loss_and_grad(p: ModelParams, X, y) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its exact gradient."""
    X = _check_input(p, X)
    y = _check_labels(p, y)
    n = len(y)
    if n == 0 or X.shape[0] != n:
        raise InputError("batch must be non-empty with one label per row")
    Z, H = _forward(p, X)
    logp = _log_softmax(Z)
    loss = -float(logp[np.arange(n), y].mean())
    dZ = np.exp(logp)
    dZ[np.arange(n), y] -= 1.0
    return loss, _backward(p, X, H, dZ / n)


def kd_loss_and_grad(p: ModelParams, p_prev: ModelParams, X, T: float = 2.0,
                     t2_scaling: bool = False) -> tuple[float, dict]:
    """Mean cross-entropy from the tempered teacher distribution to the tempered student.

    The teacher ``p_prev`` is a constant; gradients are w.r.t. ``p`` only.
    """
    if not p.same_shape(p_prev):
        raise InputError("student and teacher parameters have different shapes")
    if not T > 0:
        raise InputError("temperature must be > 0")
    X = _check_input(p, X)
    n = X.shape[0]
    if n == 0:
        raise InputError("batch must be non-empty")
    Z, H = _forward(p, X)
    q = tempered_softmax(_forward(p_prev, X)[0], T)
    logp = _log_softmax(Z, T)
    scale = T * T if t2_scaling else 1.0
    loss = -scale * float((q * logp).sum(axis=1).mean())
    dZ = (scale / (T * n)) * (np.exp(logp) - q)
    return loss, _backward(p, X, H, dZ)


def _add(acc: dict, grads: dict, weight: float = 1.0) -> dict:
    return {k: acc[k] + weight * grads[k] for k in acc}


@dataclass
class LossBreakdown:
    total: float
    class_: float = 0.0
    kd: float = 0.0
    ewc: float = 0.0


def total_loss_and_grad(p: ModelParams, p_prev: ModelParams | None, current_X, current_y,
                        replay_X=None, replay_y=None, cfg: LossConfig = LossConfig(),
                        breakdown: bool = False):
    """Classification loss on current plus replay, plus ``lambda`` times KD on current.

    Disabled or vacuous components (no teacher, ``lambda == 0``) are skipped
    entirely rather than added as zeros. With ``use_class_loss`` off and no
    teacher yet, the classification term is used so the first domain is
    still learned.
    """
    cfg.validate()
    current_X = _check_input(p, current_X)
    if replay_X is not None and len(replay_X):
        union_X = np.vstack([current_X, replay_X])
        union_y = np.concatenate([np.asarray(current_y), np.asarray(replay_y)])
    else:
        union_X, union_y = current_X, np.asarray(current_y)
    use_kd = cfg.use_kd_loss and p_prev is not None and cfg.lambda_ != 0
    use_class = cfg.use_class_loss or p_prev is None
    parts = LossBreakdown(0.0)
    grads = None
    if use_class:
        parts.class_, grads = class_loss_and_grad(p, union_X, union_y)
        parts.total = parts.class_
    if use_kd:
        kd_X = union_X if cfg.kd_on_replay else current_X
        parts.kd, g = kd_loss_and_grad(p, p_prev, kd_X, cfg.temperature, cfg.kd_t2_scaling)
        if grads is None:
            parts.total, grads = cfg.lambda_ * parts.kd, {k: cfg.lambda_ * v for k, v in g.items()}
        else:
            parts.total = parts.class_ + cfg.lambda_ * parts.kd
            grads = _add(grads, g, cfg.lambda_)
    if grads is None:
        grads = zero_grads(p)
    if breakdown:
        return parts, grads
    return parts.total, grads


def sgd_update(p: ModelParams, opt: OptState, grads: dict) -> tuple[ModelParams, OptState]:
    """Classical momentum: ``v <- momentum * v + g``; ``p <- p - lr * v``."""
    for k in p.names:
        if grads[k].shape != p.tensors[k].shape or opt.velocity[k].shape != p.tensors[k].shape:
            raise ShapeError(f"shape mismatch for parameter {k}")
        if not np.all(np.isfinite(grads[k])):
            raise NumericError(f"non-finite gradient for parameter {k}; update refused")
    velocity = {k: opt.momentum * opt.velocity[k] + grads[k] for k in p.names}
    tensors = {k: p.tensors[k] - opt.lr * velocity[k] for k in p.names}
    return p.with_tensors(tensors), OptState(velocity, opt.lr, opt.momentum)


def fisher_diag(p: ModelParams, X, y, samples_cap: int | None = None) -> dict:
    """Empirical diagonal Fisher: mean squared per-sample log-likelihood gradient.

    Uses the true labels and the first ``samples_cap`` rows.
    """
    X = _check_input(p, X)
    y = _check_labels(p, y)
    if samples_cap is not None:
        X, y = X[:samples_cap], y[:samples_cap]
    n = len(y)
    if n == 0:
        raise InputError("fisher estimation needs at least one sample")
    Z, H = _forward(p, X)
    G = tempered_softmax(Z)
    G[np.arange(n), y] -= 1.0
    G2 = G * G
    t = p.tensors
    if p.arch == "linear":
        return {"W": G2.T @ (X * X) / n, "b": G2.mean(axis=0)}
    dA = (G @ t["W2"]) * (1.0 - H * H)
    dA2 = dA * dA
    return {"W1": dA2.T @ (X * X) / n, "b1": dA2.mean(axis=0),
            "W2": G2.T @ (H * H) / n, "b2": G2.mean(axis=0)}


def ewc_penalty_and_grad(p: ModelParams, anchor: ModelParams, fisher: dict,
                         lambda_ewc: float) -> tuple[float, dict]:
    """``lambda/2 * sum F (theta - theta*)^2`` and its gradient."""
    if not p.same_shape(anchor):
        raise InputError("parameter and anchor shapes differ")
    loss = 0.0
    grads = {}
    for k in p.names:
        F = np.asarray(fisher[k], dtype=float)
        if F.shape != p.tensors[k].shape:
            raise ShapeError(f"fisher shape mismatch for parameter {k}")
        if np.any(F < 0):
            raise InputError(f"fisher entries must be non-negative (parameter {k})")
        diff = p.tensors[k] - anchor.tensors[k]
        loss += float(np.sum(F * diff * diff))
        grads[k] = lambda_ewc * F * diff
    return 0.5 * lambda_ewc * loss, grads


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(p: ModelParams, path) -> None:
    dims = [p.feature_dim, p.num_classes] if p.arch == "linear" else [p.feature_dim, p.hidden, p.num_classes]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HB", CHECKPOINT_VERSION, ARCH_TAGS[p.arch]))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for k in p.names:
            fh.write(np.ascontiguousarray(p.tensors[k], dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise InputError("not a checkpoint file (bad magic)")
    version, tag = struct.unpack_from("<HB", data, 4)
    if version != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    arch = {v: k for k, v in ARCH_TAGS.items()}.get(tag)
    if arch is None:
        raise InputError(f"unknown architecture tag {tag}")
    offset = 7
    if arch == "linear":
        d, C = struct.unpack_from("<2I", data, offset)
        hidden = None
        offset += 8
    else:
        d, hidden, C = struct.unpack_from("<3I", data, offset)
        offset += 12
    template = init_params(arch, d, C, seed=0, hidden=hidden)
    tensors = {}
    for k in template.names:
        shape = template.tensors[k].shape
        count = int(np.prod(shape))
        tensors[k] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).astype(float)
        offset += 4 * count
    if offset != len(data):
        raise InputError("checkpoint has trailing or missing bytes")
    return template.with_tensors(tensors)
