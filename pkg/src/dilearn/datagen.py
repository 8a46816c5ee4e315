"""Domain-incremental data: sample containers, synthetic shifted streams,
manifest-driven domain splits and the on-disk formats that go with them."""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import ConfigError, DataWarning, InputError

SPLIT_TYPES = ("users", "scenes", "hybrid")
MANIFEST_HEADER = ["sample_id", "class_id", "user_id", "scene_id", "feature_ref"]
SPLIT_PLAN_HEADER = ["task_index", "domain_id", "sample_id", "split"]
FVEC_MAGIC = b"FVEC"


@dataclass(frozen=True)
class Sample:
    id: object
    features: np.ndarray
    label: int
    domain_id: int


@dataclass(frozen=True, eq=False)
class Samples:
    """Column-oriented batch of samples.

    Indexing with an int returns a :class:`Sample`; with a slice, mask or
    index array it returns another ``Samples``.
    """

    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray
    domain_ids: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if self.X.ndim != 2 or self.X.shape[0] != n or len(self.y) != n or len(self.domain_ids) != n:
            raise InputError("ids, X, y and domain_ids must have matching lengths")

    @classmethod
    def empty(cls, dim: int) -> "Samples":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, dim)), np.empty(0, dtype=np.int64),
                   np.empty(0, dtype=np.int64))

    @classmethod
    def from_list(cls, items: Sequence[Sample], dim: int | None = None) -> "Samples":
        if not items:
            if dim is None:
                raise InputError("cannot infer feature dimension from an empty list")
            return cls.empty(dim)
        return cls(
            np.array([s.id for s in items]),
            np.vstack([np.asarray(s.features, dtype=float) for s in items]),
            np.array([s.label for s in items], dtype=np.int64),
            np.array([s.domain_id for s in items], dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts: Sequence["Samples"]) -> "Samples":
        parts = [p for p in parts if len(p)] or list(parts[:1])
        if len(parts) == 1:
            return parts[0]
        return cls(
            np.concatenate([p.ids for p in parts]),
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.domain_ids for p in parts]),
        )

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Sample(self.ids[idx], self.X[idx], int(self.y[idx]), int(self.domain_ids[idx]))
        return Samples(self.ids[idx], self.X[idx], self.y[idx], self.domain_ids[idx])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class DomainTask:
    domain_id: int
    train: Samples
    test: Samples


@dataclass(frozen=True)
class DomainSequence:
    tasks: tuple
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        ids = [t.domain_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise InputError(f"domain ids must be pairwise distinct, got {ids}")

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, k) -> DomainTask:
        return self.tasks[k]


@dataclass(frozen=True)
class DomainShift:
    """Affine shift applied once per domain step: rotate, translate, scale."""

    rotation_angle: float = math.pi / 6
    translation_magnitude: float = 0.0
    scale_factor: float = 1.0
    rotation_plane: tuple = (0, 1)
    # None means the first basis vector.
    translation_direction: tuple | None = None


@dataclass(frozen=True)
class SyntheticConfig:
    num_domains: int = 5
    num_classes: int = 6
    feature_dim: int = 16
    samples_per_class_per_domain: int = 100
    class_separation: float = 5.0
    plane_weight: float = 0.5
    domain_shift: DomainShift = field(default_factory=DomainShift)
    noise_std: float = 1.0
    test_ratio: float = 0.2
    seed: int = 0

    def validate(self):
        for name in ("num_domains", "num_classes", "feature_dim", "samples_per_class_per_domain"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"must be an integer >= 1, got {value!r}", field=name)
        if not self.class_separation > 0:
            raise ConfigError(f"must be > 0, got {self.class_separation!r}", field="class_separation")
        if not 0 <= self.plane_weight <= 1:
            raise ConfigError(f"must lie in [0, 1], got {self.plane_weight!r}", field="plane_weight")
        if not self.noise_std >= 0:
            raise ConfigError(f"must be >= 0, got {self.noise_std!r}", field="noise_std")
        if not 0 < self.test_ratio < 1:
            raise ConfigError(f"must lie in (0, 1), got {self.test_ratio!r}", field="test_ratio")
        shift = self.domain_shift
        if not shift.scale_factor > 0:
            raise ConfigError(f"must be > 0, got {shift.scale_factor!r}", field="scale_factor")
        i, j = shift.rotation_plane
        if i == j or not (0 <= i < self.feature_dim and 0 <= j < self.feature_dim):
            raise ConfigError(f"invalid plane {shift.rotation_plane!r} for dim {self.feature_dim}",
                              field="rotation_plane")
        if shift.translation_direction is not None and len(shift.translation_direction) != self.feature_dim:
            raise ConfigError("length must equal feature_dim", field="translation_direction")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"must be a non-negative integer, got {self.seed!r}", field="seed")
        return self


def _translation_vector(shift: DomainShift, dim: int) -> np.ndarray:
    if shift.translation_direction is None:
        u = np.zeros(dim)
        u[0] = 1.0
    else:
        u = np.asarray(shift.translation_direction, dtype=float)
        u = u / np.linalg.norm(u)
    return shift.translation_magnitude * u


def apply_domain_transform(x, shift: DomainShift, k: int) -> np.ndarray:
    """Apply ``shift`` to ``x`` (a vector or a batch of row vectors) ``k`` times."""
    if k < 0:
        raise InputError("repetition count must be >= 0")
    x = np.array(x, dtype=float)
    dim = x.shape[-1]
    i, j = shift.rotation_plane
    c, s = math.cos(shift.rotation_angle), math.sin(shift.rotation_angle)
    t = _translation_vector(shift, dim)
    for _ in range(k):
        xi, xj = x[..., i].copy(), x[..., j].copy()
        x[..., i] = c * xi - s * xj
        x[..., j] = s * xi + c * xj
        x = shift.scale_factor * (x + t)
    return x


def class_prototypes(num_classes: int, dim: int, separation: float, rng, plane=(0, 1),
                     plane_weight: float = 0.0) -> np.ndarray:
    """Class centres of norm ``separation / sqrt(2)``.

    A ``plane_weight`` share of each centre's squared norm sits on a circle in
    ``plane`` (class ``c`` at angle ``2 pi c / C``), so the rotation shift acts
    on it; the rest lies on random orthonormal directions orthogonal to the
    plane, which no shift rotates. With ``plane_weight == 0`` and ``C <= d``
    the centres are exactly ``separation`` apart.
    """
    radius = separation / math.sqrt(2.0)
    i, j = plane
    rest = [a for a in range(dim) if a not in (i, j)] if plane_weight > 0 else list(range(dim))
    if num_classes <= len(rest):
        q, _ = np.linalg.qr(rng.standard_normal((len(rest), num_classes)))
        off = q.T
    else:
        off = rng.standard_normal((num_classes, len(rest)))
        off /= np.linalg.norm(off, axis=1, keepdims=True)
    out = np.zeros((num_classes, dim))
    out[:, rest] = math.sqrt(1.0 - plane_weight) * off
    if plane_weight > 0:
        angles = 2 * math.pi * np.arange(num_classes) / num_classes
        out[:, i] = math.sqrt(plane_weight) * np.cos(angles)
        out[:, j] = math.sqrt(plane_weight) * np.sin(angles)
    return radius * out


def generate_synthetic_stream(cfg: SyntheticConfig) -> DomainSequence:
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    proto_ss, *domain_ss = root.spawn(1 + cfg.num_domains)
    base = class_prototypes(cfg.num_classes, cfg.feature_dim, cfg.class_separation,
                            np.random.default_rng(proto_ss), cfg.domain_shift.rotation_plane,
                            cfg.plane_weight)
    n_per_class = cfg.samples_per_class_per_domain
    per_domain = cfg.num_classes * n_per_class
    tasks = []
    for k in range(cfg.num_domains):
        rng = np.random.default_rng(domain_ss[k])
        centres = apply_domain_transform(base, cfg.domain_shift, k)
        y = np.repeat(np.arange(cfg.num_classes), n_per_class)
        X = centres[y] + cfg.noise_std * rng.standard_normal((per_domain, cfg.feature_dim))
        ids = np.arange(k * per_domain, (k + 1) * per_domain, dtype=np.int64)
        samples = Samples(ids, X, y, np.full(per_domain, k, dtype=np.int64))
        train, test = train_test_split(samples, cfg.test_ratio, seed=int(rng.integers(2**63)))
        tasks.append(DomainTask(k, train, test))
    return DomainSequence(tuple(tasks), cfg.num_classes, cfg.feature_dim)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_test_split(samples: Samples, ratio: float, seed) -> tuple[Samples, Samples]:
    """Class-stratified split; returns ``(train, test)``.

    Per-class test counts use largest-remainder allocation so the total is
    ``round(ratio * n)``. Every class with at least two samples keeps at least
    one in train; singleton classes go to train with a :class:`DataWarning`.
    """
    if not 0 < ratio < 1:
        raise InputError(f"ratio must lie in (0, 1), got {ratio!r}")
    n = len(samples)
    if n < 2:
        raise InputError("need at least 2 samples to split")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(samples.y, return_counts=True)
    singletons = classes[counts < 2]
    if len(singletons):
        warnings.warn(f"classes with a single sample kept in train: {singletons.tolist()}", DataWarning,
                      stacklevel=2)
    eligible = counts >= 2
    exact = ratio * counts
    quota = np.where(eligible, np.minimum(np.floor(exact), counts - 1), 0).astype(int)
    target = min(_round_half_up(ratio * n), int(np.sum(np.where(eligible, counts - 1, 0))))
    remainder = exact - np.floor(exact)
    # largest fractional part first, then lowest class id
    order = sorted(range(len(classes)), key=lambda c: (-remainder[c], classes[c]))
    while quota.sum() < target:
        progressed = False
        for c in order:
            if quota.sum() >= target:
                break
            if eligible[c] and quota[c] < counts[c] - 1:
                quota[c] += 1
                progressed = True
        if not progressed:
            break
    test_mask = np.zeros(n, dtype=bool)
    for c, q in zip(classes, quota):
        if q:
            members = np.flatnonzero(samples.y == c)
            test_mask[rng.choice(members, size=q, replace=False)] = True
    return samples[~test_mask], samples[test_mask]


# -- manifests ------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    class_id: int
    user_id: int
    scene_id: int
    feature_ref: int


@dataclass(frozen=True)
class Manifest:
    rows: tuple

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.sample_id in seen:
                raise InputError(f"duplicate sample_id {row.sample_id!r}")
            seen.add(row.sample_id)
            for name in ("class_id", "user_id", "scene_id", "feature_ref"):
                if getattr(row, name) < 0:
                    raise InputError(f"{name} must be non-negative for sample {row.sample_id!r}")

    def __len__(self):
        return len(self.rows)


def read_manifest(path) -> Manifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise InputError(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise InputError(f"line {lineno}: expected 5 fields, got {len(rec)}")
            try:
                rows.append(ManifestRow(rec[0], *(int(v) for v in rec[1:])))
            except ValueError as exc:
                raise InputError(f"line {lineno}: {exc}") from None
    return Manifest(tuple(rows))


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.rows:
            writer.writerow([r.sample_id, r.class_id, r.user_id, r.scene_id, r.feature_ref])


def write_feature_store(X, path) -> None:
    X = np.ascontiguousarray(X, dtype="<f4")
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(FVEC_MAGIC + struct.pack("<II", n, d))
        fh.write(X.tobytes())


def read_feature_store(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FVEC_MAGIC:
        raise InputError("feature store does not start with FVEC magic")
    n, d = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * n * d
    if len(data) != expected:
        raise InputError(f"feature store size {len(data)} != expected {expected}")
    return np.frombuffer(data, dtype="<f4", count=n * d, offset=12).reshape(n, d).astype(np.float64)


def _split_key(row: ManifestRow, split_type: str):
    if split_type == "users":
        return row.user_id
    if split_type == "scenes":
        return row.scene_id
    return (row.user_id, row.scene_id)


def split_manifest(manifest: Manifest, split_type: str, order_seed) -> list[tuple[int, list]]:
    """Partition manifest rows into domains, in a seeded task order.

    ``domain_id`` is the index of the grouping key in sorted key order, so it
    does not depend on ``order_seed``.
    """
    if split_type not in SPLIT_TYPES:
        raise InputError(f"split_type must be one of {SPLIT_TYPES}, got {split_type!r}")
    if not len(manifest):
        raise InputError("manifest is empty")
    groups: dict = {}
    for row in manifest.rows:
        groups.setdefault(_split_key(row, split_type), []).append(row)
    keys = sorted(groups)
    all_classes = {row.class_id for row in manifest.rows}
    missing = []
    for dom, key in enumerate(keys):
        gap = sorted(all_classes - {r.class_id for r in groups[key]})
        if gap:
            missing.append((dom, gap))
    if missing:
        warnings.warn(f"domains missing classes (domain, classes): {missing}", DataWarning, stacklevel=2)
    order = np.random.default_rng(order_seed).permutation(len(keys))
    return [(int(d), [r.sample_id for r in groups[keys[d]]]) for d in order]


def plan_manifest_split(manifest: Manifest, split_type: str, order_seed, test_ratio: float = 0.2,
                        split_seed=None) -> list[tuple[int, int, object, str]]:
    """Rows of ``(task_index, domain_id, sample_id, split)`` for a manifest."""
    by_id = {r.sample_id: r for r in manifest.rows}
    ss = np.random.SeedSequence(order_seed if split_seed is None else split_seed)
    plan = []
    for k, (domain_id, sample_ids) in enumerate(split_manifest(manifest, split_type, order_seed)):
        labels = np.array([by_id[s].class_id for s in sample_ids], dtype=np.int64)
        ids = np.empty(len(sample_ids), dtype=object)
        ids[:] = sample_ids
        samples = Samples(ids, np.zeros((len(ids), 0)), labels, np.full(len(ids), domain_id))
        child = ss.spawn(1)[0]
        if len(samples) >= 2:
            train, test = train_test_split(samples, test_ratio, seed=child)
        else:
            warnings.warn(f"domain {domain_id} has a single sample; it is used for training only",
                          DataWarning, stacklevel=2)
            train, test = samples, samples[:0]
        plan.extend((k, domain_id, sid, "train") for sid in train.ids)
        plan.extend((k, domain_id, sid, "test") for sid in test.ids)
    return plan


def sequence_from_plan(manifest: Manifest, features: np.ndarray, plan) -> DomainSequence:
    """Materialise a split plan against a feature store."""
    by_id = {r.sample_id: r for r in manifest.rows}
    num_classes = max(r.class_id for r in manifest.rows) + 1
    grouped: dict = {}
    for task_index, domain_id, sid, part in plan:
        entry = grouped.setdefault(task_index, (domain_id, {"train": [], "test": []}))
        entry[1][part].append(sid)
    tasks = []
    for task_index in sorted(grouped):
        domain_id, parts = grouped[task_index]
        built = {}
        for part, sids in parts.items():
            rows = [by_id[s] for s in sids]
            refs = np.array([r.feature_ref for r in rows], dtype=np.int64)
            if len(refs) and refs.max() >= len(features):
                raise InputError(f"feature_ref {refs.max()} out of range for store of {len(features)} rows")
            ids = np.empty(len(sids), dtype=object)
            ids[:] = sids
            built[part] = Samples(ids, features[refs].reshape(len(refs), features.shape[1]),
                                  np.array([r.class_id for r in rows], dtype=np.int64),
                                  np.full(len(rows), domain_id, dtype=np.int64))
        tasks.append(DomainTask(domain_id, built["train"], built["test"]))
    return DomainSequence(tuple(tasks), num_classes, features.shape[1])


def sequence_from_manifest(manifest: Manifest, features: np.ndarray, split_type: str, order_seed,
                           test_ratio: float = 0.2, split_seed=None) -> DomainSequence:
    """Build a :class:`DomainSequence` from a manifest and its feature store."""
    plan = plan_manifest_split(manifest, split_type, order_seed, test_ratio, split_seed)
    return sequence_from_plan(manifest, features, plan)


def write_split_plan(rows, path) -> None:
    """Write plan rows, or the plan of a :class:`DomainSequence`."""
    if isinstance(rows, DomainSequence):
        rows = [(k, t.domain_id, sid, part) for k, t in enumerate(rows.tasks)
                for part, samples in (("train", t.train), ("test", t.test)) for sid in samples.ids]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SPLIT_PLAN_HEADER)
        writer.writerows(rows)


def read_split_plan(path) -> list[tuple[int, int, str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != SPLIT_PLAN_HEADER:
            raise InputError(f"split plan header must be {','.join(SPLIT_PLAN_HEADER)}")
        return [(int(r[0]), int(r[1]), r[2], r[3]) for r in reader if r]


def sequence_to_manifest(sequence: DomainSequence) -> tuple[Manifest, np.ndarray]:
    """Flatten a sequence into a manifest (``user_id`` = domain) plus feature matrix."""
    rows, feats = [], []
    for task in sequence.tasks:
        for samples in (task.train, task.test):
            for i in range(len(samples)):
                rows.append(ManifestRow(str(samples.ids[i]), int(samples.y[i]), task.domain_id, 0,
                                        len(feats)))
                feats.append(samples.X[i])
    return Manifest(tuple(rows)), np.asarray(feats)
