"""Exemplar memory: a reservoir-sampled buffer and task-aware selection strategies."""

from __future__ import annotations

import csv
import warnings

import numpy as np

from .datagen import Sample, Samples
from .exceptions import DataWarning, InputError

BUFFER_DUMP_HEADER = ["slot", "sample_id", "label", "domain_id", "seen_count"]


class MemoryBuffer:
    """Fixed-capacity sample store.

    ``seen_count`` counts every sample ever offered through :meth:`add`.
    With ``class_balanced`` set, a full buffer evicts from the currently
    largest class instead of uniformly.
    """

    def __init__(self, capacity: int, class_balanced: bool = False):
        if capacity < 0:
            raise InputError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.class_balanced = class_balanced
        self.seen_count = 0
        self._items: list[Sample] = []
        self._class_seen: dict[int, int] = {}

    def __len__(self):
        return len(self._items)

    @property
    def items(self) -> list[Sample]:
        return list(self._items)

    def as_samples(self, dim: int) -> Samples:
        return Samples.from_list(self._items, dim)

    def copy(self) -> "MemoryBuffer":
        out = MemoryBuffer(self.capacity, self.class_balanced)
        out.seen_count = self.seen_count
        out._items = list(self._items)
        out._class_seen = dict(self._class_seen)
        return out

    def add(self, sample: Sample, rng) -> None:
        n = self.seen_count
        self.seen_count += 1
        self._class_seen[sample.label] = self._class_seen.get(sample.label, 0) + 1
        if self.capacity == 0:
            return
        if n < self.capacity:
            self._items.append(sample)
            return
        if self.class_balanced:
            self._add_balanced(sample, rng)
            return
        j = int(rng.integers(0, n + 1))
        if j < self.capacity:
            self._items[j] = sample

    def _add_balanced(self, sample: Sample, rng) -> None:
        counts: dict[int, int] = {}
        for s in self._items:
            counts[s.label] = counts.get(s.label, 0) + 1
        largest = max(counts.values())
        if counts.get(sample.label, 0) == largest:
            # reservoir within the sample's own class
            j = int(rng.integers(0, self._class_seen[sample.label]))
            if j < counts[sample.label]:
                slots = [i for i, s in enumerate(self._items) if s.label == sample.label]
                self._items[slots[int(rng.integers(len(slots)))]] = sample
            return
        big = sorted(c for c, v in counts.items() if v == largest)
        victim = big[int(rng.integers(len(big)))]
        slots = [i for i, s in enumerate(self._items) if s.label == victim]
        self._items[slots[int(rng.integers(len(slots)))]] = sample

    def replace_all(self, items, offered: int = 0) -> None:
        """Overwrite the contents (task-aware selection modes)."""
        items = list(items)
        if len(items) > self.capacity:
            raise InputError("more items than capacity")
        self._items = items
        self.seen_count += offered

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(BUFFER_DUMP_HEADER)
            for slot, s in enumerate(self._items):
                writer.writerow([slot, s.id, s.label, s.domain_id, self.seen_count])


def reservoir_update(buf: MemoryBuffer, s: Sample, rng) -> MemoryBuffer:
    buf.add(s, rng)
    return buf


def draw_replay_batch(buf: MemoryBuffer, k: int, rng) -> list[Sample]:
    """Up to ``k`` buffer items, uniformly without replacement.

    An empty buffer or ``k == 0`` returns ``[]`` without touching ``rng``.
    """
    if k < 0:
        raise InputError("k must be >= 0")
    n = len(buf)
    if n == 0 or k == 0:
        return []
    if k >= n:
        return buf.items
    idx = rng.choice(n, size=k, replace=False)
    return [buf._items[i] for i in idx]


def _as_samples(samples) -> Samples:
    if isinstance(samples, Samples):
        return samples
    return Samples.from_list(list(samples))


def herding_select(samples, features, m: int) -> Samples:
    """Exemplars nearest their class mean, taken one per class per round.

    ``features`` are the representations used for distances (one row per
    sample). Classes are cycled in ascending id order; within a class, ties
    in distance go to the smaller sample id.
    """
    samples = _as_samples(samples)
    if m < 1:
        raise InputError("m must be >= 1")
    F = np.asarray(features, dtype=float)
    if F.shape[0] != len(samples) or not np.all(np.isfinite(F)):
        raise InputError("features must be finite with one row per sample")
    if m > len(samples):
        warnings.warn(f"requested {m} exemplars but only {len(samples)} available", DataWarning, stacklevel=2)
        m = len(samples)
    ranked = []
    for c in np.unique(samples.y):
        members = np.flatnonzero(samples.y == c)
        dist = np.linalg.norm(F[members] - F[members].mean(axis=0), axis=1)
        ranked.append([members[i] for i in sorted(range(len(members)),
                                                  key=lambda i: (dist[i], samples.ids[members[i]]))])
    chosen = []
    depth = 0
    while len(chosen) < m:
        for queue in ranked:
            if depth < len(queue) and len(chosen) < m:
                chosen.append(queue[depth])
        depth += 1
    return samples[np.array(chosen, dtype=np.int64)]


def shannon_entropy(probs) -> np.ndarray:
    P = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    return -terms.sum(axis=-1)


def entropy_select(samples, model_probs, m: int) -> Samples:
    """Top-``m`` samples by predictive entropy; ties go to the smaller sample id."""
    samples = _as_samples(samples)
    P = np.asarray(model_probs, dtype=float)
    if P.ndim != 2 or P.shape[0] != len(samples):
        raise InputError("model_probs must have one row per sample")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise InputError("each row of model_probs must be a probability distribution")
    H = shannon_entropy(P)
    order = sorted(range(len(samples)), key=lambda i: (-H[i], samples.ids[i]))
    return samples[np.array(order[:max(m, 0)], dtype=np.int64)]


def random_select(samples, m: int, rng) -> Samples:
    samples = _as_samples(samples)
    n = len(samples)
    if m < 0:
        raise InputError("m must be >= 0")
    if m >= n:
        return samples
    return samples[rng.choice(n, size=m, replace=False)]
