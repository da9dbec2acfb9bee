"""Synthetic benchmark data with a class-aligned nuisance signal.

The generator reconstructs a pathological allocation: each source domain
contributes a single class and carries a large domain-specific offset on the
nuisance coordinate, so in the source training pool the nuisance predicts
the class perfectly. The small target domain holds both classes at one
shared offset, so there the nuisance carries no class information at all.

Feature layout: coordinate 0 is the class signal (+/- class_signal by
class), coordinate 1 is the domain's nuisance offset, all remaining
coordinates are pure noise; Gaussian noise is added everywhere.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

RANDOM_PART_SIZE = 10
SPLITS = ("train", "val", "test")


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class SamplerContractError(ValueError):
    """A batch could not provide the per-class target-domain samples."""


@dataclass
class DomainSpec:
    domain_id: int
    nuisance_offset: float
    role: str  # "source" or "target"
    class_counts: list[int]

    def validate(self, num_classes: int) -> None:
        if self.role not in ("source", "target"):
            raise ConfigError(f"domain {self.domain_id}: role must be source or target, got {self.role!r}")
        if len(self.class_counts) != num_classes:
            raise ConfigError(
                f"domain {self.domain_id}: expected {num_classes} class counts, got {len(self.class_counts)}"
            )
        if any(c < 0 for c in self.class_counts):
            raise ConfigError(f"domain {self.domain_id}: class counts must be >= 0")
        if self.role == "target" and any(c == 0 for c in self.class_counts):
            raise ConfigError(f"domain {self.domain_id}: a target domain needs every class populated")


@dataclass
class DatasetConfig:
    num_classes: int = 2
    feature_dim: int = 6
    class_signal: float = 0.5
    nuisance_scale: float = 10.0
    noise_sigma: float = 0.25
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0
    domains: list[DomainSpec] | None = None  # None -> default benchmark layout

    def validate(self) -> None:
        if self.num_classes != 2:
            raise ConfigError(f"the generator supports 2 classes, got {self.num_classes}")
        if self.feature_dim < 3:
            raise ConfigError(f"feature_dim must be >= 3, got {self.feature_dim}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split_fractions}")
        if any(f < 0 for f in self.split_fractions):
            raise ConfigError(f"split fractions must be >= 0, got {self.split_fractions}")
        if self.noise_sigma <= 0:
            raise ConfigError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        for spec in resolved_domains(self):
            spec.validate(self.num_classes)


@dataclass(eq=False)
class Sample:
    x: np.ndarray
    class_label: int
    domain_label: int
    domain_role: str
    split: str


@dataclass(eq=False)
class Batch:
    random_part: list[Sample]
    center_part: list[Sample]  # one target-domain training sample per class, by class index


def default_domains(nuisance_scale: float) -> list[DomainSpec]:
    """Small two-class target domain plus one single-class source domain per
    class, at opposite nuisance offsets. 43 target samples per class leave
    30 in the training split under the default fractions."""
    return [
        DomainSpec(domain_id=0, nuisance_offset=0.0, role="target", class_counts=[43, 43]),
        DomainSpec(domain_id=1, nuisance_offset=+nuisance_scale, role="source", class_counts=[300, 0]),
        DomainSpec(domain_id=2, nuisance_offset=-nuisance_scale, role="source", class_counts=[0, 300]),
    ]


def resolved_domains(cfg: DatasetConfig) -> list[DomainSpec]:
    if cfg.domains is not None:
        return cfg.domains
    return default_domains(cfg.nuisance_scale)


def _apportion(count: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder rounding so the split counts sum exactly to count
    raw = [count * f for f in fractions]
    counts = [int(np.floor(v)) for v in raw]
    remainders = [v - c for v, c in zip(raw, counts)]
    for _ in range(count - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    return counts


def generate_dataset(cfg: DatasetConfig) -> list[Sample]:
    """Seeded sample list with stratified train/val/test tags per
    (domain, class) cell. Target cells must land at least one sample in
    every split; fewer than RANDOM_PART_SIZE training samples overall is a
    config error."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xDA)))
    samples: list[Sample] = []
    for spec in resolved_domains(cfg):
        for cls, count in enumerate(spec.class_counts):
            if count == 0:
                continue
            split_counts = _apportion(count, cfg.split_fractions)
            if spec.role == "target" and any(c == 0 for c in split_counts):
                raise ConfigError(
                    f"domain {spec.domain_id} class {cls}: {count} samples cannot cover all splits "
                    f"under fractions {cfg.split_fractions}"
                )
            signal = cfg.class_signal if cls == 0 else -cfg.class_signal
            base = np.zeros(cfg.feature_dim)
            base[0] = signal
            base[1] = spec.nuisance_offset
            feats = base + rng.normal(0.0, cfg.noise_sigma, size=(count, cfg.feature_dim))
            order = rng.permutation(count)
            tags = np.empty(count, dtype=object)
            start = 0
            for split, n_split in zip(SPLITS, split_counts):
                tags[order[start : start + n_split]] = split
                start += n_split
            for i in range(count):
                samples.append(
                    Sample(
                        x=feats[i],
                        class_label=cls,
                        domain_label=spec.domain_id,
                        domain_role=spec.role,
                        split=tags[i],
                    )
                )
    if sum(1 for s in samples if s.split == "train") < RANDOM_PART_SIZE:
        raise ConfigError(f"training split smaller than the batch size {RANDOM_PART_SIZE}")
    return samples


def split_samples(samples: Sequence[Sample], split: str) -> list[Sample]:
    return [s for s in samples if s.split == split]


def sample_batch(train_set: Sequence[Sample], rng: np.random.Generator) -> Batch:
    """One training batch: RANDOM_PART_SIZE uniform draws without replacement
    from the whole training set, plus one uniform target-domain draw per
    class. The two parts are drawn independently; overlap is allowed."""
    if len(train_set) < RANDOM_PART_SIZE:
        raise ConfigError(
            f"training set has {len(train_set)} samples, need >= {RANDOM_PART_SIZE}"
        )
    idx = rng.choice(len(train_set), size=RANDOM_PART_SIZE, replace=False)
    random_part = [train_set[i] for i in idx]

    num_classes = max(s.class_label for s in train_set) + 1
    center_part = []
    for cls in range(num_classes):
        pool = [s for s in train_set if s.domain_role == "target" and s.class_label == cls]
        if not pool:
            raise SamplerContractError(f"no target-domain training sample for class {cls}")
        center_part.append(pool[int(rng.integers(len(pool)))])
    return Batch(random_part=random_part, center_part=center_part)


def class_aware_batch(train_set: Sequence[Sample], rng: np.random.Generator) -> list[Sample]:
    """Batch of RANDOM_PART_SIZE composed by cycling through the populated
    (domain_role, class) cells so each is represented."""
    cells: dict[tuple[str, int], list[Sample]] = {}
    for s in train_set:
        cells.setdefault((s.domain_role, s.class_label), []).append(s)
    if not cells:
        raise ConfigError("empty training set")
    keys = sorted(cells.keys())
    per_cell = [RANDOM_PART_SIZE // len(keys)] * len(keys)
    for i in range(RANDOM_PART_SIZE % len(keys)):
        per_cell[i] += 1
    batch: list[Sample] = []
    for key, take in zip(keys, per_cell):
        pool = cells[key]
        replace_draw = take > len(pool)
        idx = rng.choice(len(pool), size=take, replace=replace_draw)
        batch.extend(pool[i] for i in idx)
    return batch


def class_domain_weights(train_set: Sequence[Sample]) -> dict[int, float]:
    """Per-sample weights N_total / (num_cells * N_cell) over the sample's
    (domain_role, class) cell, keyed by position in train_set. The plain
    mean of the weights over the set is exactly 1."""
    if not train_set:
        raise ConfigError("empty training set")
    cells: dict[tuple[str, int], int] = {}
    for s in train_set:
        key = (s.domain_role, s.class_label)
        cells[key] = cells.get(key, 0) + 1
    n_total = len(train_set)
    n_cells = len(cells)
    return {
        i: n_total / (n_cells * cells[(s.domain_role, s.class_label)])
        for i, s in enumerate(train_set)
    }


def feature_matrix(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.x for s in samples])


def labels_of(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.class_label for s in samples], dtype=np.int64)


def write_dataset_csv(path, samples: Sequence[Sample]) -> None:
    if not samples:
        raise ConfigError("refusing to write an empty dataset")
    dim = samples[0].x.shape[0]
    header = [f"x_{i}" for i in range(dim)] + ["class_label", "domain_label", "domain_role", "split"]
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for s in samples:
                writer.writerow(
                    [repr(float(v)) for v in s.x]
                    + [s.class_label, s.domain_label, s.domain_role, s.split]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_dataset_csv(path) -> list[Sample]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_feat = sum(1 for name in header if name.startswith("x_"))
        expected = [f"x_{i}" for i in range(n_feat)] + ["class_label", "domain_label", "domain_role", "split"]
        if header != expected:
            raise ConfigError(f"unexpected dataset CSV header: {header}")
        samples = []
        for fields in reader:
            samples.append(
                Sample(
                    x=np.array([float(v) for v in fields[:n_feat]]),
                    class_label=int(fields[n_feat]),
                    domain_label=int(fields[n_feat + 1]),
                    domain_role=fields[n_feat + 2],
                    split=fields[n_feat + 3],
                )
            )
    return samples


def with_seed(cfg: DatasetConfig, seed: int) -> DatasetConfig:
    return replace(cfg, seed=seed)
