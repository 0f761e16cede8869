"""Class-indexed datasets and episodic task sampling.

A one-class episode is a binary task: a support set from one target class
plus labeled queries from the target class and a single negative class.
All sampling flows through a counter-based Philox generator keyed by an
integer seed, so every episode is a pure function of
(dataset, config, seed) with no global state; parallel evaluation derives
per-task seeds and reproduces the serial order exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

SPLIT_TAGS = ("train", "validation", "test")


def make_rng(seed):
    """Counter-based generator (Philox keyed by the seed), platform-stable."""
    seed = int(seed)
    if seed < 0:
        raise ContractError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


@dataclass(frozen=True)
class ClassIndexedDataset:
    """Examples grouped by class; immutable after construction."""

    classes: tuple
    class_ids: tuple
    split_tag: str

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ConfigError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        if len(self.classes) == 0:
            raise ConfigError("dataset has no classes")
        if len(self.class_ids) != len(self.classes):
            raise ContractError("class_ids and classes lengths differ")
        shapes = {z.shape[1:] for z in self.classes}
        if len(shapes) != 1:
            raise ContractError(f"classes hold examples of mixed shapes: {sorted(map(str, shapes))}")

    @property
    def class_count(self):
        return len(self.classes)

    @property
    def per_class_count(self):
        return tuple(len(z) for z in self.classes)

    @property
    def example_shape(self):
        return self.classes[0].shape[1:]


@dataclass(frozen=True)
class EpisodeConfig:
    shot: int = 5
    query_per_side: int = 10
    meta_batch: int = 16

    def __post_init__(self):
        for name in ("shot", "query_per_side", "meta_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class Episode:
    """One binary task: target support, then target and negative queries."""

    target_class: int
    negative_class: int
    support: np.ndarray
    queries: np.ndarray
    labels: np.ndarray
    seed: int


def split_by_class(labeled_examples, split_tag="train", min_size=1):
    """Group (example, integer label) pairs into a ClassIndexedDataset.

    Labels are remapped to contiguous positions by sorted value; the original
    labels are kept as class_ids. Order within a class is preserved.
    """
    examples, labels = [], []
    for x, y in labeled_examples:
        examples.append(np.asarray(x))
        labels.append(int(y))
    if not examples:
        raise ConfigError("no labeled examples given")
    labels = np.asarray(labels)
    ids = sorted(set(labels.tolist()))
    classes = []
    for cid in ids:
        members = [examples[j] for j in np.flatnonzero(labels == cid)]
        if len(members) < min_size:
            raise ConfigError(f"class {cid} has {len(members)} examples, needs >= {min_size}")
        classes.append(np.stack(members))
    return ClassIndexedDataset(tuple(classes), tuple(ids), split_tag)


def take_classes(dataset, class_ids, split_tag):
    """Restrict a dataset to the given original class ids, retagged."""
    pos = {cid: i for i, cid in enumerate(dataset.class_ids)}
    missing = [cid for cid in class_ids if cid not in pos]
    if missing:
        raise ConfigError(f"classes {missing} not present in the dataset")
    if len(set(class_ids)) != len(class_ids):
        raise ConfigError("duplicate class ids in selection")
    classes = tuple(dataset.classes[pos[cid]] for cid in class_ids)
    return ClassIndexedDataset(classes, tuple(int(c) for c in class_ids), split_tag)


def _check_class_size(dataset, position, needed):
    have = len(dataset.classes[position])
    if have < needed:
        raise ConfigError(
            f"class {dataset.class_ids[position]} has {have} examples, "
            f"episode needs {needed}"
        )


def sample_pair_episode(dataset, target_pos, negative_pos, shot, query_per_side, seed):
    """Episode with the class pair fixed; sampling still seed-determined.

    Support and target queries are drawn without replacement from the target
    class and are disjoint by example index; negative queries come from the
    negative class.
    """
    if target_pos == negative_pos:
        raise ContractError("target and negative class must differ")
    rng = make_rng(seed)
    _check_class_size(dataset, target_pos, shot + query_per_side)
    _check_class_size(dataset, negative_pos, query_per_side)
    z_t = dataset.classes[target_pos]
    z_n = dataset.classes[negative_pos]
    picked = rng.choice(len(z_t), size=shot + query_per_side, replace=False)
    neg = rng.choice(len(z_n), size=query_per_side, replace=False)
    queries = np.concatenate([z_t[picked[shot:]], z_n[neg]])
    labels = np.concatenate([np.ones(query_per_side), np.zeros(query_per_side)])
    return Episode(
        target_class=int(dataset.class_ids[target_pos]),
        negative_class=int(dataset.class_ids[negative_pos]),
        support=z_t[picked[:shot]],
        queries=queries,
        labels=labels,
        seed=int(seed),
    )


def sample_episode(dataset, config, seed):
    """Draw one episode: classes uniformly without replacement, then examples."""
    if dataset.class_count < 2:
        raise ConfigError("episode sampling needs at least 2 classes")
    rng = make_rng(seed)
    target_pos, negative_pos = rng.choice(dataset.class_count, size=2, replace=False)
    _check_class_size(dataset, target_pos, config.shot + config.query_per_side)
    _check_class_size(dataset, negative_pos, config.query_per_side)
    z_t = dataset.classes[target_pos]
    z_n = dataset.classes[negative_pos]
    picked = rng.choice(len(z_t), size=config.shot + config.query_per_side, replace=False)
    neg = rng.choice(len(z_n), size=config.query_per_side, replace=False)
    queries = np.concatenate([z_t[picked[config.shot:]], z_n[neg]])
    labels = np.concatenate(
        [np.ones(config.query_per_side), np.zeros(config.query_per_side)]
    )
    return Episode(
        target_class=int(dataset.class_ids[target_pos]),
        negative_class=int(dataset.class_ids[negative_pos]),
        support=z_t[picked[:config.shot]],
        queries=queries,
        labels=labels,
        seed=int(seed),
    )


def sample_meta_batch(dataset, config, seed):
    """meta_batch independent episodes on derived seeds seed*stride + k.

    The stride is 16 at the default batch size and widens with the batch so
    consecutive meta-batch seeds never share an episode stream.
    """
    stride = max(16, config.meta_batch)
    return [
        sample_episode(dataset, config, seed * stride + k)
        for k in range(config.meta_batch)
    ]


def synthetic_tasks(num_classes, per_class, input_dim, cluster_spread, seed):
    """Gaussian blob classes: mean in [-1,1]^dim, isotropic noise of the given spread."""
    if num_classes < 1 or per_class < 1 or input_dim < 1:
        raise ConfigError("num_classes, per_class and input_dim must be positive")
    if not 0.0 <= cluster_spread <= 1.0:
        raise ConfigError(f"cluster_spread must be in [0, 1], got {cluster_spread}")
    rng = make_rng(seed)
    means = rng.uniform(-1.0, 1.0, size=(num_classes, input_dim))
    classes = tuple(
        means[i] + cluster_spread * rng.standard_normal((per_class, input_dim))
        for i in range(num_classes)
    )
    return ClassIndexedDataset(classes, tuple(range(num_classes)), "train")


def synthetic_splits(class_counts, per_class, input_dim, cluster_spread, seed):
    """Three disjoint synthetic splits from one generator pass.

    class_counts is (train, validation, test); classes 0..train-1 go to the
    train split and so on, so the splits share no classes by construction.
    """
    n_train, n_val, n_test = class_counts
    full = synthetic_tasks(
        n_train + n_val + n_test, per_class, input_dim, cluster_spread, seed
    )
    ids = list(range(full.class_count))
    return {
        "train": take_classes(full, ids[:n_train], "train"),
        "validation": take_classes(full, ids[n_train:n_train + n_val], "validation"),
        "test": take_classes(full, ids[n_train + n_val:], "test"),
    }
