"""Synthetic federated dataset generation with shard-based heterogeneity.

Features are class-conditional Gaussians (unit within-class spread,
means drawn with configurable spacing). Samples are arranged
class-sorted, a ``1 - shard_purity`` fraction of positions is shuffled
to mix classes into shards, and the arrangement is cut into shards that
are raffled to clients without replacement. Label noise and poisoning
markers operate on the resulting per-client datasets.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DatasetSpec",
    "ClientDataset",
    "POISON_MODES",
    "generate",
    "generate_test_set",
    "inject_label_noise",
    "mark_poisoned",
    "dump_datasets",
    "load_datasets",
]

POISON_MODES = ("label_flip_all", "update_negate")

# Independent rng streams derived from the spec seed, so the test set
# shares class means with the training shards without sharing draws.
_MEANS_STREAM = 101
_SAMPLE_STREAM = 102
_ARRANGE_STREAM = 103
_ASSIGN_STREAM = 104
_TEST_STREAM = 105


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int
    num_features: int
    samples_per_class: int
    shards_per_client: int
    shard_size: int
    class_separation: float
    shard_purity: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.num_classes, self.num_features, self.samples_per_class) < 1:
            raise ValueError("class, feature and sample counts must be >= 1")
        if min(self.shards_per_client, self.shard_size) < 1:
            raise ValueError("shard plan counts must be >= 1")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be positive")
        if not 0.0 <= self.shard_purity <= 1.0:
            raise ValueError("shard_purity must be in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def total_samples(self) -> int:
        return self.num_classes * self.samples_per_class


@dataclass
class ClientDataset:
    """One client's samples plus ground-truth quality descriptors.

    ``true_n_class`` is the class diversity at generation time and is
    deliberately not updated by label noise: it describes the underlying
    data, noise only degrades it.
    """

    client_id: int
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    true_n_class: int
    true_p_noisy: float = 0.0
    poisoned: bool = False
    poison_mode: str | None = None


def class_means(spec: DatasetSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, _MEANS_STREAM])
    return rng.normal(0.0, spec.class_separation, (spec.num_classes, spec.num_features))


def _shard_sizes(total: int, total_shards: int, shard_size: int) -> np.ndarray:
    # Leftover samples are spread across shards so the partition stays exact.
    sizes = np.full(total_shards, shard_size, dtype=int)
    extra = total - shard_size * total_shards
    sizes += extra // total_shards
    sizes[: extra % total_shards] += 1
    return sizes


def generate(spec: DatasetSpec, num_clients: int) -> list[ClientDataset]:
    """Draw the corpus and raffle shards to clients. Deterministic per seed."""
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    total_shards = num_clients * spec.shards_per_client
    total = spec.total_samples
    if spec.shard_size * total_shards > total:
        raise ValueError(
            f"shard plan needs {spec.shard_size * total_shards} samples "
            f"but only {total} are generated"
        )

    means = class_means(spec)
    sample_rng = np.random.default_rng([spec.seed, _SAMPLE_STREAM])
    features = np.concatenate(
        [
            means[c] + sample_rng.standard_normal((spec.samples_per_class, spec.num_features))
            for c in range(spec.num_classes)
        ]
    )
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)

    # Class-sorted arrangement; shuffle a (1 - purity) fraction of the
    # positions among themselves to mix classes into shards.
    order = np.arange(total)
    n_mixed = int(round((1.0 - spec.shard_purity) * total))
    if n_mixed > 1:
        arrange_rng = np.random.default_rng([spec.seed, _ARRANGE_STREAM])
        positions = np.sort(arrange_rng.choice(total, size=n_mixed, replace=False))
        order[positions] = order[positions][arrange_rng.permutation(n_mixed)]

    sizes = _shard_sizes(total, total_shards, spec.shard_size)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    assign_rng = np.random.default_rng([spec.seed, _ASSIGN_STREAM])
    raffle = assign_rng.permutation(total_shards)

    clients = []
    for cid in range(num_clients):
        shard_ids = raffle[cid * spec.shards_per_client : (cid + 1) * spec.shards_per_client]
        rows = np.concatenate([order[bounds[s] : bounds[s + 1]] for s in shard_ids])
        client_labels = labels[rows]
        clients.append(
            ClientDataset(
                client_id=cid,
                features=features[rows],
                labels=client_labels,
                num_classes=spec.num_classes,
                true_n_class=int(np.unique(client_labels).size),
            )
        )
    return clients


def generate_test_set(spec: DatasetSpec, samples_per_class: int, seed: int = 0):
    """Held-out samples from the same class-conditional clusters."""
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    means = class_means(spec)
    rng = np.random.default_rng([spec.seed, _TEST_STREAM, seed])
    features = np.concatenate(
        [
            means[c] + rng.standard_normal((samples_per_class, spec.num_features))
            for c in range(spec.num_classes)
        ]
    )
    labels = np.repeat(np.arange(spec.num_classes), samples_per_class)
    return features, labels


def inject_label_noise(dataset: ClientDataset, p_noisy: float, seed) -> ClientDataset:
    """Flip ``round(p_noisy * n)`` labels, each to a uniform other class."""
    if not 0.0 <= p_noisy <= 1.0:
        raise ValueError("p_noisy must be in [0, 1]")
    n = len(dataset.labels)
    n_flips = int(round(p_noisy * n))
    labels = dataset.labels.copy()
    if n_flips > 0:
        if dataset.num_classes < 2:
            raise ValueError("cannot flip labels with fewer than two classes")
        rng = np.random.default_rng(seed)
        idx = rng.choice(n, size=n_flips, replace=False)
        offsets = rng.integers(1, dataset.num_classes, size=n_flips)
        labels[idx] = (labels[idx] + offsets) % dataset.num_classes
    return dataclasses.replace(dataset, labels=labels, true_p_noisy=n_flips / n)


def mark_poisoned(dataset: ClientDataset, mode: str, seed=0) -> ClientDataset:
    """Flag a client as malicious.

    ``label_flip_all`` rewrites every label to a random other class;
    ``update_negate`` leaves the data intact and is enforced at local
    training time (the delta is negated and scaled).
    """
    if mode not in POISON_MODES:
        raise ValueError(f"unknown poison mode {mode!r}; expected one of {POISON_MODES}")
    if mode == "label_flip_all":
        dataset = inject_label_noise(dataset, 1.0, seed)
    return dataclasses.replace(dataset, poisoned=True, poison_mode=mode)


def dump_datasets(path, spec: DatasetSpec, clients: list[ClientDataset]) -> None:
    """Write the federated dataset in the line-oriented text format.

    Header: ``key = value`` spec fields plus per-client metadata lines;
    body after the ``data:`` marker is one CSV row per sample:
    client_id, label, then the feature values.
    """
    lines = ["# federated dataset v1"]
    for name in (
        "num_classes",
        "num_features",
        "samples_per_class",
        "shards_per_client",
        "shard_size",
        "class_separation",
        "shard_purity",
        "seed",
    ):
        lines.append(f"{name} = {getattr(spec, name)!r}")
    lines.append(f"num_clients = {len(clients)}")
    for ds in clients:
        lines.append(
            f"client {ds.client_id} true_n_class={ds.true_n_class} "
            f"true_p_noisy={ds.true_p_noisy!r} poisoned={int(ds.poisoned)} "
            f"poison_mode={ds.poison_mode or '-'}"
        )
    lines.append("data:")
    for ds in clients:
        for x, y in zip(ds.features, ds.labels):
            values = ",".join(repr(float(v)) for v in x)
            lines.append(f"{ds.client_id},{int(y)},{values}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def load_datasets(path) -> tuple[DatasetSpec, list[ClientDataset]]:
    """Read back a dataset written by :func:`dump_datasets`."""
    with open(path, encoding="utf-8") as handle:
        lines = [ln.rstrip("\n") for ln in handle]
    if not lines or lines[0] != "# federated dataset v1":
        raise ValueError(f"{path} is not a federated dataset export")

    fields: dict[str, float | int] = {}
    meta: dict[int, dict] = {}
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        if line == "data:":
            body_at = i + 1
            break
        if line.startswith("client "):
            parts = line.split()
            cid = int(parts[1])
            kv = dict(p.split("=", 1) for p in parts[2:])
            meta[cid] = {
                "true_n_class": int(kv["true_n_class"]),
                "true_p_noisy": float(kv["true_p_noisy"]),
                "poisoned": bool(int(kv["poisoned"])),
                "poison_mode": None if kv["poison_mode"] == "-" else kv["poison_mode"],
            }
        else:
            key, _, value = line.partition(" = ")
            fields[key] = float(value) if "." in value or "e" in value else int(value)
    if body_at is None:
        raise ValueError(f"{path} has no data section")

    num_clients = int(fields.pop("num_clients"))
    spec = DatasetSpec(**{k: v for k, v in fields.items()})

    rows: dict[int, list[tuple[int, list[float]]]] = {cid: [] for cid in range(num_clients)}
    for line in lines[body_at:]:
        if not line:
            continue
        parts = line.split(",")
        cid, label = int(parts[0]), int(parts[1])
        rows[cid].append((label, [float(v) for v in parts[2:]]))

    clients = []
    for cid in range(num_clients):
        labels = np.array([r[0] for r in rows[cid]], dtype=int)
        features = np.array([r[1] for r in rows[cid]], dtype=float)
        clients.append(
            ClientDataset(
                client_id=cid,
                features=features,
                labels=labels,
                num_classes=spec.num_classes,
                **meta[cid],
            )
        )
    return spec, clients
