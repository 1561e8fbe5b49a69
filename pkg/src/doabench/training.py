"""Dataset construction, the supervised training loop, and the two inference
decoders (top-K and confidence threshold).

Training examples are built from the ensemble covariance of on-grid scenes
with unit source powers; the per-SNR noise power follows from the SNR
definition. Datasets hold lightweight recipes (SNR, angle tuple) and
materialize input tensors on demand, so even the large mixed-source sets can
be enumerated without holding every tensor in memory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .arraymodel import (
    FileFormatError,
    GridSpec,
    SourceScene,
    UlaGeometry,
    build_input_channels,
    encode_label,
    true_covariance,
)
from .nn import (
    Network,
    NetworkSpec,
    adam_step,
    bce_loss,
    init_adam_state,
    init_params,
)

__all__ = [
    "TrainingDiverged",
    "TrainConfig",
    "Dataset",
    "TrainingHistory",
    "build_fixed_k_dataset",
    "build_mixed_k_dataset",
    "train",
    "predict_topk",
    "predict_threshold",
    "export_dataset",
    "load_dataset",
    "noise_power_for_snr",
]

_DATASET_MAGIC = b"DOAD"
_DATASET_VERSION = 1

# Guard against absurd grid/source-count combinations.
_MAX_DATASET_SIZE = 10_000_000


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


def noise_power_for_snr(snr_db: float) -> float:
    """Noise power giving the requested SNR for unit source powers."""
    return 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    initial_lr: float = 0.001
    lr_halving_period_epochs: int = 10
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch normalization needs batches of at least 2")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie strictly between 0 and 1")
        if self.lr_halving_period_epochs < 1:
            raise ValueError("the halving period must be at least one epoch")


@dataclass(frozen=True)
class Dataset:
    """Covariance-channel / label pairs described by (SNR, angles) recipes."""

    grid: GridSpec
    geom: UlaGeometry
    snr_db_list: tuple[float, ...]
    k_policy: str
    recipes: tuple = field(repr=False)

    def __len__(self) -> int:
        return len(self.recipes)

    def example(self, i: int):
        """Materialize example ``i`` as ``(input_tensor, label_vector)``."""
        snr, angles = self.recipes[i]
        scene = SourceScene(angles, (1.0,) * len(angles), noise_power_for_snr(snr))
        x = build_input_channels(true_covariance(self.geom, scene))
        z = encode_label(self.grid, angles)
        return x, z

    def batch(self, indices):
        xs, zs = zip(*(self.example(int(i)) for i in indices))
        return np.stack(xs), np.stack(zs)


@dataclass(frozen=True)
class TrainingHistory:
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    learning_rate: tuple[float, ...]


def _check_size(count: int):
    if count > _MAX_DATASET_SIZE:
        raise ValueError(
            f"dataset of {count} examples exceeds the {_MAX_DATASET_SIZE} safety cap"
        )


def build_fixed_k_dataset(
    grid: GridSpec, geom: UlaGeometry, k: int, snr_db_list
) -> Dataset:
    """All K-combinations of grid angles at every listed SNR.

    One example per (SNR, combination): the input channels of the ensemble
    covariance with unit source powers, labelled by the combination's grid
    indicator.
    """
    if not 1 <= k <= geom.n_sensors - 1:
        raise ValueError(f"source count {k} must satisfy 1 <= k <= {geom.n_sensors - 1}")
    snrs = tuple(float(s) for s in snr_db_list)
    _check_size(len(snrs) * comb(grid.n_points, k))
    points = [float(p) for p in grid.points]
    recipes = tuple(
        (snr, angles) for snr in snrs for angles in combinations(points, k)
    )
    return Dataset(grid, geom, snrs, f"fixed-{k}", recipes)


def build_mixed_k_dataset(
    grid: GridSpec, geom: UlaGeometry, k_max: int, snr_db: float
) -> Dataset:
    """Union over k = 1..k_max of all k-combinations of grid angles at one SNR."""
    if not 1 <= k_max <= geom.n_sensors - 1:
        raise ValueError(
            f"maximum source count {k_max} must satisfy 1 <= k <= {geom.n_sensors - 1}"
        )
    _check_size(sum(comb(grid.n_points, k) for k in range(1, k_max + 1)))
    points = [float(p) for p in grid.points]
    snr = float(snr_db)
    recipes = tuple(
        (snr, angles)
        for k in range(1, k_max + 1)
        for angles in combinations(points, k)
    )
    return Dataset(grid, geom, (snr,), f"mixed-1..{k_max}", recipes)


def _batch_indices(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    batches = [order[i : i + batch_size] for i in range(0, order.size, batch_size)]
    # A trailing singleton cannot pass through batch norm in train mode;
    # fold it into the previous batch.
    if len(batches) > 1 and batches[-1].size == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _mean_loss(network: Network, dataset: Dataset, indices, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        x, z = dataset.batch(chunk)
        p = network.forward(x, train=False)
        loss, _ = bce_loss(p, z)
        total += loss
    return total / len(indices)


def train(spec: NetworkSpec, dataset: Dataset, config: TrainConfig):
    """Minimize the mean per-example cross-entropy with Adam.

    The dataset is split once into train/validation parts (deterministic in
    the seed), each epoch is one shuffled pass, and the learning rate is
    ``initial_lr * 0.5**floor(epoch / period)``. Returns the parameters after
    the final epoch together with the per-epoch history.
    """
    if len(dataset) < 2:
        raise ValueError("need at least two examples to split and train")
    if spec.output_length != dataset.grid.n_points:
        raise ValueError(
            f"network output length {spec.output_length} does not match the "
            f"grid's {dataset.grid.n_points} points"
        )
    root = np.random.SeedSequence(config.seed)
    init_rng, split_rng, shuffle_rng, dropout_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )
    params = init_params(spec, init_rng)
    network = Network(spec, params)
    state = init_adam_state(params, lr=config.initial_lr)

    perm = split_rng.permutation(len(dataset))
    n_val = max(1, int(round(config.validation_fraction * len(dataset))))
    n_val = min(n_val, len(dataset) - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    train_losses, val_losses, lrs = [], [], []
    for epoch in range(config.epochs):
        lr = config.initial_lr * 0.5 ** (epoch // config.lr_halving_period_epochs)
        state.lr = lr
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        epoch_loss = 0.0
        for batch in _batch_indices(order, config.batch_size):
            x, z = dataset.batch(batch)
            p = network.forward(x, train=True, rng=dropout_rng)
            loss, dlogits = bce_loss(p, z)
            batch_loss = loss / batch.size
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (lr={lr:g}); "
                    "reduce the learning rate"
                )
            grads = network.backward_from_logits(dlogits / batch.size)
            adam_step(state, params, grads)
            epoch_loss += batch_loss * batch.size
        train_losses.append(epoch_loss / train_idx.size)
        val_losses.append(_mean_loss(network, dataset, val_idx, config.batch_size))
        lrs.append(lr)
    history = TrainingHistory(tuple(train_losses), tuple(val_losses), tuple(lrs))
    return params, history


def predict_topk(
    spec: NetworkSpec, params: list[dict], grid: GridSpec, x, k: int
) -> np.ndarray:
    """Grid angles of the K largest output probabilities, ties toward the
    smaller angle."""
    if k < 1:
        raise ValueError("need at least one source")
    if k > grid.n_points:
        raise ValueError(f"cannot select {k} angles from {grid.n_points} grid points")
    p = Network(spec, params).forward(x, train=False)
    order = np.lexsort((grid.points, -p))
    return np.sort(grid.points[order[:k]])


def predict_threshold(
    spec: NetworkSpec, params: list[dict], grid: GridSpec, x, p_bar: float
) -> np.ndarray:
    """All grid angles whose probability reaches the confidence level; the
    result's cardinality is the inferred source count (possibly zero)."""
    if not 0.0 < p_bar < 1.0:
        raise ValueError("the confidence level must lie strictly between 0 and 1")
    p = Network(spec, params).forward(x, train=False)
    return grid.points[p >= p_bar]


def export_dataset(dataset: Dataset, path) -> None:
    """Write a dataset to the binary cache format.

    Layout: magic ``DOAD``, version u32, length-prefixed JSON header, then
    one record per example: SNR f64, angle count u32, angles f64, input
    tensor f64 bytes, label u8 bytes.
    """
    n = dataset.geom.n_sensors
    header = {
        "n_sensors": n,
        "spacing_ratio": dataset.geom.spacing_ratio,
        "phi_max_deg": dataset.grid.phi_max_deg,
        "resolution_deg": dataset.grid.resolution_deg,
        "snr_db_list": list(dataset.snr_db_list),
        "k_policy": dataset.k_policy,
        "count": len(dataset),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<II", _DATASET_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for i in range(len(dataset)):
            snr, angles = dataset.recipes[i]
            x, z = dataset.example(i)
            fh.write(struct.pack("<dI", snr, len(angles)))
            fh.write(np.asarray(angles, dtype="<f8").tobytes())
            fh.write(x.astype("<f8").tobytes())
            fh.write(z.astype(np.uint8).tobytes())


def load_dataset(path) -> Dataset:
    """Read a dataset cache written by :func:`export_dataset`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DATASET_MAGIC:
            raise FileFormatError("not a dataset cache (bad magic)")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _DATASET_VERSION:
            raise FileFormatError(f"unsupported dataset cache version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        geom = UlaGeometry(header["n_sensors"], header["spacing_ratio"])
        grid = GridSpec(header["phi_max_deg"], header["resolution_deg"])
        n = geom.n_sensors
        tensor_bytes = 8 * n * n * 3
        label_bytes = grid.n_points
        recipes = []
        for _ in range(header["count"]):
            rec_header = fh.read(12)
            if len(rec_header) != 12:
                raise FileFormatError("truncated dataset cache")
            snr, k = struct.unpack("<dI", rec_header)
            angles = np.frombuffer(fh.read(8 * k), dtype="<f8")
            payload = fh.read(tensor_bytes + label_bytes)
            if angles.size != k or len(payload) != tensor_bytes + label_bytes:
                raise FileFormatError("truncated dataset cache")
            recipes.append((snr, tuple(float(a) for a in angles)))
    return Dataset(
        grid,
        geom,
        tuple(float(s) for s in header["snr_db_list"]),
        header["k_policy"],
        tuple(recipes),
    )
