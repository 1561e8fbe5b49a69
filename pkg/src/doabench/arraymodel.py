"""Uniform-linear-array signal model.

Geometry and steering vectors, true and sample covariance matrices, seeded
snapshot simulation, SNR accounting, and the covariance-channel / grid-label
encodings consumed by the classifier. All types are immutable value objects
and all operations are pure, so everything is safe to share across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FileFormatError",
    "UlaGeometry",
    "SourceScene",
    "GridSpec",
    "SnapshotBlock",
    "steering_vector",
    "manifold",
    "true_covariance",
    "simulate_snapshots",
    "sample_covariance",
    "snr_db",
    "build_input_channels",
    "encode_label",
    "decode_label",
    "save_snapshots",
    "load_snapshots",
]

_SNAPSHOT_MAGIC = b"DOAS"
_SNAPSHOT_VERSION = 1

# On-grid angles must coincide with a grid point within this many degrees.
GRID_MATCH_TOL_DEG = 1e-9


class FileFormatError(ValueError):
    """A binary container file has a bad magic, version or length."""


@dataclass(frozen=True)
class UlaGeometry:
    """Uniform linear array: sensor count and element spacing in wavelengths."""

    n_sensors: int
    spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.n_sensors < 2:
            raise ValueError("a ULA needs at least 2 sensors")
        if not self.spacing_ratio > 0:
            raise ValueError("element spacing must be positive")


@dataclass(frozen=True)
class SourceScene:
    """Ground-truth source directions, per-source powers and the noise power.

    Directions are in degrees, strictly inside (-90, 90), and pairwise
    distinct. ``source_powers[k]`` is the variance of the k-th source signal;
    ``noise_power`` is the per-sensor noise variance.
    """

    doas_deg: tuple[float, ...]
    source_powers: tuple[float, ...]
    noise_power: float

    def __post_init__(self):
        doas = tuple(float(a) for a in self.doas_deg)
        powers = tuple(float(p) for p in self.source_powers)
        object.__setattr__(self, "doas_deg", doas)
        object.__setattr__(self, "source_powers", powers)
        object.__setattr__(self, "noise_power", float(self.noise_power))
        if len(doas) != len(powers):
            raise ValueError("need one power per source direction")
        if len(set(doas)) != len(doas):
            raise ValueError("source directions must be pairwise distinct")
        for a in doas:
            if not abs(a) < 90.0:
                raise ValueError(f"direction {a} deg outside the open interval (-90, 90)")
        for p in powers:
            if not p > 0:
                raise ValueError("source powers must be positive")
        if self.noise_power < 0:
            raise ValueError("noise power cannot be negative")

    @property
    def n_sources(self) -> int:
        return len(self.doas_deg)


@dataclass(frozen=True)
class GridSpec:
    """Symmetric angular grid of ``2G + 1`` points with spacing ``resolution_deg``.

    Point ``i`` is exactly ``-phi_max_deg + i * resolution_deg``; the extreme
    points are ``-phi_max_deg`` and ``+phi_max_deg``.
    """

    phi_max_deg: float
    resolution_deg: float

    def __post_init__(self):
        if not self.resolution_deg > 0:
            raise ValueError("grid resolution must be positive")
        if not 0 < self.phi_max_deg < 90:
            raise ValueError("grid extent must lie strictly inside (0, 90) degrees")
        g = self.phi_max_deg / self.resolution_deg
        if abs(g - round(g)) > 1e-9:
            raise ValueError("phi_max_deg must be an integer multiple of resolution_deg")

    @property
    def half_count(self) -> int:
        return int(round(self.phi_max_deg / self.resolution_deg))

    @property
    def n_points(self) -> int:
        return 2 * self.half_count + 1

    @property
    def points(self) -> np.ndarray:
        return -self.phi_max_deg + np.arange(self.n_points) * self.resolution_deg

    def index_of(self, angle_deg: float) -> int:
        """Grid index of an on-grid angle; raises for off-grid angles."""
        i = int(round((angle_deg + self.phi_max_deg) / self.resolution_deg))
        if i < 0 or i >= self.n_points:
            raise ValueError(f"angle {angle_deg} deg outside the grid")
        if abs(self.points[i] - angle_deg) > GRID_MATCH_TOL_DEG:
            raise ValueError(f"angle {angle_deg} deg does not coincide with a grid point")
        return i


@dataclass(frozen=True)
class SnapshotBlock:
    """A block of array snapshots; column ``t`` of ``data`` is y(t)."""

    geometry: UlaGeometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[0] != self.geometry.n_sensors:
            raise ValueError(
                f"snapshot data must be {self.geometry.n_sensors}xT, got {data.shape}"
            )
        if data.shape[1] < 1:
            raise ValueError("a snapshot block holds at least one snapshot")

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


def steering_vector(geom: UlaGeometry, theta_deg: float) -> np.ndarray:
    """Array response to a unit plane wave from ``theta_deg``.

    Entry ``n`` is ``exp(1j * 2*pi * spacing_ratio * sin(theta) * n)``,
    so every entry has unit modulus and entry 0 equals 1.
    """
    if not abs(theta_deg) < 90.0:
        raise ValueError(f"direction {theta_deg} deg outside the open interval (-90, 90)")
    phase_step = 2.0 * np.pi * geom.spacing_ratio * np.sin(np.deg2rad(theta_deg))
    return np.exp(1j * phase_step * np.arange(geom.n_sensors))


def manifold(geom: UlaGeometry, thetas_deg) -> np.ndarray:
    """N x K matrix whose k-th column is the steering vector of ``thetas_deg[k]``."""
    thetas = np.atleast_1d(np.asarray(thetas_deg, dtype=np.float64))
    if len(set(thetas.tolist())) != thetas.size:
        raise ValueError("manifold angles must be pairwise distinct")
    if thetas.size == 0:
        return np.zeros((geom.n_sensors, 0), dtype=np.complex128)
    return np.stack([steering_vector(geom, t) for t in thetas], axis=1)


def true_covariance(geom: UlaGeometry, scene: SourceScene) -> np.ndarray:
    """Ensemble covariance ``A @ diag(powers) @ A^H + noise_power * I``.

    Built as ``B @ B^H`` with ``B = A @ diag(sqrt(powers))`` so the result is
    exactly Hermitian in floating point.
    """
    n = geom.n_sensors
    if scene.n_sources >= n:
        raise ValueError(
            f"{scene.n_sources} sources are not identifiable with {n} sensors"
        )
    b = manifold(geom, scene.doas_deg) * np.sqrt(np.asarray(scene.source_powers))
    return b @ b.conj().T + scene.noise_power * np.eye(n, dtype=np.complex128)


def simulate_snapshots(
    geom: UlaGeometry, scene: SourceScene, t_snapshots: int, seed: int
) -> SnapshotBlock:
    """Draw ``t_snapshots`` array snapshots ``y(t) = A s(t) + e(t)``.

    Source amplitudes are i.i.d. circularly-symmetric complex Gaussian with
    the scene's per-source variances; noise is white complex Gaussian with
    variance ``noise_power`` per sensor; snapshots are temporally independent.

    One seeded generator drives the whole call. Within each snapshot the
    (real, imaginary) standard-normal pairs are consumed first for the K
    source amplitudes and then for the N noise entries, which fixes the draw
    order to s(1), e(1), s(2), e(2), ... A complex sample with variance
    ``v`` is assembled as ``(x + 1j*y) / sqrt(2) * sqrt(v)``.
    """
    if t_snapshots < 1:
        raise ValueError("need at least one snapshot")
    n = geom.n_sensors
    k = scene.n_sources
    if k >= n:
        raise ValueError(f"{k} sources are not identifiable with {n} sensors")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((t_snapshots, 2 * k + 2 * n))
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    amps = (draws[:, 0 : 2 * k : 2] + 1j * draws[:, 1 : 2 * k : 2]) * inv_sqrt2
    amps = amps * np.sqrt(np.asarray(scene.source_powers))
    noise = (draws[:, 2 * k :: 2] + 1j * draws[:, 2 * k + 1 :: 2]) * inv_sqrt2
    noise = noise * np.sqrt(scene.noise_power)
    data = noise.T.copy()
    if k:
        data += manifold(geom, scene.doas_deg) @ amps.T
    return SnapshotBlock(geom, data)


def sample_covariance(block: SnapshotBlock) -> np.ndarray:
    """Sample covariance ``(1/T) sum_t y(t) y(t)^H`` of a snapshot block."""
    y = block.data
    return (y @ y.conj().T) / block.n_snapshots


def snr_db(scene: SourceScene) -> float:
    """Scene SNR in dB: ``10 log10(min_k power_k / noise_power)``."""
    if scene.n_sources < 1:
        raise ValueError("SNR is undefined without sources")
    if not scene.noise_power > 0:
        raise ValueError("SNR is infinite for zero noise power")
    return 10.0 * np.log10(min(scene.source_powers) / scene.noise_power)


def build_input_channels(r: np.ndarray) -> np.ndarray:
    """Stack Re, Im and entrywise phase of a covariance into an N x N x 3 tensor.

    The phase channel is the four-quadrant arctangent with range (-pi, pi];
    the phase of an exact zero is 0.
    """
    r = np.asarray(r, dtype=np.complex128)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    phase = np.angle(r)
    # np.angle maps negative reals with a -0.0 imaginary part to -pi; fold
    # that endpoint back so the range is (-pi, pi].
    phase = np.where(phase == -np.pi, np.pi, phase)
    return np.stack([r.real, r.imag, phase], axis=-1)


def encode_label(grid: GridSpec, doas_deg) -> np.ndarray:
    """Binary grid-indicator vector with a 1 at each source's grid index.

    Every direction must coincide with a grid point within 1e-9 degrees;
    off-grid angles raise instead of being quantized, so label construction
    can never silently absorb grid mismatch.
    """
    label = np.zeros(grid.n_points, dtype=np.float64)
    indices = [grid.index_of(float(a)) for a in np.atleast_1d(np.asarray(doas_deg, float))]
    if len(set(indices)) != len(indices):
        raise ValueError("two sources fall on the same grid point")
    label[indices] = 1.0
    return label


def decode_label(grid: GridSpec, label) -> np.ndarray:
    """Ascending grid angles of the set bits of a label vector."""
    label = np.asarray(label)
    if label.shape != (grid.n_points,):
        raise ValueError(f"label length {label.shape} does not match the grid")
    return grid.points[label > 0.5]


def save_snapshots(block: SnapshotBlock, path) -> None:
    """Write a snapshot block to the binary container format.

    Layout: magic ``DOAS``, version u32, N u32, T u32 (all little-endian),
    then ``T * N`` complex doubles column-major, i.e. snapshot by snapshot.
    """
    n, t = block.data.shape
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", _SNAPSHOT_VERSION, n, t))
        fh.write(np.asfortranarray(block.data).astype("<c16").tobytes(order="F"))


def load_snapshots(path, geom: UlaGeometry | None = None) -> SnapshotBlock:
    """Read a snapshot block written by :func:`save_snapshots`.

    If ``geom`` is omitted, a half-wavelength ULA matching the stored sensor
    count is assumed.
    """
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != _SNAPSHOT_MAGIC:
            raise FileFormatError("not a snapshot container (bad magic)")
        version, n, t = struct.unpack("<III", header[4:])
        if version != _SNAPSHOT_VERSION:
            raise FileFormatError(f"unsupported snapshot container version {version}")
        payload = fh.read()
    expected = 16 * n * t
    if len(payload) != expected:
        raise FileFormatError(
            f"truncated snapshot container: expected {expected} payload bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<c16").reshape((n, t), order="F")
    if geom is None:
        geom = UlaGeometry(n)
    return SnapshotBlock(geom, data.astype(np.complex128))
