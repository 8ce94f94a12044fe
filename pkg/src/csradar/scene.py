"""Radar geometry, targets, waveforms and the discretized search grid.

Conventions:

* Node positions are polar ``(radius, angle)`` pairs stored row-wise in an
  ``(n, 2)`` array, all inside a disk of ``disk_radius`` meters.
* Ranges are measured from the start of the sampling window (delay origin),
  so a range ``d`` maps to the delay bin ``floor(2 d / (c T_p / L))`` which
  must land inside ``[0, max_delay_bins]``. An absolute window-start range
  only shifts a phase common to every grid column and target, so it is
  bookkeeping outside the model.
* The grid is flattened angle-fastest, then range, then speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import SPEED_OF_LIGHT, RandomSource


def place_nodes_uniform_disk(count: int, disk_radius: float, rng: RandomSource) -> np.ndarray:
    """Draw node positions uniformly over the area of a disk.

    Returns an ``(count, 2)`` array of polar ``(radius, angle)`` rows.
    Area-uniform density means radius grows like ``R * sqrt(u)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if disk_radius <= 0.0:
        raise ValueError("disk_radius must be positive")
    gen = rng.generator()
    radius = disk_radius * np.sqrt(gen.random(count))
    angle = 2.0 * np.pi * gen.random(count)
    return np.column_stack([radius, angle])


def eta(nodes: np.ndarray, theta: float) -> np.ndarray:
    """Far-field path-length offset r*cos(theta - alpha) for each node."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=np.float64))
    return nodes[:, 0] * np.cos(theta - nodes[:, 1])


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmit/receive node layout plus sampling parameters.

    ``samples_per_pulse`` (L) counts the T_p/L-spaced samples of a transmit
    waveform; ``max_delay_bins`` (the observation-window slack) must lie in
    ``[0, 2L - 1]``; the receive window is ``L + max_delay_bins`` samples.
    """

    tx_nodes: np.ndarray
    rx_nodes: np.ndarray
    disk_radius: float
    carrier: float
    pulse_duration: float
    pri: float
    samples_per_pulse: int
    max_delay_bins: int
    pulses: int = 1
    wave_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        tx = np.atleast_2d(np.asarray(self.tx_nodes, dtype=np.float64))
        rx = np.atleast_2d(np.asarray(self.rx_nodes, dtype=np.float64))
        object.__setattr__(self, "tx_nodes", tx)
        object.__setattr__(self, "rx_nodes", rx)
        if tx.shape[1] != 2 or rx.shape[1] != 2:
            raise ValueError("nodes must be (n, 2) arrays of (radius, angle)")
        tol = 1e-9 * max(self.disk_radius, 1.0)
        if np.any(tx[:, 0] > self.disk_radius + tol) or np.any(rx[:, 0] > self.disk_radius + tol):
            raise ValueError("node radii must not exceed disk_radius")
        if self.samples_per_pulse < 1:
            raise ValueError("samples_per_pulse must be >= 1")
        if not 0 <= self.max_delay_bins <= 2 * self.samples_per_pulse - 1:
            raise ValueError("max_delay_bins must lie in [0, 2L - 1]")
        if self.pulses < 1:
            raise ValueError("pulses must be >= 1")
        for name in ("disk_radius", "carrier", "pulse_duration", "pri", "wave_speed"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def num_tx(self) -> int:
        return self.tx_nodes.shape[0]

    @property
    def num_rx(self) -> int:
        return self.rx_nodes.shape[0]

    @property
    def window_length(self) -> int:
        return self.samples_per_pulse + self.max_delay_bins

    @property
    def sample_spacing(self) -> float:
        return self.pulse_duration / self.samples_per_pulse

    @property
    def range_bin(self) -> float:
        """Range covered by one delay bin, c*T_p/(2L)."""
        return self.wave_speed * self.sample_spacing / 2.0

    def delay_bin(self, range_m: float) -> int:
        return math.floor(2.0 * range_m / (self.wave_speed * self.sample_spacing))


@dataclass(frozen=True)
class Target:
    """Point target: azimuth angle, window-relative range, speed, reflectivity."""

    angle: float
    range_m: float
    speed: float = 0.0
    reflectivity: complex = 1.0 + 0.0j


@dataclass(frozen=True)
class NoiseModel:
    thermal_variance: float = 1.0
    jammer_power: float = 0.0
    jammer_angle: float = 0.0

    def __post_init__(self):
        if self.thermal_variance < 0.0:
            raise ValueError("thermal_variance must be >= 0")
        if self.jammer_power < 0.0:
            raise ValueError("jammer_power must be >= 0")


@dataclass(frozen=True)
class SearchGrid:
    """Discretized angle/speed/range axes with angle-fastest flattening.

    Flat index (0-based): ``n = ib*(Na*Nc) + ic*Na + ia`` for angle index
    ``ia``, speed index ``ib`` and range index ``ic``.
    """

    angles: np.ndarray
    speeds: np.ndarray
    ranges: np.ndarray

    def __post_init__(self):
        for name in ("angles", "speeds", "ranges"):
            ax = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            if ax.size == 0:
                raise ValueError(f"grid axis {name} must be nonempty")
            object.__setattr__(self, name, ax)

    @property
    def num_angles(self) -> int:
        return self.angles.size

    @property
    def num_speeds(self) -> int:
        return self.speeds.size

    @property
    def num_ranges(self) -> int:
        return self.ranges.size

    @property
    def size(self) -> int:
        return self.num_angles * self.num_speeds * self.num_ranges

    def flatten(self, ia: int, ib: int, ic: int) -> int:
        if not (0 <= ia < self.num_angles and 0 <= ib < self.num_speeds and 0 <= ic < self.num_ranges):
            raise ValueError(f"grid index out of range: ({ia}, {ib}, {ic})")
        return ib * self.num_angles * self.num_ranges + ic * self.num_angles + ia

    def unflatten(self, n: int) -> tuple:
        if not 0 <= n < self.size:
            raise ValueError(f"flat index out of range: {n}")
        ib, rem = divmod(n, self.num_angles * self.num_ranges)
        ic, ia = divmod(rem, self.num_angles)
        return ia, ib, ic

    def point(self, n: int) -> tuple:
        """(angle, speed, range) of flat index n."""
        ia, ib, ic = self.unflatten(n)
        return float(self.angles[ia]), float(self.speeds[ib]), float(self.ranges[ic])

    def angle_values(self) -> np.ndarray:
        """Angle of every flat index, in flattening order."""
        return np.tile(self.angles, self.num_speeds * self.num_ranges)

    def speed_values(self) -> np.ndarray:
        return np.repeat(self.speeds, self.num_angles * self.num_ranges)

    def range_values(self) -> np.ndarray:
        return np.tile(np.repeat(self.ranges, self.num_angles), self.num_speeds)


def build_grid(angles, speeds, ranges) -> SearchGrid:
    return SearchGrid(angles=np.asarray(angles), speeds=np.asarray(speeds), ranges=np.asarray(ranges))


@dataclass(frozen=True)
class Scene:
    """Targets plus the interference model."""

    targets: tuple = ()
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @staticmethod
    def from_grid_indices(grid: SearchGrid, specs, noise: NoiseModel = None) -> "Scene":
        """Build a scene whose targets sit exactly on grid points.

        ``specs`` is an iterable of ``(ia, ic, reflectivity)`` or
        ``(ia, ib, ic, reflectivity)`` tuples of grid indices.
        """
        targets = []
        for spec in specs:
            if len(spec) == 3:
                ia, ic, beta = spec
                ib = 0
            elif len(spec) == 4:
                ia, ib, ic, beta = spec
            else:
                raise ValueError("target spec must be (ia, ic, beta) or (ia, ib, ic, beta)")
            n = grid.flatten(int(ia), int(ib), int(ic))
            angle, speed, range_m = grid.point(n)
            targets.append(Target(angle=angle, range_m=range_m, speed=speed, reflectivity=complex(beta)))
        return Scene(targets=tuple(targets), noise=noise if noise is not None else NoiseModel())

    def target_vector(self, grid: SearchGrid, geometry: ArrayGeometry) -> np.ndarray:
        """Sparse ground-truth vector over flat grid indices.

        Raises ``ValueError`` when a target does not fall exactly on a grid
        point (off-grid targets are rejected, never silently rounded).
        """
        s = np.zeros(grid.size, dtype=np.complex128)
        for t in self.targets:
            n = grid_index_of(grid, t)
            s[n] += t.reflectivity
        return s


def grid_index_of(grid: SearchGrid, target: Target, tol: float = 1e-9) -> int:
    """Flat grid index of an on-grid target; ValueError when off-grid."""

    def axis_index(axis: np.ndarray, value: float, name: str) -> int:
        scale = max(1.0, np.abs(axis).max())
        hits = np.nonzero(np.abs(axis - value) <= tol * scale)[0]
        if hits.size == 0:
            raise ValueError(f"target {name} {value!r} does not lie on the grid")
        return int(hits[0])

    ia = axis_index(grid.angles, target.angle, "angle")
    ib = axis_index(grid.speeds, target.speed, "speed")
    ic = axis_index(grid.ranges, target.range_m, "range")
    return grid.flatten(ia, ib, ic)


def validate_targets(grid: SearchGrid, geometry: ArrayGeometry, scene: Scene) -> None:
    """Check every target is on-grid with a delay bin inside the window."""
    for t in scene.targets:
        grid_index_of(grid, t)
        tau = geometry.delay_bin(t.range_m)
        if not 0 <= tau <= geometry.max_delay_bins:
            raise ValueError(
                f"target at range {t.range_m!r} maps to delay bin {tau}, outside [0, {geometry.max_delay_bins}]"
            )


@dataclass(frozen=True)
class WaveformSet:
    """Transmit waveforms as columns of an L x M_t matrix, unit column norm."""

    matrix: np.ndarray
    kind: str

    def __post_init__(self):
        x = np.asarray(self.matrix, dtype=np.complex128)
        object.__setattr__(self, "matrix", x)
        norms = np.linalg.norm(x, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ValueError("waveform columns must have unit norm")

    @property
    def length(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_tx(self) -> int:
        return self.matrix.shape[1]


def _sylvester_hadamard(order: int) -> np.ndarray:
    h = np.array([[1.0]])
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def generate_waveforms(kind: str, length: int, num_tx: int, rng: RandomSource = None) -> WaveformSet:
    """Generate a unit-column waveform set of the requested kind.

    ``rectangular``: every column is the all-ones pulse (rank 1).
    ``hadamard``: first ``num_tx`` columns of the Sylvester matrix, so the
    columns are exactly orthonormal; requires ``length`` a power of two and
    ``num_tx <= length``.
    ``qpsk``: i.i.d. entries of modulus ``1/sqrt(length)`` with phases drawn
    uniformly from {pi/4, 3pi/4, 5pi/4, 7pi/4}; requires ``rng``.
    """
    if length < 1 or num_tx < 1:
        raise ValueError("length and num_tx must be >= 1")
    if kind == "rectangular":
        col = np.ones(length) / np.sqrt(length)
        x = np.tile(col[:, None], (1, num_tx)).astype(np.complex128)
    elif kind == "hadamard":
        if length & (length - 1) != 0:
            raise ValueError("hadamard waveforms require length to be a power of two")
        if num_tx > length:
            raise ValueError("hadamard waveforms require num_tx <= length")
        x = (_sylvester_hadamard(length)[:, :num_tx] / np.sqrt(length)).astype(np.complex128)
    elif kind == "qpsk":
        if rng is None:
            raise ValueError("qpsk waveforms require a RandomSource")
        gen = rng.generator()
        quadrant = gen.integers(0, 4, size=(length, num_tx))
        phase = np.pi / 4.0 + quadrant * (np.pi / 2.0)
        x = np.exp(1j * phase) / np.sqrt(length)
    else:
        raise ValueError(f"unknown waveform kind: {kind!r}")
    return WaveformSet(matrix=x, kind=kind)
