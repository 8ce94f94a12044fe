"""Shift/selection operators, steering vectors, basis matrices and synthesis.

The receive window holds ``L + Ltilde`` samples. A target in delay bin
``tau`` contributes its L-sample waveform prefixed by ``tau`` zeros and
padded with ``Ltilde - tau`` zeros; the selection matrix ``C_tau`` realizes
exactly that embedding. Basis matrices collect the noiseless grid-point
responses per (receive node, pulse); the sensing matrix is ``phi @ basis``.

Large carrier phases are reduced modulo 1 (in cycles) before the complex
exponential so that multi-kilometer ranges at GHz carriers do not lose
precision.
"""

from __future__ import annotations

import numpy as np

from .numerics import RandomSource, complex_normal
from .scene import ArrayGeometry, Scene, SearchGrid, WaveformSet, eta


def selection_matrix(tau: int, length: int, max_delay: int) -> np.ndarray:
    """(L + Ltilde) x L zero-padded identity placing a pulse at delay tau."""
    if not 0 <= tau <= max_delay:
        raise ValueError(f"tau must lie in [0, {max_delay}], got {tau}")
    c = np.zeros((length + max_delay, length))
    c[tau : tau + length, :] = np.eye(length)
    return c


def delay_embed(x: np.ndarray, tau: int, max_delay: int) -> np.ndarray:
    """Apply C_tau to a length-L vector or matrix without forming C_tau."""
    x = np.asarray(x)
    if not 0 <= tau <= max_delay:
        raise ValueError(f"tau must lie in [0, {max_delay}], got {tau}")
    length = x.shape[0]
    out = np.zeros((length + max_delay,) + x.shape[1:], dtype=np.result_type(x, np.complex128))
    out[tau : tau + length] = x
    return out


def shift_matrix(i: int, length: int) -> np.ndarray:
    """L x L matrix with the main diagonal of I_L shifted up by i positions."""
    if abs(i) > length:
        raise ValueError(f"|shift| must be <= {length}, got {i}")
    return np.eye(length, k=i)


def shifted_gram(x: np.ndarray, m: int) -> np.ndarray:
    """X^H S_m X computed from row slices.

    Equals ``X[0:L-m]^H @ X[m:L]`` for m >= 0 and the mirrored product for
    m < 0; the |m| = L case is the zero matrix.
    """
    x = np.asarray(x, dtype=np.complex128)
    length, cols = x.shape
    if abs(m) > length:
        raise ValueError(f"|shift| must be <= {length}, got {m}")
    if abs(m) == length:
        return np.zeros((cols, cols), dtype=np.complex128)
    if m >= 0:
        return x[: length - m].conj().T @ x[m:]
    return x[-m:].conj().T @ x[: length + m]


def steering_vector(geometry: ArrayGeometry, theta: float) -> np.ndarray:
    """Per-transmitter phases exp(j*(2*pi*f/c)*eta_i(theta)), unit modulus."""
    phase_cycles = geometry.carrier / geometry.wave_speed * eta(geometry.tx_nodes, theta)
    return np.exp(2j * np.pi * np.mod(phase_cycles, 1.0))


def doppler_diagonal(geometry: ArrayGeometry, doppler: float) -> np.ndarray:
    """Diagonal of D(f_d) over the receive window sample times."""
    t = np.arange(geometry.window_length) * geometry.sample_spacing
    return np.exp(2j * np.pi * np.mod(doppler * t, 1.0))


def grid_delay_bins(geometry: ArrayGeometry, grid: SearchGrid) -> np.ndarray:
    """Delay bin of every flat grid index; ValueError when outside the window."""
    spacing = geometry.wave_speed * geometry.sample_spacing
    bins = np.floor(2.0 * grid.range_values() / spacing).astype(int)
    if bins.size and (bins.min() < 0 or bins.max() > geometry.max_delay_bins):
        raise ValueError(
            f"grid ranges map to delay bins [{bins.min()}, {bins.max()}], "
            f"outside [0, {geometry.max_delay_bins}]"
        )
    return bins


def grid_phases(geometry: ArrayGeometry, grid: SearchGrid, node: int, pulse: int) -> np.ndarray:
    """Phase q (in cycles, reduced mod 1) of every flat grid index."""
    f = geometry.carrier
    c = geometry.wave_speed
    rx = geometry.rx_nodes[node]
    angles = grid.angle_values()
    ranges = grid.range_values()
    speeds = grid.speed_values()
    q = (
        -2.0 * ranges * f / c
        + rx[0] * np.cos(angles - rx[1]) * f / c
        + 2.0 * speeds * f * pulse * geometry.pri / c
    )
    return np.mod(q, 1.0)


def atom_matrix(geometry: ArrayGeometry, grid: SearchGrid, waveforms: WaveformSet) -> np.ndarray:
    """Columns u_n = C_tau(n) X v(angle_n) for every flat grid index.

    This is the basis matrix stripped of per-(node, pulse) phases and
    Doppler, shared by the coherence/SIR formulas and the design programs.
    """
    if waveforms.length != geometry.samples_per_pulse:
        raise ValueError("waveform length must equal samples_per_pulse")
    steer = np.stack([steering_vector(geometry, a) for a in grid.angles], axis=1)
    xv = waveforms.matrix @ steer  # L x Na
    bins = grid_delay_bins(geometry, grid)
    angle_idx = np.tile(np.arange(grid.num_angles), grid.num_speeds * grid.num_ranges)
    u = np.zeros((geometry.window_length, grid.size), dtype=np.complex128)
    length = geometry.samples_per_pulse
    for n in range(grid.size):
        tau = bins[n]
        u[tau : tau + length, n] = xv[:, angle_idx[n]]
    return u


def basis_matrix(
    geometry: ArrayGeometry, grid: SearchGrid, waveforms: WaveformSet, node: int, pulse: int
) -> np.ndarray:
    """(L + Ltilde) x N basis matrix for one receive node and pulse."""
    u = atom_matrix(geometry, grid, waveforms)
    phases = np.exp(2j * np.pi * grid_phases(geometry, grid, node, pulse))
    psi = u * phases[None, :]
    speeds = grid.speed_values()
    if np.any(speeds != 0.0):
        f = geometry.carrier
        c = geometry.wave_speed
        for n in np.nonzero(speeds != 0.0)[0]:
            psi[:, n] *= doppler_diagonal(geometry, 2.0 * speeds[n] * f / c)
    return psi


def stacked_sensing_matrix(
    geometry: ArrayGeometry, grid: SearchGrid, waveforms: WaveformSet, phi: np.ndarray
) -> np.ndarray:
    """Stack phi @ basis over (node, pulse), node-major then pulse."""
    if phi.shape[1] != geometry.window_length:
        raise ValueError("phi must have L + Ltilde columns")
    blocks = []
    for node in range(geometry.num_rx):
        for pulse in range(geometry.pulses):
            blocks.append(phi @ basis_matrix(geometry, grid, waveforms, node, pulse))
    return np.vstack(blocks)


def _interference(
    scene: Scene, geometry: ArrayGeometry, rng: RandomSource, node: int, pulse: int
) -> np.ndarray:
    """Pre-compression interference sample vector for one (node, pulse).

    Thermal noise is i.i.d. circular Gaussian per node and pulse. The
    jammer transmits one Gaussian waveform per pulse, shared by all nodes
    within that pulse, scaled by the node's steering phase toward the
    jammer angle.
    """
    noise = scene.noise
    n = np.zeros(geometry.window_length, dtype=np.complex128)
    if noise.thermal_variance > 0.0:
        gen = rng.derive("thermal", node, pulse).generator()
        n += complex_normal(gen, geometry.window_length, noise.thermal_variance)
    if noise.jammer_power > 0.0:
        gen = rng.derive("jammer", pulse).generator()
        w = complex_normal(gen, geometry.window_length, 1.0)
        rx = geometry.rx_nodes[node]
        phase = geometry.carrier / geometry.wave_speed * rx[0] * np.cos(noise.jammer_angle - rx[1])
        n += np.sqrt(noise.jammer_power) * np.exp(2j * np.pi * np.mod(phase, 1.0)) * w
    return n


def synthesize_received(
    scene: Scene,
    geometry: ArrayGeometry,
    waveforms: WaveformSet,
    phi: np.ndarray,
    rng: RandomSource,
    node: int,
    pulse: int,
) -> np.ndarray:
    """Compressed observation r for one (node, pulse), deterministic per seed."""
    phi = np.asarray(phi, dtype=np.complex128)
    if phi.shape[1] != geometry.window_length:
        raise ValueError("phi must have L + Ltilde columns")
    if waveforms.length != geometry.samples_per_pulse:
        raise ValueError("waveform length must equal samples_per_pulse")
    f = geometry.carrier
    c = geometry.wave_speed
    rx = geometry.rx_nodes[node]
    pre = np.zeros(geometry.window_length, dtype=np.complex128)
    for t in scene.targets:
        tau = geometry.delay_bin(t.range_m)
        if not 0 <= tau <= geometry.max_delay_bins:
            raise ValueError(f"target delay bin {tau} outside [0, {geometry.max_delay_bins}]")
        doppler = 2.0 * t.speed * f / c
        p = (
            -2.0 * t.range_m * f / c
            + rx[0] * np.cos(t.angle - rx[1]) * f / c
            + doppler * pulse * geometry.pri
        )
        col = delay_embed(waveforms.matrix @ steering_vector(geometry, t.angle), tau, geometry.max_delay_bins)
        if t.speed != 0.0:
            col = doppler_diagonal(geometry, doppler) * col
        pre += t.reflectivity * np.exp(2j * np.pi * np.mod(p, 1.0)) * col
    pre += _interference(scene, geometry, rng, node, pulse)
    return phi @ pre


def stack_observations(theta_blocks, r_blocks) -> tuple:
    """Stack per-(node, pulse) sensing blocks and observations, node-major.

    ``theta_blocks``/``r_blocks`` are sequences over nodes of sequences over
    pulses. Row blocks are ordered (node 0, pulse 0), (node 0, pulse 1), ...
    """
    thetas, rs = [], []
    ncols = None
    for node_thetas, node_rs in zip(theta_blocks, r_blocks):
        for th, r in zip(node_thetas, node_rs):
            th = np.asarray(th)
            r = np.asarray(r)
            if ncols is None:
                ncols = th.shape[1]
            if th.shape[1] != ncols:
                raise ValueError("inconsistent grid size across sensing blocks")
            if r.shape[0] != th.shape[0]:
                raise ValueError("observation length must match sensing-matrix rows")
            thetas.append(th)
            rs.append(r)
    if not thetas:
        raise ValueError("no blocks to stack")
    return np.vstack(thetas), np.concatenate(rs)
