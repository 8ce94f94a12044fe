import numpy as np
import pytest

from csradar import ArrayGeometry, RandomSource, place_nodes_uniform_disk

# desk-scale physical defaults: one delay bin covers 15 m
CARRIER = 5.0e9
WAVE_SPEED = 3.0e8


def make_geometry(
    num_tx=4,
    num_rx=2,
    length=8,
    max_delay=4,
    pulses=1,
    seed=7,
    disk_radius=10.0,
    tx_nodes=None,
    rx_nodes=None,
):
    """Small geometry with randomly placed nodes unless given explicitly."""
    src = RandomSource(seed)
    if tx_nodes is None:
        tx_nodes = place_nodes_uniform_disk(num_tx, disk_radius, src.derive("tx"))
    if rx_nodes is None:
        rx_nodes = place_nodes_uniform_disk(num_rx, disk_radius, src.derive("rx"))
    pulse_duration = length * 1.0e-7  # T_p/L = 0.1 us -> 15 m range bins
    return ArrayGeometry(
        tx_nodes=tx_nodes,
        rx_nodes=rx_nodes,
        disk_radius=disk_radius,
        carrier=CARRIER,
        wave_speed=WAVE_SPEED,
        pulse_duration=pulse_duration,
        pri=1.0e-4,
        samples_per_pulse=length,
        max_delay_bins=max_delay,
        pulses=pulses,
    )


def random_hermitian(n, rng, scale=1.0):
    a = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return 0.5 * (a + a.conj().T)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
