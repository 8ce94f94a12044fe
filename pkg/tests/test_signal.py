import numpy as np
import pytest

from csradar import (
    NoiseModel,
    RandomSource,
    Scene,
    Target,
    basis_matrix,
    build_grid,
    delay_embed,
    generate_waveforms,
    selection_matrix,
    shift_matrix,
    shifted_gram,
    stack_observations,
    stacked_sensing_matrix,
    steering_vector,
    synthesize_received,
)
from csradar.numerics import complex_normal
from csradar.signal import grid_delay_bins

from conftest import CARRIER, WAVE_SPEED, make_geometry


def bin_grid(geometry, num_angles=3, num_bins=None, angle_step_deg=0.2):
    """Grid whose range axis is aligned with whole delay bins."""
    num_bins = geometry.max_delay_bins + 1 if num_bins is None else num_bins
    angles = np.deg2rad(angle_step_deg) * np.arange(num_angles)
    ranges = geometry.range_bin * np.arange(num_bins)
    return build_grid(angles, [0.0], ranges)


class TestSelectionMatrix:
    def test_identity_when_no_delay_slack(self):
        assert np.array_equal(selection_matrix(0, 4, 0), np.eye(4))

    @pytest.mark.parametrize("tau", range(4))
    def test_orthonormal_columns(self, tau):
        c = selection_matrix(tau, 5, 3)
        assert np.array_equal(c.T @ c, np.eye(5))

    def test_places_sequence(self):
        c = selection_matrix(1, 2, 1)
        assert np.array_equal(c @ np.array([1.0, 2.0]), np.array([0.0, 1.0, 2.0]))

    def test_energy_preserved(self, rng):
        x = rng.standard_normal(6)
        assert np.linalg.norm(selection_matrix(2, 6, 4) @ x) == pytest.approx(np.linalg.norm(x))

    def test_delay_embed_matches_matrix(self, rng):
        x = complex_normal(rng, 6)
        assert np.allclose(delay_embed(x, 3, 5), selection_matrix(3, 6, 5) @ x)

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            selection_matrix(3, 4, 2)
        with pytest.raises(ValueError):
            selection_matrix(-1, 4, 2)


class TestShiftedGram:
    def test_zero_shift_is_gram(self, rng):
        x = complex_normal(rng, (6, 3))
        assert np.allclose(shifted_gram(x, 0), x.conj().T @ x, atol=1e-14)

    def test_hermitian_pairing(self, rng):
        x = complex_normal(rng, (8, 3))
        for m in range(-8, 9):
            assert np.allclose(shifted_gram(x, m).conj().T, shifted_gram(x, -m), atol=1e-14)

    @pytest.mark.parametrize("m", [-5, -1, 0, 1, 2, 5])
    def test_matches_explicit_shift_matrix(self, rng, m):
        x = complex_normal(rng, (7, 2))
        explicit = x.conj().T @ shift_matrix(m, 7) @ x
        assert np.allclose(shifted_gram(x, m), explicit, atol=1e-12)

    def test_full_shift_is_zero(self, rng):
        x = complex_normal(rng, (4, 2))
        assert np.all(shifted_gram(x, 4) == 0)
        assert np.all(shifted_gram(x, -4) == 0)

    def test_rejects_overlong_shift(self):
        with pytest.raises(ValueError):
            shift_matrix(5, 4)
        with pytest.raises(ValueError):
            shifted_gram(np.ones((4, 1)), 5)


class TestSteeringVector:
    def test_nodes_at_origin(self):
        geometry = make_geometry(tx_nodes=np.zeros((3, 2)), rx_nodes=np.zeros((1, 2)))
        assert np.allclose(steering_vector(geometry, 0.7), np.ones(3))

    def test_unit_modulus(self):
        geometry = make_geometry(num_tx=5)
        for theta in np.linspace(0, 2 * np.pi, 7):
            assert np.allclose(np.abs(steering_vector(geometry, theta)), 1.0)

    def test_single_node_phase(self):
        # f/c = 1/2 per meter, r = 10 m, theta = alpha = 0: phase 10 pi -> +1
        from csradar import ArrayGeometry

        geometry = ArrayGeometry(
            tx_nodes=np.array([[10.0, 0.0]]),
            rx_nodes=np.zeros((1, 2)),
            disk_radius=10.0,
            carrier=0.5,
            wave_speed=1.0,
            pulse_duration=1.0,
            pri=10.0,
            samples_per_pulse=4,
            max_delay_bins=0,
        )
        v = steering_vector(geometry, 0.0)
        assert v[0] == pytest.approx(1.0 + 0.0j, abs=1e-12)


class TestBasisMatrix:
    def test_stationary_grid_pulse_invariant(self):
        geometry = make_geometry(pulses=2)
        grid = bin_grid(geometry)
        waveforms = generate_waveforms("hadamard", geometry.samples_per_pulse, geometry.num_tx)
        psi1 = basis_matrix(geometry, grid, waveforms, node=0, pulse=0)
        psi2 = basis_matrix(geometry, grid, waveforms, node=0, pulse=1)
        assert np.allclose(psi1, psi2)

    def test_column_is_delayed_waveform(self):
        geometry = make_geometry(
            num_tx=1, tx_nodes=np.zeros((1, 2)), rx_nodes=np.zeros((1, 2)), length=8, max_delay=4
        )
        grid = build_grid([0.0], [0.0], [2 * geometry.range_bin])
        waveforms = generate_waveforms("qpsk", 8, 1, RandomSource(2))
        psi = basis_matrix(geometry, grid, waveforms, node=0, pulse=0)
        column = psi[:, 0]
        expected = delay_embed(waveforms.matrix[:, 0], 2, 4)
        # single TX at origin: the column is the delayed waveform times a unit phase
        phase = np.exp(2j * np.pi * np.mod(-2 * 2 * geometry.range_bin * CARRIER / WAVE_SPEED, 1.0))
        assert np.allclose(column, phase * expected, atol=1e-12)

    def test_shape(self):
        geometry = make_geometry(length=8, max_delay=4)
        grid = bin_grid(geometry, num_angles=3, num_bins=5)
        waveforms = generate_waveforms("hadamard", 8, geometry.num_tx)
        psi = basis_matrix(geometry, grid, waveforms, 0, 0)
        assert psi.shape == (12, 15)

    def test_rejects_out_of_window_ranges(self):
        geometry = make_geometry(length=8, max_delay=2)
        grid = build_grid([0.0], [0.0], [10 * geometry.range_bin])
        waveforms = generate_waveforms("hadamard", 8, geometry.num_tx)
        with pytest.raises(ValueError):
            basis_matrix(geometry, grid, waveforms, 0, 0)

    def test_grid_delay_bins(self):
        geometry = make_geometry(length=8, max_delay=4)
        grid = bin_grid(geometry, num_angles=2, num_bins=4)
        bins = grid_delay_bins(geometry, grid)
        assert bins.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


class TestSynthesis:
    def geometry(self, **kw):
        return make_geometry(num_tx=2, num_rx=2, length=8, max_delay=4, **kw)

    def waveforms(self):
        return generate_waveforms("hadamard", 8, 2)

    def test_no_targets_no_noise_is_zero(self):
        geometry = self.geometry()
        phi = np.eye(geometry.window_length)
        scene = Scene(targets=(), noise=NoiseModel(0.0, 0.0))
        r = synthesize_received(scene, geometry, self.waveforms(), phi, RandomSource(1), 0, 0)
        assert np.all(r == 0)

    def test_single_target_matches_basis_column(self):
        geometry = self.geometry()
        grid = bin_grid(geometry)
        waveforms = self.waveforms()
        n = grid.flatten(1, 0, 2)
        angle, speed, range_m = grid.point(n)
        scene = Scene(
            targets=(Target(angle=angle, range_m=range_m, speed=speed, reflectivity=0.7 + 0.2j),),
            noise=NoiseModel(0.0, 0.0),
        )
        phi = complex_normal(np.random.default_rng(0), (5, geometry.window_length))
        for node in range(2):
            r = synthesize_received(scene, geometry, waveforms, phi, RandomSource(1), node, 0)
            column = (phi @ basis_matrix(geometry, grid, waveforms, node, 0))[:, n]
            expected = 0.7 + 0.2j
            # residual after projecting onto the matching sensing column
            coeff = np.vdot(column, r) / np.vdot(column, column)
            assert np.linalg.norm(r - coeff * column) <= 1e-10 * np.linalg.norm(r)
            assert coeff == pytest.approx(expected, abs=1e-10)

    def test_noise_only_average_power(self):
        geometry = make_geometry(num_tx=1, num_rx=1, length=8, max_delay=4)
        phi = complex_normal(np.random.default_rng(3), (6, geometry.window_length))
        scene = Scene(targets=(), noise=NoiseModel(thermal_variance=2.0, jammer_power=0.0))
        waveforms = generate_waveforms("rectangular", 8, 1)
        total = 0.0
        trials = 10_000
        src = RandomSource(77)
        for t in range(trials):
            r = synthesize_received(scene, geometry, waveforms, phi, src.derive(t), 0, 0)
            total += np.vdot(r, r).real
        expected = 2.0 * np.linalg.norm(phi, "fro") ** 2
        assert abs(total / trials - expected) <= 0.03 * expected

    def test_jammer_power_and_sharing(self):
        geometry = self.geometry()
        phi = np.eye(geometry.window_length)
        scene = Scene(targets=(), noise=NoiseModel(0.0, jammer_power=4.0, jammer_angle=0.12))
        src = RandomSource(5)
        r0 = synthesize_received(scene, geometry, self.waveforms(), phi, src, 0, 0)
        r1 = synthesize_received(scene, geometry, self.waveforms(), phi, src, 1, 0)
        # same pulse: the jammer waveform is shared, nodes differ by a unit phase
        ratio = r1 / r0
        assert np.allclose(ratio, ratio[0], atol=1e-10)
        assert abs(abs(ratio[0]) - 1.0) <= 1e-10

    def test_linearity_in_targets(self):
        geometry = self.geometry()
        grid = bin_grid(geometry)
        waveforms = self.waveforms()
        t1 = Target(angle=grid.angles[0], range_m=grid.ranges[1], reflectivity=1.0 + 0.0j)
        t2 = Target(angle=grid.angles[2], range_m=grid.ranges[3], reflectivity=0.5 - 0.5j)
        phi = complex_normal(np.random.default_rng(4), (6, geometry.window_length))
        silent = NoiseModel(0.0, 0.0)

        def synth(targets):
            return synthesize_received(
                Scene(targets=targets, noise=silent), geometry, waveforms, phi, RandomSource(1), 0, 0
            )

        assert np.allclose(synth((t1, t2)), synth((t1,)) + synth((t2,)), atol=1e-12)

    def test_dimension_mismatch(self):
        geometry = self.geometry()
        phi = np.eye(geometry.window_length - 1)
        scene = Scene(targets=(), noise=NoiseModel())
        with pytest.raises(ValueError):
            synthesize_received(scene, geometry, self.waveforms(), phi, RandomSource(1), 0, 0)


class TestStacking:
    def test_single_block_identity(self, rng):
        th = complex_normal(rng, (3, 4))
        r = complex_normal(rng, 3)
        theta, obs = stack_observations([[th]], [[r]])
        assert np.array_equal(theta, th)
        assert np.array_equal(obs, r)

    def test_block_order_and_shape(self, rng):
        blocks = [[complex_normal(rng, (3, 5)) for _ in range(2)] for _ in range(2)]
        obs = [[complex_normal(rng, 3) for _ in range(2)] for _ in range(2)]
        theta, r = stack_observations(blocks, obs)
        assert theta.shape == (12, 5)
        assert r.shape == (12,)
        assert np.array_equal(theta[3:6], blocks[0][1])  # (node 0, pulse 1) is second

    def test_stacked_consistency_with_synthesis(self):
        geometry = make_geometry(num_tx=2, num_rx=2, length=8, max_delay=4, pulses=2)
        grid = bin_grid(geometry)
        waveforms = generate_waveforms("hadamard", 8, 2)
        scene = Scene.from_grid_indices(
            grid, [(0, 1, 1.0 + 0.0j), (2, 3, 0.3 + 0.4j)], noise=NoiseModel(0.0, 0.0)
        )
        phi = complex_normal(np.random.default_rng(8), (5, geometry.window_length))
        theta = stacked_sensing_matrix(geometry, grid, waveforms, phi)
        r_blocks = [
            [
                synthesize_received(scene, geometry, waveforms, phi, RandomSource(1), node, pulse)
                for pulse in range(2)
            ]
            for node in range(2)
        ]
        r = np.concatenate([r for node in r_blocks for r in node])
        s = scene.target_vector(grid, geometry)
        assert np.linalg.norm(theta @ s - r) <= 1e-9 * np.linalg.norm(r)

    def test_inconsistent_grid_rejected(self, rng):
        with pytest.raises(ValueError):
            stack_observations(
                [[complex_normal(rng, (3, 4)), complex_normal(rng, (3, 5))]],
                [[complex_normal(rng, 3), complex_normal(rng, 3)]],
            )
