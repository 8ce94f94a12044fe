import numpy as np
import pytest

from csradar import (
    DesignContext,
    RandomSource,
    build_grid,
    build_phi2,
    generate_waveforms,
    grmm,
    load_design,
    optimize_phi1,
    sample_gaussian_matrix,
    save_design,
    structured_phi1,
    waveform_bank,
)
from csradar.design import (
    DesignConvergenceError,
    MeasurementDesign,
    _FeasibilityProjector,
    _objective,
    factor_gram,
    solve_gram_program,
)
from csradar.metrics import coherence_matrix
from csradar.numerics import complex_normal
from csradar.signal import selection_matrix

from conftest import make_geometry, random_hermitian


def bin_grid(geometry, num_angles, num_bins, step_deg=0.2):
    angles = np.deg2rad(step_deg) * np.arange(num_angles)
    return build_grid(angles, [0.0], geometry.range_bin * np.arange(num_bins))


def small_context(num_angles=4, num_bins=3, length=16, num_tx=3, num_rx=2, seed=5, kind="hadamard"):
    geometry = make_geometry(
        num_tx=num_tx, num_rx=num_rx, length=length, max_delay=num_bins - 1, seed=seed
    )
    waveforms = generate_waveforms(kind, length, num_tx, RandomSource(seed + 1))
    grid = bin_grid(geometry, num_angles, num_bins)
    return geometry, grid, waveforms, DesignContext.build(geometry, grid, waveforms)


def scsm_of(context, phi):
    mu = coherence_matrix(context, phi)
    off = ~np.eye(mu.shape[0], dtype=bool)
    return float((mu[off] ** 2).sum())


class TestGaussianSampling:
    def test_shape(self):
        assert sample_gaussian_matrix(4, 7, RandomSource(1)).shape == (4, 7)

    def test_entry_variance(self):
        x = sample_gaussian_matrix(500, 200, RandomSource(2))
        var = np.mean(np.abs(x) ** 2)
        assert abs(var - 1.0 / 200) <= 0.02 / 200

    def test_deterministic(self):
        a = sample_gaussian_matrix(3, 5, RandomSource(9))
        b = sample_gaussian_matrix(3, 5, RandomSource(9))
        assert np.array_equal(a, b)

    def test_grmm_trace_normalization(self):
        design = grmm(16, 48, RandomSource(3))
        trace = np.linalg.norm(design.phi, "fro") ** 2
        assert abs(trace - 16.0) <= 1e-9


class TestPhi2:
    def test_tiny_bank_by_hand(self):
        x = np.array([[1.0], [1.0]]) / np.sqrt(2.0)
        waveforms = generate_waveforms("rectangular", 2, 1)
        assert np.allclose(waveforms.matrix, x)
        w = waveform_bank(waveforms, 1)
        expected = np.array([[1, 0], [1, 1], [0, 1]]) / np.sqrt(2.0)
        assert np.allclose(w, expected)
        assert np.allclose(np.diag(w.conj().T @ w), 1.0)

    def test_unit_diagonal_for_orthonormal_waveforms(self):
        w = waveform_bank(generate_waveforms("hadamard", 8, 4), 5)
        assert np.allclose(np.diag(w.conj().T @ w), 1.0, atol=1e-12)

    def test_delay_outer_product_eigenvalues(self):
        # C_tau X X^H C_tau^H has exactly M_t unit eigenvalues for Hadamard X
        x = generate_waveforms("hadamard", 8, 3).matrix
        c = selection_matrix(2, 8, 4)
        q = c @ x @ x.conj().T @ c.T
        eigs = np.sort(np.linalg.eigvalsh(q))[::-1]
        assert np.allclose(eigs[:3], 1.0, atol=1e-12)
        assert np.allclose(eigs[3:], 0.0, atol=1e-12)

    def test_factorization_and_metadata(self):
        waveforms = generate_waveforms("hadamard", 8, 2)
        design = build_phi2(waveforms, 3, 5, RandomSource(4))
        assert design.family == "phi2"
        assert design.m_tilde == 8
        assert design.phi.shape == (5, 11)
        assert np.allclose(design.phi, design.phi0 @ design.w.conj().T)

    def test_rejects_too_many_rows(self):
        waveforms = generate_waveforms("hadamard", 8, 2)
        with pytest.raises(ValueError):
            build_phi2(waveforms, 1, 5, RandomSource(4))


class TestObjectiveGradient:
    @pytest.mark.parametrize("variant", ["sum", "max"])
    def test_finite_difference(self, rng, variant):
        # oracle: central differences of the coherence objective
        _, _, _, context = small_context()
        u = context.atoms
        g = context.phase_sums()
        w2 = np.abs(g) ** 2
        np.fill_diagonal(w2, 0.0)
        dim = u.shape[0]
        b = random_hermitian(dim, rng) + 3.0 * np.eye(dim)

        def value(mat):
            wb = u.conj().T @ mat @ u
            return _objective(w2, wb, variant, temperature=50.0)[0]

        wb = u.conj().T @ b @ u
        _, weights = _objective(w2, wb, variant, temperature=50.0)
        grad = 2.0 * (u @ ((weights * wb.conj().T) @ u.conj().T))
        h = random_hermitian(dim, rng)
        eps = 1e-6
        fd = (value(b + eps * h) - value(b - eps * h)) / (2 * eps)
        analytic = np.trace(grad.conj().T @ h).real
        assert fd == pytest.approx(analytic, rel=1e-5, abs=1e-8)


class TestFeasibilityProjector:
    def test_reaches_both_constraint_sets(self, rng):
        _, _, _, context = small_context()
        u = context.atoms
        targets = np.full(context.size, 1.0 / context.normalization)
        project = _FeasibilityProjector(u, targets, feas_tol=1e-4)
        b = project(random_hermitian(u.shape[0], rng), rounds=1500, eig_floor=-1e-8)
        assert project.violation(b) <= 1e-4
        assert np.linalg.eigvalsh(b).min() >= -1e-8


class TestOptimizePhi1:
    def test_orthogonal_atoms_reach_zero_coherence(self):
        # two disjoint delay slots of the same waveform are exactly orthogonal
        geometry = make_geometry(
            num_tx=1,
            num_rx=1,
            length=8,
            max_delay=8,
            tx_nodes=np.zeros((1, 2)),
            rx_nodes=np.zeros((1, 2)),
        )
        waveforms = generate_waveforms("rectangular", 8, 1)
        grid = build_grid([0.0], [0.0], [0.0, 8 * geometry.range_bin])
        context = DesignContext.build(geometry, grid, waveforms)
        assert abs(np.vdot(context.atoms[:, 0], context.atoms[:, 1])) <= 1e-12
        solution, design = optimize_phi1(context, lam=0.0)
        mu = coherence_matrix(context, design.phi)
        assert mu[0, 1] <= 1e-3
        assert solution.min_eigenvalue >= -1e-8

    def test_solution_contract(self):
        _, _, _, context = small_context()
        solution, design = optimize_phi1(context, lam=0.5)
        assert np.all(np.diff(solution.objective_history) <= 1e-12)
        assert solution.feasibility <= 1e-4
        assert solution.min_eigenvalue >= -1e-8
        assert design.family == "phi1"
        # factorization round trip on the untruncated gram matrix
        recon = design.phi.conj().T @ design.phi
        keep = np.linalg.eigvalsh(solution.b)
        if keep.min() >= 1e-8 * keep.max():
            assert np.linalg.norm(recon - solution.b) <= 1e-6 * np.linalg.norm(solution.b)

    def test_beats_random_search_oracle(self):
        # small instance (N=8, window 12): optimized SCSM never above 200
        # constraint-renormalized Gaussian baselines
        geometry = make_geometry(num_tx=3, num_rx=2, length=8, max_delay=4, seed=5)
        waveforms = generate_waveforms("hadamard", 8, 3)
        grid = bin_grid(geometry, num_angles=4, num_bins=2)
        context = DesignContext.build(geometry, grid, waveforms)
        assert geometry.window_length == 12
        try:
            _, design = optimize_phi1(context, lam=0.0)
        except DesignConvergenceError as err:
            design = err.design
        optimized = scsm_of(context, design.phi)
        targets = np.full(context.size, 1.0 / context.normalization)
        project = _FeasibilityProjector(context.atoms, targets, 1e-4)
        src = RandomSource(33)
        baselines = []
        for i in range(200):
            phi = sample_gaussian_matrix(6, geometry.window_length, src.derive(i))
            b = project(phi.conj().T @ phi, rounds=50)
            mu = coherence_matrix(context, factor_gram(b + 1e-14 * np.eye(b.shape[0])))
            off = ~np.eye(mu.shape[0], dtype=bool)
            baselines.append(float((mu[off] ** 2).sum()))
        assert optimized <= min(baselines) * (1.0 + 1e-9)

    def test_rejects_zero_atom(self):
        _, _, _, context = small_context()
        atoms = context.atoms.copy()
        atoms[:, 0] = 0.0
        broken = DesignContext(
            atoms=atoms, phases=context.phases, num_rx=context.num_rx, pulses=context.pulses
        )
        with pytest.raises(ValueError):
            solve_gram_program(broken, lam=0.1)

    def test_rejects_bad_arguments(self):
        _, _, _, context = small_context()
        with pytest.raises(ValueError):
            solve_gram_program(context, lam=-1.0)
        with pytest.raises(ValueError):
            solve_gram_program(context, lam=0.1, csm_variant="median")

    def test_budget_exhaustion_carries_best_iterate(self):
        _, _, _, context = small_context()
        with pytest.raises(DesignConvergenceError) as exc_info:
            optimize_phi1(context, lam=0.5, max_iterations=3)
        err = exc_info.value
        assert err.solution is not None and not err.solution.converged
        assert err.solution.feasibility <= 1e-4
        assert err.design is not None and err.design.family == "phi1"


class TestStructuredPhi1:
    def test_runs_on_phi2_inner_and_shrinks_variables(self):
        geometry, grid, waveforms, context = small_context(num_angles=5, num_bins=3, length=16)
        inner = build_phi2(waveforms, geometry.max_delay_bins, 6, RandomSource(8))
        try:
            solution, design = structured_phi1(context, inner, lam=0.6, max_iterations=800)
        except DesignConvergenceError as err:
            solution, design = err.solution, err.design
        assert design.family == "phi1_structured"
        assert solution.b.shape == (6, 6)  # M~(M~+1)/2 < window(window+1)/2 variables
        assert 6 * 7 // 2 < geometry.window_length * (geometry.window_length + 1) // 2
        assert design.phi.shape[1] == geometry.window_length
        assert solution.feasibility <= 1e-4
        assert np.all(np.diff(solution.objective_history) <= 1e-12)

    def test_degenerate_scalar_weight(self):
        # M~ = 1: one scalar degree of freedom, the program reduces to
        # least-squares normalization feasibility
        geometry, grid, waveforms, context = small_context(num_angles=3, num_bins=2, length=8)
        inner = sample_gaussian_matrix(1, geometry.window_length, RandomSource(10))
        try:
            solution, design = structured_phi1(context, inner, lam=0.0, max_iterations=200)
        except DesignConvergenceError as err:
            solution, design = err.solution, err.design
        b = float(solution.b[0, 0].real)
        assert b >= -1e-12
        u = inner @ context.atoms
        targets = np.full(context.size, 1.0 / context.normalization)
        sq = np.abs(u[0]) ** 2

        def residual(bval):
            return np.sum((bval * sq - targets) ** 2)

        # the returned scalar is the least-squares optimum of the constraints
        best = np.dot(targets, sq) / np.dot(sq, sq)
        assert residual(b) <= residual(best) * (1.0 + 1e-6)


class TestMmxSerialization:
    def test_round_trip(self, tmp_path):
        waveforms = generate_waveforms("hadamard", 8, 2)
        design = build_phi2(waveforms, 3, 5, RandomSource(4))
        path = tmp_path / "design.mmx"
        save_design(design, path)
        loaded = load_design(path)
        assert loaded.family == design.family
        assert loaded.m_tilde == design.m_tilde
        assert loaded.lam is None
        assert np.array_equal(loaded.phi, design.phi)
        assert np.array_equal(loaded.w, design.w)
        assert np.array_equal(loaded.phi0, design.phi0)

    def test_round_trip_with_lam(self, tmp_path):
        design = MeasurementDesign(
            phi=complex_normal(np.random.default_rng(0), (3, 7)),
            family="phi1",
            lam=1.5,
            csm_variant="sum",
        )
        path = tmp_path / "p.mmx"
        save_design(design, path)
        loaded = load_design(path)
        assert loaded.lam == 1.5
        assert loaded.csm_variant == "sum"
        assert np.array_equal(loaded.phi, design.phi)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "junk.mmx"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_design(path)
