"""Measurement-matrix families: Gaussian random, convex-optimized, waveform-structured.

Three families:

* ``grmm``  -- the conventional compressive-sensing baseline, i.i.d. complex
  Gaussian rescaled so ``Tr(phi phi^H) = M`` exactly.
* ``phi2``  -- ``phi0 @ W^H`` with ``W = [C_0 X, ..., C_Ltilde X]`` collecting
  the waveforms at every admissible delay; targets SIR improvement only.
* ``phi1`` / ``phi1_structured`` -- solves, over the Gram matrix ``B``, the
  convex trade-off between squared cross-column coherence of the sensing
  matrix and interference power (``lam * Tr(B)``), subject to ``B >= 0`` and
  unit sensing-column norms; the measurement matrix is recovered from the
  eigendecomposition of ``B``. The structured variant optimizes a small
  post-processing factor applied after an inner compressor, shrinking the
  number of variables.

The solver is a projected-gradient method with backtracking: each accepted
iterate is PSD-projected and rescaled onto the unit-column equalities, and
the objective sequence over accepted iterates is nonincreasing by
construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .numerics import RandomSource, complex_normal, hermitian_eig, psd_project
from .scene import ArrayGeometry, SearchGrid, WaveformSet
from .signal import atom_matrix, delay_embed, grid_phases

FAMILIES = ("grmm", "phi1", "phi1_structured", "phi2")


class DesignConvergenceError(RuntimeError):
    """Raised when the Gram-program solver exhausts its iteration budget.

    Carries the best iterate found so far in ``solution`` / ``design``.
    """

    def __init__(self, message, solution=None, design=None):
        super().__init__(message)
        self.solution = solution
        self.design = design


@dataclass(frozen=True)
class MeasurementDesign:
    """A measurement matrix tagged with its provenance and parameters."""

    phi: np.ndarray
    family: str
    lam: float = None
    m_tilde: int = None
    csm_variant: str = None
    w: np.ndarray = None
    phi0: np.ndarray = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown design family: {self.family!r}")
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=np.complex128))

    @property
    def rows(self) -> int:
        return self.phi.shape[0]

    @property
    def window_length(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class GramSolution:
    """Solution of the coherence/SIR trade-off program over B = Phi^H Phi."""

    b: np.ndarray
    iterations: int
    final_objective: float
    trace_term: float
    objective_history: np.ndarray
    feasibility: float
    min_eigenvalue: float
    converged: bool


def sample_gaussian_matrix(rows: int, cols: int, rng: RandomSource) -> np.ndarray:
    """i.i.d. circular complex Gaussian entries of variance 1/cols."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return complex_normal(rng.generator(), (rows, cols), variance=1.0 / cols)


def grmm(rows: int, window_length: int, rng: RandomSource) -> MeasurementDesign:
    """Gaussian random measurement matrix normalized to Tr(phi phi^H) = rows."""
    phi = sample_gaussian_matrix(rows, window_length, rng)
    phi *= np.sqrt(rows / np.linalg.norm(phi, "fro") ** 2)
    return MeasurementDesign(phi=phi, family="grmm")


def waveform_bank(waveforms: WaveformSet, max_delay: int) -> np.ndarray:
    """W = [C_0 X, ..., C_Ltilde X], shape (L + Ltilde) x (Ltilde + 1) M_t."""
    length, num_tx = waveforms.matrix.shape
    w = np.zeros((length + max_delay, (max_delay + 1) * num_tx), dtype=np.complex128)
    for tau in range(max_delay + 1):
        w[:, tau * num_tx : (tau + 1) * num_tx] = delay_embed(waveforms.matrix, tau, max_delay)
    return w


def build_phi2(waveforms: WaveformSet, max_delay: int, rows: int, rng: RandomSource) -> MeasurementDesign:
    """Waveform-structured design phi2 = phi0 @ W^H.

    ``phi0`` is ``rows x (Ltilde + 1) M_t`` Gaussian with entry variance
    ``1 / ((Ltilde + 1) M_t)``; unit waveform columns guarantee
    ``diag(W^H W) = 1``. Requires ``rows <= (Ltilde + 1) M_t``.
    """
    w = waveform_bank(waveforms, max_delay)
    m_tilde = w.shape[1]
    if rows > m_tilde:
        raise ValueError(f"rows must be <= (Ltilde + 1) * M_t = {m_tilde}, got {rows}")
    phi0 = sample_gaussian_matrix(rows, m_tilde, rng)
    return MeasurementDesign(phi=phi0 @ w.conj().T, family="phi2", m_tilde=m_tilde, w=w, phi0=phi0)


@dataclass(frozen=True)
class DesignContext:
    """Grid atoms and per-(node, pulse) phases entering coherence formulas.

    ``atoms`` has columns ``u_n = C_tau(n) X v(angle_n)``; ``phases`` holds
    ``exp(2j pi q)`` for every (node, pulse) row and grid column. The
    cross-column phase sums ``G[k, k'] = sum_rows p[k] conj(p[k'])`` weight
    the coherence of the stacked sensing matrix.
    """

    atoms: np.ndarray
    phases: np.ndarray
    num_rx: int
    pulses: int

    @staticmethod
    def build(geometry: ArrayGeometry, grid: SearchGrid, waveforms: WaveformSet) -> "DesignContext":
        atoms = atom_matrix(geometry, grid, waveforms)
        rows = []
        for node in range(geometry.num_rx):
            for pulse in range(geometry.pulses):
                rows.append(np.exp(2j * np.pi * grid_phases(geometry, grid, node, pulse)))
        return DesignContext(
            atoms=atoms, phases=np.vstack(rows), num_rx=geometry.num_rx, pulses=geometry.pulses
        )

    @property
    def size(self) -> int:
        return self.atoms.shape[1]

    @property
    def normalization(self) -> float:
        return float(self.num_rx * self.pulses)

    def phase_sums(self) -> np.ndarray:
        """G[k, k'] = sum over (node, pulse) of exp(2j pi (q_k - q_k'))."""
        p = self.phases
        return (p.conj().T @ p).T


def _objective(w2: np.ndarray, wb: np.ndarray, variant: str, temperature: float):
    """Coherence part of the objective and its pair-weight matrix.

    ``w2`` are squared phase-sum magnitudes (zero diagonal) and ``wb`` is
    U^H B U; under the unit-column constraints the squared pair coherence
    is ``s = w2 * |wb|^2``. Returns (value, weights) where the gradient of
    the value is ``2 U (weights * conj(wb).T) U^H``.
    """
    s = w2 * np.abs(wb.T) ** 2
    if variant == "sum":
        return float(s.sum()), w2
    # smoothed max: logsumexp over pairs at fixed temperature
    mask = w2 > 0.0
    if not mask.any():
        return 0.0, np.zeros_like(w2)
    smax = s[mask].max()
    e = np.where(mask, np.exp(temperature * (s - smax)), 0.0)
    z = e.sum()
    value = smax + np.log(z) / temperature
    return float(value), w2 * (e / z)


class _FeasibilityProjector:
    """Alternating projection onto {B >= 0} and {u_k^H B u_k = t_k}.

    The equality set is affine in B; its orthogonal projection solves a
    fixed linear system with Gram matrix ``|U^H U|^2``, factored once.
    """

    def __init__(self, atoms, targets, feas_tol):
        self.atoms = atoms
        self.targets = targets
        self.feas_tol = feas_tol
        gram2 = np.abs(atoms.conj().T @ atoms) ** 2
        ridge = 1e-12 * max(np.trace(gram2).real, 1.0)
        self.factor = sla.cho_factor(gram2 + ridge * np.eye(atoms.shape[1]))

    def values(self, b):
        return np.einsum("ik,ij,jk->k", self.atoms.conj(), b, self.atoms).real

    def violation(self, b):
        return float(np.abs(self.values(b) / self.targets - 1.0).max())

    def onto_equalities(self, b):
        alpha = sla.cho_solve(self.factor, self.targets - self.values(b))
        return b + (self.atoms * alpha) @ self.atoms.conj().T

    def __call__(self, b, rounds: int = 20, eig_floor: float = None):
        # always end on an equality projection so the unit-column invariant
        # holds exactly; near convergence it leaves the PSD cone intact
        b = 0.5 * (b + b.conj().T)
        for _ in range(rounds):
            b = self.onto_equalities(b)
            b = 0.5 * (b + b.conj().T)
            eig = hermitian_eig(b)
            floor = (
                -1e-8 * max(eig.eigenvalues.max(), 1e-300) if eig_floor is None else eig_floor
            )
            if eig.eigenvalues.min() >= floor:
                return 0.5 * (b + b.conj().T)
            b = psd_project(b)
        b = self.onto_equalities(b)
        return 0.5 * (b + b.conj().T)


def solve_gram_program(
    context: DesignContext,
    lam: float,
    csm_variant: str = "sum",
    inner: np.ndarray = None,
    max_iterations: int = 2000,
    rel_tol: float = 1e-6,
    feas_tol: float = 1e-4,
    temperature: float = 50.0,
) -> GramSolution:
    """Minimize cross-column coherence plus lam * Tr(B) over PSD B.

    ``csm_variant`` selects the coherence measure: ``"sum"`` (sum of squared
    pair coherences, the default design criterion) or ``"max"`` (softmax
    smoothing of the worst pair). When ``inner`` is given the program runs
    over transformed atoms ``inner @ u_k`` (structured variant), so ``B``
    has ``inner.shape[0]`` rows.
    """
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    if csm_variant not in ("sum", "max"):
        raise ValueError(f"csm_variant must be 'sum' or 'max', got {csm_variant!r}")
    if context.size < 2:
        raise ValueError("need at least 2 grid points")
    u = context.atoms if inner is None else np.asarray(inner, dtype=np.complex128) @ context.atoms
    dim = u.shape[0]
    sq_norms = np.linalg.norm(u, axis=0) ** 2
    if np.any(sq_norms <= 0.0):
        raise ValueError("infeasible normalization: some sensing atoms are zero")
    targets = np.full(context.size, 1.0 / context.normalization)

    g = context.phase_sums()
    w2 = np.abs(g) ** 2
    np.fill_diagonal(w2, 0.0)

    uh = u.conj().T

    def full_objective(b):
        wb = uh @ b @ u
        value, weights = _objective(w2, wb, csm_variant, temperature)
        return value + lam * np.trace(b).real, wb, weights

    project = _FeasibilityProjector(u, targets, feas_tol)
    b = project(np.eye(dim, dtype=np.complex128) * float(np.mean(targets / sq_norms)))
    objective, wb, weights = full_objective(b)
    history = [objective]

    step = None
    prev_b = None
    prev_grad = None
    stalled = 0
    iterations = 0
    converged = False
    for iterations in range(1, max_iterations + 1):
        grad = 2.0 * (u @ ((weights * wb.conj().T) @ uh)) + lam * np.eye(dim)
        grad_norm = np.linalg.norm(grad)
        if grad_norm <= 1e-300:
            converged = True
            break
        if step is None:
            step = 0.1 * max(np.linalg.norm(b), 1e-300) / grad_norm
        elif prev_grad is not None:
            # Barzilai-Borwein step from the last accepted move, safeguarded
            db = b - prev_b
            dg = grad - prev_grad
            denom = np.vdot(dg, dg).real
            if denom > 1e-300:
                bb = np.vdot(db, dg).real / denom
                if np.isfinite(bb) and bb > 0.0:
                    step = bb
        prev_b, prev_grad = b, grad
        accepted = False
        for _ in range(60):
            trial = project(b - step * grad)
            trial_obj, trial_wb, trial_weights = full_objective(trial)
            if trial_obj <= objective:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        rel_change = abs(objective - trial_obj) / max(abs(objective), 1e-300)
        b, objective, wb, weights = trial, trial_obj, trial_wb, trial_weights
        history.append(objective)
        stalled = stalled + 1 if rel_change < rel_tol else 0
        if stalled >= 5:
            converged = True
            break

    # final polish: drive the PSD floor to an absolute -1e-8 while keeping
    # the equalities exact (this is not an accepted iteration)
    b = project(b, rounds=500, eig_floor=-1e-8)
    objective = full_objective(b)[0]

    eig = hermitian_eig(b)
    solution = GramSolution(
        b=b,
        iterations=iterations,
        final_objective=objective,
        trace_term=float(np.trace(b).real),
        objective_history=np.asarray(history),
        feasibility=project.violation(b),
        min_eigenvalue=float(eig.eigenvalues.min()),
        converged=converged,
    )
    if not converged:
        raise DesignConvergenceError(
            f"gram program did not converge within {max_iterations} iterations", solution=solution
        )
    return solution


def factor_gram(b: np.ndarray, rank_rtol: float = 1e-8) -> np.ndarray:
    """Phi = sqrt(Sigma~) V~^H from the eigendecomposition of B.

    Eigenvalues below ``rank_rtol`` times the largest are dropped, so the
    row count of the result is the numerical rank of B.
    """
    eig = hermitian_eig(b)
    w = eig.eigenvalues
    keep = w >= rank_rtol * max(w.max(), 0.0)
    if not keep.any():
        raise ValueError("gram matrix has no positive eigenvalues to factor")
    w = np.clip(w[keep], 0.0, None)
    v = eig.eigenvectors[:, keep]
    return np.sqrt(w)[:, None] * v.conj().T


def optimize_phi1(
    context: DesignContext,
    lam: float,
    csm_variant: str = "sum",
    **solver_options,
) -> tuple:
    """Unstructured convex design over B = phi^H phi; returns (solution, design)."""
    try:
        solution = solve_gram_program(context, lam, csm_variant, inner=None, **solver_options)
    except DesignConvergenceError as err:
        if err.solution is not None:
            err.design = MeasurementDesign(
                phi=factor_gram(err.solution.b), family="phi1", lam=lam, csm_variant=csm_variant
            )
        raise
    phi = factor_gram(solution.b)
    design = MeasurementDesign(phi=phi, family="phi1", lam=lam, csm_variant=csm_variant)
    return solution, design


def structured_phi1(
    context: DesignContext,
    inner,
    lam: float,
    csm_variant: str = "sum",
    **solver_options,
) -> tuple:
    """Structured design phi1 = W @ inner with B = W^H W optimized.

    ``inner`` is the compressor applied first (typically a phi2 design, or
    any M~ x (L + Ltilde) matrix); the program then has only M~(M~ + 1)/2
    Hermitian degrees of freedom. Returns (solution, design).
    """
    inner_phi = inner.phi if isinstance(inner, MeasurementDesign) else np.asarray(inner, dtype=np.complex128)
    m_tilde = inner_phi.shape[0]
    try:
        solution = solve_gram_program(context, lam, csm_variant, inner=inner_phi, **solver_options)
    except DesignConvergenceError as err:
        if err.solution is not None:
            w = factor_gram(err.solution.b)
            err.design = MeasurementDesign(
                phi=w @ inner_phi, family="phi1_structured", lam=lam,
                m_tilde=m_tilde, csm_variant=csm_variant, w=w,
            )
        raise
    w = factor_gram(solution.b)
    design = MeasurementDesign(
        phi=w @ inner_phi, family="phi1_structured", lam=lam,
        m_tilde=m_tilde, csm_variant=csm_variant, w=w,
    )
    return solution, design


_MAGIC = b"MMX1"


def _pack_str(s: str) -> bytes:
    raw = ("" if s is None else s).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_matrix(a) -> bytes:
    if a is None:
        return struct.pack("<q", -1)
    a = np.ascontiguousarray(np.asarray(a, dtype=np.complex128))
    header = struct.pack("<qq", a.shape[0], a.shape[1])
    return header + a.astype("<c16").tobytes()


def save_design(design: MeasurementDesign, path) -> None:
    """Serialize a design to the binary .mmx container (little-endian)."""
    blob = _MAGIC
    blob += _pack_str(design.family)
    blob += struct.pack("<d", np.nan if design.lam is None else float(design.lam))
    blob += struct.pack("<q", -1 if design.m_tilde is None else int(design.m_tilde))
    blob += _pack_str(design.csm_variant)
    blob += _pack_matrix(design.phi)
    blob += _pack_matrix(design.w)
    blob += _pack_matrix(design.phi0)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_design(path) -> MeasurementDesign:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a .mmx design file")
    offset = 4

    def read_str():
        nonlocal offset
        (n,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        s = blob[offset : offset + n].decode("utf-8")
        offset += n
        return s or None

    def read_matrix():
        nonlocal offset
        (rows,) = struct.unpack_from("<q", blob, offset)
        if rows == -1:
            offset += 8
            return None
        rows, cols = struct.unpack_from("<qq", blob, offset)
        offset += 16
        count = rows * cols
        a = np.frombuffer(blob, dtype="<c16", count=count, offset=offset).reshape(rows, cols)
        offset += count * 16
        return a.astype(np.complex128)

    family = read_str()
    (lam,) = struct.unpack_from("<d", blob, offset)
    offset += 8
    (m_tilde,) = struct.unpack_from("<q", blob, offset)
    offset += 8
    csm_variant = read_str()
    phi = read_matrix()
    w = read_matrix()
    phi0 = read_matrix()
    return MeasurementDesign(
        phi=phi,
        family=family,
        lam=None if np.isnan(lam) else lam,
        m_tilde=None if m_tilde == -1 else m_tilde,
        csm_variant=csm_variant,
        w=w,
        phi0=phi0,
    )
