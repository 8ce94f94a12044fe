"""Sparse recovery (Dantzig selector), matched-filter baseline, detection, ROC.

The Dantzig selector minimizes the l1 norm of the complex coefficient
vector subject to a cap on the infinity norm of the correlated residual
``Theta^H (r - Theta s)``. The solver is a primal-dual first-order scheme
on the equivalent real-split problem: complex moduli are exactly the
second-order-cone norms of the stacked real/imag pairs, so complex soft
thresholding and modulus clipping implement the two proximal maps. A final
feasibility polish blends toward the least-norm interpolant so every
returned estimate satisfies the constraint within tolerance.

Detection follows the all-targets-found / any-false-target convention: PD
is the fraction of trials in which every true target is detected, PFA the
fraction in which at least one spurious index is detected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RecoveryConvergenceError(RuntimeError):
    """Solver exhausted its budget; ``estimate`` carries the best iterate."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class SparseEstimate:
    s_hat: np.ndarray
    iterations: int
    residual_inf: float
    objective: float
    converged: bool


@dataclass(frozen=True)
class RecoveryProblem:
    theta: np.ndarray
    r: np.ndarray
    epsilon: float

    def solve(self, **options) -> SparseEstimate:
        return dantzig_select(self.theta, self.r, self.epsilon, **options)


def default_epsilon(theta: np.ndarray, sigma: float) -> float:
    """Standard selector scaling 1.5 * sigma * sqrt(2 log N) * mean column norm."""
    theta = np.asarray(theta)
    n = theta.shape[1]
    col_norms = np.linalg.norm(theta, axis=0)
    return float(1.5 * sigma * np.sqrt(2.0 * np.log(n)) * col_norms.mean())


def _soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    mag = np.abs(x)
    scale = np.maximum(1.0 - tau / np.maximum(mag, 1e-300), 0.0)
    return x * scale


def _clip_modulus(x: np.ndarray, radius: float) -> np.ndarray:
    mag = np.abs(x)
    over = mag > radius
    out = x.copy()
    if np.any(over):
        out[over] = x[over] * (radius / mag[over])
    return out


def dantzig_select(
    theta: np.ndarray,
    r: np.ndarray,
    epsilon: float,
    max_iterations: int = 5000,
    tol: float = 1e-6,
) -> SparseEstimate:
    """min ||s||_1 subject to ||Theta^H (r - Theta s)||_inf <= epsilon.

    Iterates until the primal-dual residual surrogate drops below ``tol``
    (relative) or the budget runs out, in which case a diagnostic error
    carrying the best iterate is raised. The feasibility invariant holds on
    every returned estimate up to a relative slack of 1e-6 (plus a
    floating-point floor); for ``epsilon = 0`` the estimate falls back to
    the least-norm interpolant when the iterate is not exactly feasible.
    """
    theta = np.asarray(theta, dtype=np.complex128)
    r = np.asarray(r, dtype=np.complex128)
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    scale = float(np.abs(theta).max()) if theta.size else 0.0
    if scale == 0.0:
        raise ValueError("sensing matrix must be nonzero")

    k = theta.conj().T @ theta
    b = theta.conj().T @ r
    n = b.shape[0]
    b_inf = float(np.abs(b).max())

    if epsilon >= b_inf:
        # zero is feasible and l1-minimal
        return SparseEstimate(
            s_hat=np.zeros(n, dtype=np.complex128),
            iterations=0,
            residual_inf=b_inf,
            objective=0.0,
            converged=True,
        )

    op_norm = float(np.linalg.eigvalsh(0.5 * (k + k.conj().T))[-1])
    step = 0.95 / max(op_norm, 1e-300)
    sigma = tau = step

    s = np.zeros(n, dtype=np.complex128)
    s_bar = s.copy()
    z = np.zeros(n, dtype=np.complex128)
    ref = max(b_inf, 1.0)
    surrogate = np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        y = z + sigma * (k @ s_bar)
        z_new = y - sigma * (b + _clip_modulus(y / sigma - b, epsilon))
        s_new = _soft_threshold(s - tau * (k @ z_new), tau)
        s_bar = 2.0 * s_new - s
        primal = np.linalg.norm((s - s_new) / tau - k @ (z - z_new))
        dual = np.linalg.norm((z - z_new) / sigma - k @ (s - s_new))
        surrogate = float((primal + dual) / ref)
        s, z = s_new, z_new
        if surrogate < tol:
            break
    converged = surrogate < tol

    s = _polish_feasibility(theta, r, k, b, s, epsilon)
    residual = float(np.abs(b - k @ s).max())
    estimate = SparseEstimate(
        s_hat=s,
        iterations=iterations,
        residual_inf=residual,
        objective=float(np.abs(s).sum()),
        converged=converged,
    )
    if not converged:
        raise RecoveryConvergenceError(
            f"dantzig selector: residual surrogate {surrogate:.3e} above {tol:g} "
            f"after {max_iterations} iterations",
            estimate=estimate,
        )
    return estimate


def _polish_feasibility(theta, r, k, b, s, epsilon):
    """Blend toward the least-norm interpolant until the constraint holds.

    ``s+ = pinv(Theta) r`` zeroes the correlated residual exactly, and the
    constraint function is convex along the segment, so a bisection finds
    the smallest blend that restores feasibility.
    """
    slack = epsilon * (1.0 + 5e-7) + 1e-12 * max(float(np.abs(b).max()), 1.0)

    def violation(candidate):
        return float(np.abs(b - k @ candidate).max())

    if violation(s) <= slack:
        return s
    anchor = np.linalg.pinv(theta) @ r
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if violation((1.0 - mid) * s + mid * anchor) <= slack:
            hi = mid
        else:
            lo = mid
    return (1.0 - hi) * s + hi * anchor


def matched_filter_estimate(templates: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Normalized correlation statistic |t_n^H y| / ||t_n|| per grid index."""
    templates = np.asarray(templates, dtype=np.complex128)
    samples = np.asarray(samples, dtype=np.complex128)
    norms = np.linalg.norm(templates, axis=0)
    if np.any(norms <= 0.0):
        raise ValueError("zero template column")
    return np.abs(templates.conj().T @ samples) / norms


@dataclass(frozen=True)
class DetectionOutcome:
    detected: np.ndarray
    threshold: float
    mode: str

    def flags(self, true_indices) -> tuple:
        """(all_found, any_false) against the true support."""
        detected = set(int(i) for i in self.detected)
        truth = set(int(i) for i in true_indices)
        return truth.issubset(detected), bool(detected - truth)


def threshold_detect(values: np.ndarray, threshold: float, mode: str = "relative") -> DetectionOutcome:
    """Indices whose magnitude reaches the threshold (ties included).

    ``relative`` mode thresholds at ``threshold * max |values|``; the
    detected set is then invariant to a global rescaling of the input.
    Zero-magnitude entries are never detected.
    """
    if threshold < 0.0:
        raise ValueError("threshold must be >= 0")
    if mode not in ("relative", "absolute"):
        raise ValueError(f"mode must be 'relative' or 'absolute', got {mode!r}")
    mag = np.abs(np.asarray(values))
    cut = threshold * mag.max() if mode == "relative" else threshold
    detected = np.nonzero((mag >= cut) & (mag > 0.0))[0]
    return DetectionOutcome(detected=detected, threshold=threshold, mode=mode)


@dataclass(frozen=True)
class RocPoint:
    pfa: float
    pd: float
    threshold: float


def roc_curve(outcomes) -> list:
    """Per-threshold (PFA, PD) from trial flags, sorted by PFA.

    ``outcomes`` maps threshold -> sequence of per-trial
    ``(all_found, any_false)`` flags. PD is the fraction of trials with all
    targets found; PFA the fraction with any false target. The points are
    per-threshold set statistics, not a classical ROC, so PD is not forced
    to be monotone in PFA.
    """
    if not outcomes:
        raise ValueError("empty trial set")
    points = []
    for threshold, flags in outcomes.items():
        flags = list(flags)
        if not flags:
            raise ValueError(f"no trials recorded for threshold {threshold!r}")
        pd = sum(1 for found, _ in flags if found) / len(flags)
        pfa = sum(1 for _, false in flags if false) / len(flags)
        points.append(RocPoint(pfa=pfa, pd=pd, threshold=float(threshold)))
    points.sort(key=lambda p: (p.pfa, -p.threshold))
    return points


def pd_at_pfa(points, pfa_cap: float) -> float:
    """Best PD among operating points with PFA at most the cap."""
    admissible = [p.pd for p in points if p.pfa <= pfa_cap]
    return max(admissible) if admissible else 0.0


def default_threshold_sweep(count: int = 30, lo: float = 0.02, hi: float = 1.0) -> np.ndarray:
    """Log-spaced relative thresholds for hard detection."""
    return np.geomspace(lo, hi, count)
