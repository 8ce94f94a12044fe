"""Complex linear-algebra and special-function kernels.

Everything in here is a pure function of its inputs: Hermitian
eigendecomposition, projection onto the positive-semidefinite cone, the
first-order Bessel function J1 and the disk-average phase factor built from
it, plus a small deterministic random-source wrapper used for reproducible
Monte-Carlo work.

Matrices are plain ``numpy`` arrays of ``complex128`` (interleaved
real/imag double pairs in memory). Tolerances are relative to the input
Frobenius norm unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

SPEED_OF_LIGHT = 299792458.0

HERMITIAN_RTOL = 1e-12


def require_matrix(a: np.ndarray, name: str = "A") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a.view(np.float64) if np.iscomplexobj(a) else a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a.astype(np.complex128, copy=False)


def is_hermitian(a: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    """True when ``a`` is square and max|A - A^H| <= rtol * max|A|."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = np.abs(a).max()
    if scale == 0.0:
        return True
    return np.abs(a - a.conj().T).max() <= rtol * scale


def require_hermitian(a: np.ndarray, name: str = "A", rtol: float = 1e-10) -> np.ndarray:
    a = require_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not is_hermitian(a, rtol=rtol):
        raise ValueError(f"{name} is not Hermitian within tolerance {rtol:g}")
    return a


@dataclass(frozen=True)
class HermitianEig:
    """Eigendecomposition of a Hermitian matrix.

    ``eigenvalues`` are real and sorted descending; ``eigenvectors`` holds
    the matching orthonormal eigenvectors as columns, so
    ``V @ diag(w) @ V^H`` reconstructs the input.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def hermitian_eig(a: np.ndarray) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Raises ``ValueError`` for non-square or non-Hermitian input. The input
    is symmetrized (``(A + A^H)/2``) before factorization so that inputs
    that are Hermitian only up to roundoff do not leak asymmetry into the
    eigenvectors.
    """
    a = require_hermitian(a)
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    order = np.argsort(w)[::-1]
    return HermitianEig(eigenvalues=w[order], eigenvectors=v[:, order])


def psd_project(a: np.ndarray) -> np.ndarray:
    """Project a Hermitian matrix onto the PSD cone (Frobenius-nearest).

    Negative eigenvalues are clamped to zero: ``V diag(max(w, 0)) V^H``.
    A matrix that is already PSD is returned unchanged up to roundoff.
    """
    eig = hermitian_eig(a)
    if eig.eigenvalues[-1] >= 0.0:
        return require_hermitian(a)
    w = np.maximum(eig.eigenvalues, 0.0)
    v = eig.eigenvectors
    out = (v * w) @ v.conj().T
    return 0.5 * (out + out.conj().T)


def bessel_j1(x):
    """First-order Bessel function of the first kind, J1(x).

    Total function of a finite real argument (scalar or array), odd in x.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("bessel_j1 requires finite arguments")
    out = special.j1(x)
    return float(out) if out.ndim == 0 else out


def varsigma(x, disk_radius: float, carrier: float, wave_speed: float = SPEED_OF_LIGHT):
    """Disk-average phase factor 2*J1(u)/u with u = x*pi*r*f/c.

    This is the expected value of ``exp(j*u*h)`` when ``h`` has the
    half-circle density on (-1, 1), i.e. the attenuation of cross terms
    after averaging over transmit/receive nodes placed uniformly on a disk
    of radius ``disk_radius``. Continuous at x = 0 with value 1.
    """
    if disk_radius <= 0.0:
        raise ValueError("disk_radius must be positive")
    if carrier <= 0.0:
        raise ValueError("carrier must be positive")
    if wave_speed <= 0.0:
        raise ValueError("wave_speed must be positive")
    u = np.asarray(x, dtype=np.float64) * (np.pi * disk_radius * carrier / wave_speed)
    small = np.abs(u) < 1e-6
    u_safe = np.where(small, 1.0, u)
    # series 1 - u^2/8 + u^4/192 near zero; exact ratio elsewhere
    out = np.where(small, 1.0 - u * u / 8.0, 2.0 * special.j1(u_safe) / u_safe)
    return float(out) if out.ndim == 0 else out


def _fold_key(key) -> int:
    """Map a derivation key to a stable 64-bit integer (platform independent)."""
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        import hashlib

        return int.from_bytes(hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest(), "little")
    raise TypeError(f"unsupported RNG derivation key type: {type(key).__name__}")


@dataclass(frozen=True)
class RandomSource:
    """Deterministic, derivable random source.

    The same ``(seed, path)`` produces an identical stream on every run and
    platform (PCG64 seeded through ``numpy.random.SeedSequence``).
    ``derive`` appends keys to the path, giving statistically independent
    substreams for e.g. per-node, per-pulse or per-trial randomness.
    """

    seed: int
    path: tuple = field(default_factory=tuple)
    algorithm: str = "pcg64"

    def __post_init__(self):
        if self.algorithm != "pcg64":
            raise ValueError(f"unknown RNG algorithm: {self.algorithm!r}")
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        object.__setattr__(self, "path", tuple(_fold_key(k) for k in self.path))

    def derive(self, *keys) -> "RandomSource":
        return RandomSource(self.seed, self.path + keys, self.algorithm)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence([self.seed, *self.path])
        return np.random.Generator(np.random.PCG64(seq))

    def fingerprint(self) -> int:
        """Stable 64-bit digest of (seed, path), e.g. for logging trial seeds."""
        state = np.random.SeedSequence([self.seed, *self.path]).generate_state(2, np.uint32)
        return int(state[0]) | (int(state[1]) << 32)


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian samples with E|z|^2 = variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
