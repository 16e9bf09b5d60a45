"""Closed-form complex 2x2 linear algebra.

Every model in this package is a two-level system, so eigendecompositions,
spectral projectors and unitary exponentials are computed from closed
formulas (Pauli decomposition) instead of iterative solvers.  This keeps
round-off at the few-ulp level, which is what makes transition amplitudes
of order 1e-10 trustworthy downstream.

Conventions
-----------
* Matrices are 2x2 ``complex128`` ndarrays.
* A Hermitian matrix is split as ``m = mean*I + x*sx + y*sy + z*sz`` with
  ``x = Re m01``, ``y = -Im m01``, ``z = (m00 - m11)/2``.
* Eigenvalues are ordered ascending; "level 1 / level 2" always maps to
  (low, high) throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrum, NonHermitianInput

HERMITICITY_TOL = 1e-14
DEGENERACY_TOL = 1e-12

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def hermiticity_defect(m) -> float:
    """Max-entry distance between ``m`` and its conjugate transpose."""
    m = np.asarray(m, dtype=complex)
    return float(np.max(np.abs(m - m.conj().T)))


def pauli_split(m):
    """Return ``(mean, x, y, z)`` of the Pauli decomposition of Hermitian ``m``."""
    m = np.asarray(m, dtype=complex)
    mean = 0.5 * (m[0, 0].real + m[1, 1].real)
    z = 0.5 * (m[0, 0].real - m[1, 1].real)
    b = 0.5 * (m[0, 1] + np.conj(m[1, 0]))
    return mean, b.real, -b.imag, z


@dataclass(frozen=True)
class SpectralFrame:
    """Eigenpairs and spectral projectors of a Hermitian 2x2 matrix.

    ``p_low``/``p_high`` are the rank-one orthogonal projectors onto the
    eigenvectors ``v_low``/``v_high``; ``gap = e_high - e_low >= 0``.
    ``degenerate`` flags gaps below ``DEGENERACY_TOL`` (the projectors are
    then an arbitrary but deterministic completion, not spectral data).
    """

    e_low: float
    e_high: float
    p_low: np.ndarray
    p_high: np.ndarray
    v_low: np.ndarray
    v_high: np.ndarray
    gap: float
    degenerate: bool = False

    def reconstruct(self) -> np.ndarray:
        return self.e_low * self.p_low + self.e_high * self.p_high


def _fix_vector_phase(v):
    """Deterministic gauge: largest-modulus component made real positive."""
    i = int(np.argmax(np.abs(v)))
    a = v[i]
    if abs(a) == 0.0:
        return v
    return v * (np.conj(a) / abs(a))


def eigen_decompose(m, hermiticity_tol: float = HERMITICITY_TOL) -> SpectralFrame:
    """Closed-form spectral decomposition of a Hermitian 2x2 matrix.

    Raises
    ------
    NonHermitianInput
        If ``m`` deviates from its adjoint by more than ``hermiticity_tol``
        (absolute, entrywise).
    """
    m = np.asarray(m, dtype=complex)
    defect = hermiticity_defect(m)
    scale = max(1.0, float(np.max(np.abs(m))))
    if defect > hermiticity_tol * scale:
        raise NonHermitianInput(f"hermiticity defect {defect:.3e} exceeds tolerance")

    mean, x, y, z = pauli_split(m)
    r = math.sqrt(x * x + y * y + z * z)
    gap = 2.0 * r
    degenerate = gap < DEGENERACY_TOL
    if degenerate:
        nx, ny, nz = 0.0, 0.0, 1.0
    else:
        nx, ny, nz = x / r, y / r, z / r

    n_sigma = nx * SIGMA_X + ny * SIGMA_Y + nz * SIGMA_Z
    p_high = 0.5 * (IDENTITY + n_sigma)
    p_low = 0.5 * (IDENTITY - n_sigma)

    v_high = _fix_vector_phase(_projector_range(p_high))
    v_low = _fix_vector_phase(_projector_range(p_low))

    return SpectralFrame(
        e_low=mean - r,
        e_high=mean + r,
        p_low=p_low,
        p_high=p_high,
        v_low=v_low,
        v_high=v_high,
        gap=gap,
        degenerate=degenerate,
    )


def _projector_range(p):
    """Unit vector spanning the range of a rank-one projector."""
    c = int(np.argmax([abs(p[0, 0]), abs(p[1, 1])]))
    v = p[:, c].copy()
    nrm = np.linalg.norm(v)
    if nrm == 0.0:  # pragma: no cover - cannot happen for rank-one input
        v = np.array([1.0, 0.0], dtype=complex)
        nrm = 1.0
    return v / nrm


def commutator(a, b) -> np.ndarray:
    """``a @ b - b @ a``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return a @ b - b @ a


def unitary_step(generator, scale: float) -> np.ndarray:
    """Exact ``exp(-1j * scale * generator)`` for Hermitian ``generator``.

    Uses the closed-form 2x2 exponential (Pauli/Rodrigues form), never a
    truncated series, so the result is unitary to a few ulp.
    """
    mean, x, y, z = pauli_split(generator)
    r = math.sqrt(x * x + y * y + z * z)
    theta = scale * r
    c = math.cos(theta)
    # sin(theta)/r, continued through r -> 0
    if abs(theta) > 1e-6:
        sn = math.sin(theta) / r
    else:
        sn = scale * (1.0 - theta * theta / 6.0)
    phase = complex(math.cos(scale * mean), -math.sin(scale * mean))
    b = complex(x, -y)
    u = np.empty((2, 2), dtype=complex)
    u[0, 0] = phase * (c - 1j * sn * z)
    u[0, 1] = phase * (-1j * sn * b)
    u[1, 0] = phase * (-1j * sn * np.conj(b))
    u[1, 1] = phase * (c + 1j * sn * z)
    return u


def phase_align(frame_prev: SpectralFrame, frame_next: SpectralFrame) -> SpectralFrame:
    """Re-phase the eigenvectors of ``frame_next`` against ``frame_prev``.

    Successive overlaps ``<v_prev, v_next>`` are rotated to be real and
    positive, the discrete version of parallel transport (vanishing
    ``<v, dv>``); projectors are untouched (gauge invariant).
    """
    if frame_prev.degenerate or frame_next.degenerate:
        raise DegenerateSpectrum("phase alignment needs non-degenerate frames")

    def aligned(v_prev, v_next):
        ov = np.vdot(v_prev, v_next)
        if abs(ov) < 1e-12:
            # orthogonal frames: nothing to align against, keep as is
            return v_next
        return v_next * (np.conj(ov) / abs(ov))

    return SpectralFrame(
        e_low=frame_next.e_low,
        e_high=frame_next.e_high,
        p_low=frame_next.p_low,
        p_high=frame_next.p_high,
        v_low=aligned(frame_prev.v_low, frame_next.v_low),
        v_high=aligned(frame_prev.v_high, frame_next.v_high),
        gap=frame_next.gap,
        degenerate=frame_next.degenerate,
    )


def frobenius_norm(m) -> float:
    return float(np.linalg.norm(np.asarray(m, dtype=complex)))


def spectral_norm(m) -> float:
    """Largest singular value of a 2x2 matrix, in closed form."""
    m = np.asarray(m, dtype=complex)
    f2 = float(np.sum(np.abs(m) ** 2))
    det = abs(np.linalg.det(m)) ** 2
    disc = max(f2 * f2 - 4.0 * det, 0.0)
    return math.sqrt(0.5 * (f2 + math.sqrt(disc)))


def unitarity_defect(u) -> float:
    """Spectral norm of ``u^dagger u - I``."""
    u = np.asarray(u, dtype=complex)
    return spectral_norm(u.conj().T @ u - IDENTITY)
