"""Closed-form and complex-analytic transition predictions.

The decay rate of an avoided crossing is ``gamma = |Im oint rho(z) dz| / 2``
along a loop based at the origin that encircles the complex crossing point
``z0`` (the upper-half-plane zero of the analytic gap).  The loop here is a
keyhole: out along the real axis to ``Re z0``, up to the circle of radius
``min(contour_radius, Im z0 / 2)`` around ``z0``, once around, and back.
Because the gap has a square-root branch point at ``z0``, the return legs
carry the second sheet (tracked by nearest-value continuation node to
node), which is what makes the loop integral nonzero.  Quadrature is
composite Gauss-Legendre with an order-doubling error estimate; the result
is invariant under radius changes (checked in the tests).

Also here: the Landau-Zener closed form, the gap-weighted reparametrization
``t(s) = int_0^s rho(u) du`` whose imaginary part at ``z0`` reproduces the
decay rate, exponential-law fitting of measured amplitudes, and the erf
switching function.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BranchDiscontinuity,
    InsufficientData,
    NoConvergence,
    NonPositiveAmplitude,
    ZeroOnRealAxis,
)
from .families import GapFunction, HamiltonianFamily


def lz_amplitude(delta: float, epsilon: float) -> float:
    """``exp(-pi delta^2 / (4 epsilon))``: the exact crossing amplitude."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return math.exp(-math.pi * delta * delta / (4.0 * epsilon))


def erf_switch(x: float) -> float:
    """``(erf(x) + 1) / 2``, the universal transition switching profile."""
    return 0.5 * (math.erf(x) + 1.0)


def find_complex_zero(gap: GapFunction, max_iter: int = 100) -> complex:
    """Newton search for the upper-half-plane zero of the analytic gap.

    Runs on ``rho^2`` when the gap has a square-root branch point (Newton on
    the square root itself stalls there).  Converges the iterate to machine
    precision in ``z``; the residual of ``rho`` at the returned point is then
    limited only by the simple-zero conditioning (~sqrt(machine eps)).
    """
    if gap.has_sqrt_branch and gap.rho_sq is not None:
        f = gap.rho_sq
        fp = gap.d_rho_sq
    else:
        f = gap.rho
        fp = None
    if fp is None:
        h = 1e-7

        def fp(z, _f=f):
            return (_f(z + h) - _f(z - h)) / (2.0 * h)

    z = complex(gap.zero_guess)
    if z.imag <= 0:
        z = z.conjugate()
    converged = False
    for _ in range(max_iter):
        fz = complex(f(z))
        if fz == 0:
            converged = True
            break
        dfz = complex(fp(z))
        if dfz == 0:
            break
        step = fz / dfz
        z = z - step
        if abs(step) <= 1e-15 * (1.0 + abs(z)):
            converged = True
            break
    if not converged:
        raise NoConvergence("gap zero search did not converge")
    if abs(z.imag) < 1e-8:
        raise ZeroOnRealAxis(f"zero at {z} sits on the real axis (gap violated)")
    return z if z.imag > 0 else z.conjugate()


def _gauss_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def keyhole_path(z0: complex, radius: float, panels_line: int = 6, panels_circle: int = 8):
    """Piecewise parametrization of the keyhole loop through the origin.

    Returns a list of ``(center_fn, deriv_fn, a, b, n_panels)`` entries; each
    maps a parameter interval [a, b] to points and velocities along the path.
    """
    x0 = complex(z0.real, 0.0)
    gate = complex(z0.real, z0.imag - radius)
    pieces = []

    def line(p, q):
        return (lambda u: p + (q - p) * u, lambda u: (q - p) + 0 * u)

    if abs(z0.real) > 1e-13:
        f, df = line(0.0 + 0.0j, x0)
        pieces.append((f, df, 0.0, 1.0, panels_line))
    f, df = line(x0, gate)
    pieces.append((f, df, 0.0, 1.0, panels_line))
    # circle: phi from -pi/2 counterclockwise once around
    pieces.append(
        (
            lambda u: z0 + radius * np.exp(1j * (-0.5 * math.pi + 2.0 * math.pi * u)),
            lambda u: radius
            * 2.0
            * math.pi
            * 1j
            * np.exp(1j * (-0.5 * math.pi + 2.0 * math.pi * u)),
            0.0,
            1.0,
            panels_circle,
        )
    )
    f, df = line(gate, x0)
    pieces.append((f, df, 0.0, 1.0, panels_line))
    if abs(z0.real) > 1e-13:
        f, df = line(x0, 0.0 + 0.0j)
        pieces.append((f, df, 0.0, 1.0, panels_line))
    return pieces


def path_nodes(pieces, n_nodes: int):
    """Ordered quadrature nodes ``z_i`` and weights ``w_i`` (dz included)."""
    xg, wg = _gauss_nodes(n_nodes)
    zs, ws = [], []
    for f, df, a, b, n_panels in pieces:
        edges = np.linspace(a, b, n_panels + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            u = mid + half * xg
            zs.append(f(u))
            ws.append(wg * half * df(u))
    return np.concatenate(zs), np.concatenate(ws)


def continue_sqrt(values_sq: np.ndarray, anchor: complex) -> np.ndarray:
    """Continuous square root along an ordered node sequence.

    ``anchor`` is the value at the (conceptual) path start; each node picks
    the sqrt branch closest to its predecessor.  Raises
    ``BranchDiscontinuity`` when the two candidates are indistinguishable at
    the hop scale (nodes too sparse or a branch point on the path).
    """
    out = np.empty_like(values_sq)
    prev = complex(anchor)
    for i, v in enumerate(values_sq):
        c = cmath.sqrt(v)
        d_plus = abs(c - prev)
        d_minus = abs(-c - prev)
        pick = c if d_plus <= d_minus else -c
        lo, hi = min(d_plus, d_minus), max(d_plus, d_minus)
        if lo > 1e-6 and lo > 0.8 * hi:
            raise BranchDiscontinuity(
                f"untrackable branch hop at node {i}: candidates {c}, {-c} vs {prev}"
            )
        out[i] = pick
        prev = pick
    return out


def _loop_integral(gap: GapFunction, z0: complex, radius: float, n_nodes: int):
    pieces = keyhole_path(z0, radius)
    zs, ws = path_nodes(pieces, n_nodes)
    rho_sq = gap.rho_sq if gap.rho_sq is not None else (lambda z: gap.rho(z) ** 2)
    vals_sq = np.array([rho_sq(z) for z in zs])
    anchor = complex(gap.rho(0.0))
    vals = continue_sqrt(vals_sq, anchor)
    return complex(np.sum(vals * ws))


@dataclass(frozen=True)
class DecayRatePrediction:
    gamma: float
    z0: complex
    contour_radius: float
    quadrature_error_estimate: float
    loop_integral: complex


def decay_rate(
    gap: GapFunction,
    contour_radius: Optional[float] = None,
    z0: Optional[complex] = None,
    n_nodes: int = 24,
) -> DecayRatePrediction:
    """``gamma = |Im oint rho| / 2`` around the complex crossing point."""
    if z0 is None:
        z0 = find_complex_zero(gap)
    if contour_radius is None:
        contour_radius = 0.25 * z0.imag
    radius = min(contour_radius, 0.5 * z0.imag)
    coarse = _loop_integral(gap, z0, radius, n_nodes)
    fine = _loop_integral(gap, z0, radius, 2 * n_nodes)
    est = abs(fine - coarse)
    return DecayRatePrediction(
        gamma=0.5 * abs(fine.imag),
        z0=z0,
        contour_radius=radius,
        quadrature_error_estimate=est,
        loop_integral=fine,
    )


def _segment_panels(singular_end: bool, n_uniform: int = 8, n_geo: int = 44):
    """Panel edges in [0, 1]; geometric refinement toward 1 if singular."""
    if not singular_end:
        return np.linspace(0.0, 1.0, n_uniform + 1)
    edges = [0.0]
    for k in range(1, n_geo):
        edges.append(1.0 - 0.5**k)
    edges.append(1.0)
    return np.asarray(edges)


def natural_time(family: HamiltonianFamily, s: complex, n_nodes: int = 16) -> complex:
    """``t(s) = int_0^s rho(u) du`` along the straight segment from 0.

    The gap is branch-continued from its positive real value at the origin;
    if the endpoint is itself a gap zero (integrable sqrt behavior), the
    panels refine geometrically toward it.  The quadrature is checked by
    order doubling.
    """
    gap = family.gap
    rho_sq = gap.rho_sq if gap.rho_sq is not None else (lambda z: gap.rho(z) ** 2)
    s = complex(s)
    if s == 0:
        return 0.0 + 0.0j
    singular = abs(complex(rho_sq(s))) < 1e-8
    edges = _segment_panels(singular)

    def integrate(n):
        xg, wg = _gauss_nodes(n)
        zs, ws = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            u = mid + half * xg
            zs.append(u * s)
            ws.append(wg * half * s)
        zs = np.concatenate(zs)
        ws = np.concatenate(ws)
        vals_sq = np.array([rho_sq(z) for z in zs])
        vals = continue_sqrt(vals_sq, complex(gap.rho(0.0)))
        return complex(np.sum(vals * ws))

    coarse = integrate(n_nodes)
    fine = integrate(2 * n_nodes)
    if abs(fine - coarse) > 1e-8 * max(1.0, abs(fine)):
        raise BranchDiscontinuity(
            f"natural-time quadrature did not converge ({abs(fine - coarse):.2e})"
        )
    return fine


@dataclass(frozen=True)
class ExponentialFit:
    """Result of fitting ``A(eps) = G exp(-gamma/eps)``."""

    G: float
    gamma: float
    r_squared: float
    epsilons_used: tuple
    dropped: tuple = ()


AMPLITUDE_FLOOR = 1e-10


def fit_exponential(
    measurements: Sequence,
    floor: float = AMPLITUDE_FLOOR,
    drop_drifting_largest: bool = True,
) -> ExponentialFit:
    """Linear least squares of ``ln A`` against ``1/eps``.

    Points with amplitude below ``floor`` (the double-precision trust floor
    of the propagator) are discarded.  If at least five points remain and
    the log-residuals show prefactor drift (> 2%), the largest eps is
    dropped once and the fit repeated: the law is asymptotic in eps -> 0.
    """
    pts = [(float(e), float(a)) for e, a in measurements]
    for _, a in pts:
        if a <= 0:
            raise NonPositiveAmplitude("amplitudes must be strictly positive")
    pts = [(e, a) for e, a in pts if a >= floor]
    if len(pts) < 4:
        raise InsufficientData("need at least 4 usable (epsilon, amplitude) points")

    dropped = ()

    def run(points):
        x = np.array([1.0 / e for e, _ in points])
        y = np.array([math.log(a) for _, a in points])
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        return slope, intercept, r2, float(np.max(np.abs(resid)))

    slope, intercept, r2, max_resid = run(pts)
    if drop_drifting_largest and len(pts) >= 5 and max_resid > 0.02:
        emax = max(e for e, _ in pts)
        dropped = (emax,)
        pts = [(e, a) for e, a in pts if e != emax]
        slope, intercept, r2, max_resid = run(pts)

    return ExponentialFit(
        G=math.exp(intercept),
        gamma=-slope,
        r_squared=r2,
        epsilons_used=tuple(e for e, _ in pts),
        dropped=dropped,
    )
