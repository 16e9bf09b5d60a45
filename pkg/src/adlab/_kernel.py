"""Compiled adaptive stepper for the built-in families.

The propagator advances with a fourth-order commutator-free exponential
(Magnus-type) step built from two closed-form 2x2 unitaries evaluated at
the Gauss-Legendre nodes of each step.  The local error is estimated by
comparing one full step against two half steps (Richardson, order 4), and
a PI controller drives the step size.  The accepted update is the half-step
composition, so every factor is exactly unitary.

Only the three built-in real-symmetric families are compiled here; the
generic Python path in :mod:`adlab.propagate` implements the identical
algorithm for arbitrary Hermitian generators.
"""

import math

import numpy as np
from numba import njit

# Gauss-Legendre nodes and the fourth-order commutator-free weights
C1 = 0.5 - math.sqrt(3.0) / 6.0
C2 = 0.5 + math.sqrt(3.0) / 6.0
PW = 0.25 + math.sqrt(3.0) / 6.0
QW = 0.25 - math.sqrt(3.0) / 6.0

STATUS_OK = 0
STATUS_UNDERFLOW = 1

STEP_FLOOR = 1e-12
SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0


@njit(cache=True)
def _entries(kind, delta, t):
    if kind == 0:  # zener
        return 0.5 * t, 0.5 * delta, -0.5 * t
    elif kind == 1:  # constant_gap
        r = math.sqrt(t * t + delta * delta)
        return 0.5 * delta / r, 0.5 * t / r, -0.5 * delta / r
    else:  # tanh_model
        th = math.tanh(t)
        return 0.5 * th, 0.5 * delta, -0.5 * th


@njit(cache=True)
def _exp_rs(a, b, d, s):
    """exp(-1j*s*[[a, b], [b, d]]) for real a, b, d (closed form)."""
    m = 0.5 * (a + d)
    z = 0.5 * (a - d)
    r = math.sqrt(z * z + b * b)
    th = s * r
    cth = math.cos(th)
    if abs(th) > 1e-6:
        sn = math.sin(th) / r
    else:
        sn = s * (1.0 - th * th / 6.0)
    ph = complex(math.cos(s * m), -math.sin(s * m))
    u00 = ph * complex(cth, -sn * z)
    u01 = ph * complex(0.0, -sn * b)
    u11 = ph * complex(cth, sn * z)
    return u00, u01, u01, u11


@njit(cache=True)
def _mul(a00, a01, a10, a11, b00, b01, b10, b11):
    return (
        a00 * b00 + a01 * b10,
        a00 * b01 + a01 * b11,
        a10 * b00 + a11 * b10,
        a10 * b01 + a11 * b11,
    )


@njit(cache=True)
def _cf4_step(kind, delta, eps, t, h):
    a1, b1, d1 = _entries(kind, delta, t + C1 * h)
    a2, b2, d2 = _entries(kind, delta, t + C2 * h)
    s = h / eps
    r00, r01, r10, r11 = _exp_rs(
        PW * a1 + QW * a2, PW * b1 + QW * b2, PW * d1 + QW * d2, s
    )
    l00, l01, l10, l11 = _exp_rs(
        QW * a1 + PW * a2, QW * b1 + PW * b2, QW * d1 + PW * d2, s
    )
    return _mul(l00, l01, l10, l11, r00, r01, r10, r11)


@njit(cache=True)
def evolve_adaptive(kind, delta, eps, t0, samples, tol_per_time, h_init, out_u):
    """Integrate from ``t0`` through every time in ``samples`` (monotone).

    ``out_u[i]`` receives the propagator from ``t0`` to ``samples[i]``.
    Returns ``(status, accepted, rejected, max_unitarity_defect)``.
    """
    u00 = 1.0 + 0.0j
    u01 = 0.0j
    u10 = 0.0j
    u11 = 1.0 + 0.0j

    t = t0
    n = samples.shape[0]
    dirn = 1.0 if samples[n - 1] >= t0 else -1.0
    h_ctrl = abs(h_init)
    accepted = 0
    rejected = 0
    max_defect = 0.0
    ratio_prev = 1.0

    for si in range(n):
        target = samples[si]
        while (target - t) * dirn > 1e-14 * (1.0 + abs(t)):
            ha = h_ctrl
            remaining = abs(target - t)
            clipped = ha >= remaining
            if clipped:
                ha = remaining
            h = dirn * ha

            f00, f01, f10, f11 = _cf4_step(kind, delta, eps, t, h)
            g00, g01, g10, g11 = _cf4_step(kind, delta, eps, t, 0.5 * h)
            k00, k01, k10, k11 = _cf4_step(kind, delta, eps, t + 0.5 * h, 0.5 * h)
            h00, h01v, h10v, h11 = _mul(
                k00, k01, k10, k11, g00, g01, g10, g11
            )

            e0 = f00 - h00
            e1 = f01 - h01v
            e2 = f10 - h10v
            e3 = f11 - h11
            err = (
                math.sqrt(
                    e0.real * e0.real
                    + e0.imag * e0.imag
                    + e1.real * e1.real
                    + e1.imag * e1.imag
                    + e2.real * e2.real
                    + e2.imag * e2.imag
                    + e3.real * e3.real
                    + e3.imag * e3.imag
                )
                / 15.0
            )
            tol_step = tol_per_time * ha
            if err <= tol_step:
                u00, u01, u10, u11 = _mul(
                    h00, h01v, h10v, h11, u00, u01, u10, u11
                )
                t = t + h
                accepted += 1
                ratio = tol_step / max(err, 1e-300)
                fac = SAFETY * ratio**0.14 * ratio_prev**-0.08
                if fac < FAC_MIN:
                    fac = FAC_MIN
                elif fac > FAC_MAX:
                    fac = FAC_MAX
                ratio_prev = ratio
                if not clipped or fac < 1.0:
                    h_ctrl = ha * fac
                else:
                    h_ctrl = h_ctrl * fac
            else:
                rejected += 1
                ratio = tol_step / err
                fac = SAFETY * ratio**0.2
                if fac < FAC_MIN:
                    fac = FAC_MIN
                h_ctrl = ha * fac
                if h_ctrl < STEP_FLOOR:
                    return STATUS_UNDERFLOW, accepted, rejected, max_defect

        out_u[si, 0, 0] = u00
        out_u[si, 0, 1] = u01
        out_u[si, 1, 0] = u10
        out_u[si, 1, 1] = u11
        # unitarity defect (Frobenius) of the stored propagator
        w00 = (u00.conjugate() * u00 + u10.conjugate() * u10) - 1.0
        w01 = u00.conjugate() * u01 + u10.conjugate() * u11
        w11 = (u01.conjugate() * u01 + u11.conjugate() * u11) - 1.0
        defect = math.sqrt(
            w00.real * w00.real
            + w00.imag * w00.imag
            + 2.0 * (w01.real * w01.real + w01.imag * w01.imag)
            + w11.real * w11.real
            + w11.imag * w11.imag
        )
        if defect > max_defect:
            max_defect = defect

    return STATUS_OK, accepted, rejected, max_defect
