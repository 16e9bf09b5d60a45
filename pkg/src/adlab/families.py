"""Analytic two-level Hamiltonian families.

Each family is a map ``z -> H(z)`` (2x2, Hermitian for real ``z``) bundled
with the complex-analytic metadata the asymptotic machinery needs: the
analytic gap function ``rho`` with ``rho(t) = e_high(t) - e_low(t)`` on the
real axis, a seed for the complex crossing point, the analyticity strip
half-width, the decay exponent toward ``t -> +-inf`` and, when they exist,
the limiting matrices.  Families declare this metadata themselves instead
of having it inferred downstream.

Built-in families (all real symmetric, avoided-crossing parameter
``delta > 0``):

``zener``         H(t) = [[t, d], [d, -t]] / 2, gap sqrt(t^2+d^2), no limits
``constant_gap``  the same crossing rescaled so both eigenvalues are +-1/2
                  for every real t; singular at t = +-1j*d
``tanh_model``    H(x) = [[tanh x, d], [d, -tanh x]] / 2, exponentially
                  approaching limits; the electronic model for scattering
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameter

# kernel ids for the compiled propagator fast path
KIND_ZENER = 0
KIND_CONSTANT_GAP = 1
KIND_TANH = 2


@dataclass(frozen=True)
class GapFunction:
    """Analytic continuation of the eigenvalue gap.

    ``rho`` is real positive on the real axis.  When the gap has square-root
    branch points (``has_sqrt_branch``), root searches should run on the
    single-valued ``rho_sq`` instead; ``d_rho_sq`` is its analytic derivative
    when available.
    """

    rho: Callable[[complex], complex]
    zero_guess: complex
    rho_sq: Optional[Callable[[complex], complex]] = None
    d_rho_sq: Optional[Callable[[complex], complex]] = None
    has_sqrt_branch: bool = True


@dataclass(frozen=True)
class HamiltonianFamily:
    """An analytic family ``z -> H(z)`` with its asymptotic metadata."""

    name: str
    delta: float
    evaluate: Callable[[complex], np.ndarray]
    gap: GapFunction
    strip_mu: float
    decay_nu: Optional[float] = None
    limits: Optional[tuple] = None  # (H(-inf), H(+inf))
    kind: Optional[int] = None  # compiled-kernel id, None -> generic path
    d_evaluate: Optional[Callable[[complex], np.ndarray]] = None
    d2_evaluate: Optional[Callable[[complex], np.ndarray]] = None
    params: tuple = field(default=())

    def entries(self, t):
        """(h00, h01, h11) of ``evaluate(t)`` as scalars."""
        m = self.evaluate(t)
        return m[0, 0], m[0, 1], m[1, 1]


def zener(delta: float) -> HamiltonianFamily:
    """Linear crossing with constant coupling; gap ``sqrt(t^2 + delta^2)``."""
    if delta <= 0:
        raise InvalidParameter("zener requires delta > 0")
    d = float(delta)

    def evaluate(z):
        return 0.5 * np.array([[z, d], [d, -z]], dtype=complex)

    def d_evaluate(z):
        return 0.5 * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

    def d2_evaluate(z):
        return np.zeros((2, 2), dtype=complex)

    gap = GapFunction(
        rho=lambda z: np.sqrt(z * z + d * d + 0j),
        zero_guess=1j * d,
        rho_sq=lambda z: z * z + d * d,
        d_rho_sq=lambda z: 2.0 * z,
        has_sqrt_branch=True,
    )
    return HamiltonianFamily(
        name="zener",
        delta=d,
        evaluate=evaluate,
        gap=gap,
        strip_mu=math.inf,
        decay_nu=None,
        limits=None,
        kind=KIND_ZENER,
        d_evaluate=d_evaluate,
        d2_evaluate=d2_evaluate,
        params=(d,),
    )


def constant_gap(delta: float) -> HamiltonianFamily:
    """The crossing rescaled to eigenvalues +-1/2 for all real t.

    ``H(t) = [[d, t], [t, -d]] / (2 sqrt(t^2 + d^2))``; the analytic gap is
    identically 1 and the transition mechanism lives in the singularities of
    ``H`` itself at ``t = +-1j*d`` (no gap zeros, so root searches do not
    apply to this family).  The diagonal tail decays like ``d/(2|t|)``, so
    the declared decay exponent is 1.
    """
    if delta <= 0:
        raise InvalidParameter("constant_gap requires delta > 0")
    d = float(delta)

    def evaluate(z):
        r = np.sqrt(z * z + d * d + 0j)
        return (0.5 / r) * np.array([[d, z], [z, -d]], dtype=complex)

    def d_evaluate(z):
        r2 = z * z + d * d
        r = np.sqrt(r2 + 0j)
        fp = -z / (r2 * r)
        return 0.5 * fp * np.array([[d, z], [z, -d]], dtype=complex) + (
            0.5 / r
        ) * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)

    def d2_evaluate(z):
        r2 = z * z + d * d
        r = np.sqrt(r2 + 0j)
        fp = -z / (r2 * r)
        fpp = (2.0 * z * z - d * d) / (r2 * r2 * r)
        base = np.array([[d, z], [z, -d]], dtype=complex)
        off = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        return 0.5 * fpp * base + fp * off

    h_plus = 0.5 * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    gap = GapFunction(
        rho=lambda z: 1.0 + 0.0j,
        zero_guess=1j * d,  # singularity seed, not a root
        rho_sq=lambda z: 1.0 + 0.0j,
        d_rho_sq=lambda z: 0.0j,
        has_sqrt_branch=False,
    )
    return HamiltonianFamily(
        name="constant_gap",
        delta=d,
        evaluate=evaluate,
        gap=gap,
        strip_mu=0.99 * d,  # singular at +-1j*d
        decay_nu=1.0,
        limits=(-h_plus, h_plus),
        kind=KIND_CONSTANT_GAP,
        d_evaluate=d_evaluate,
        d2_evaluate=d2_evaluate,
        params=(d,),
    )


def tanh_model(delta: float) -> HamiltonianFamily:
    """Smooth avoided crossing with exponential approach to its limits.

    ``h(x) = [[tanh x, d], [d, -tanh x]] / 2``.  The gap
    ``sqrt(tanh^2 x + d^2)`` behaves like ``sqrt(x^2 + d^2)`` near the
    crossing; the complex crossing point solves ``tanh z = 1j*d``, i.e.
    ``z0 = 1j*arctan(d)``.  Poles of tanh bound the strip at pi/2.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidParameter("tanh_model requires 0 < delta < 1")
    d = float(delta)

    def evaluate(z):
        th = np.tanh(z)
        return 0.5 * np.array([[th, d], [d, -th]], dtype=complex)

    def d_evaluate(z):
        s2 = 1.0 / np.cosh(z) ** 2
        return 0.5 * s2 * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

    def d2_evaluate(z):
        th = np.tanh(z)
        s2 = 1.0 / np.cosh(z) ** 2
        return -s2 * th * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

    h_minus = 0.5 * np.array([[-1.0, d], [d, 1.0]], dtype=complex)
    h_plus = 0.5 * np.array([[1.0, d], [d, -1.0]], dtype=complex)
    gap = GapFunction(
        rho=lambda z: np.sqrt(np.tanh(z) ** 2 + d * d + 0j),
        zero_guess=1j * d,
        rho_sq=lambda z: np.tanh(z) ** 2 + d * d,
        d_rho_sq=lambda z: 2.0 * np.tanh(z) / np.cosh(z) ** 2,
        has_sqrt_branch=True,
    )
    return HamiltonianFamily(
        name="tanh_model",
        delta=d,
        evaluate=evaluate,
        gap=gap,
        strip_mu=0.45 * math.pi,
        decay_nu=3.0,
        limits=(h_minus, h_plus),
        kind=KIND_TANH,
        d_evaluate=d_evaluate,
        d2_evaluate=d2_evaluate,
        params=(d,),
    )


BUILTIN_FAMILIES = {
    "zener": zener,
    "constant_gap": constant_gap,
    "tanh_model": tanh_model,
}


def make_family(name: str, delta: float) -> HamiltonianFamily:
    """Construct a built-in family by name (used by configs and workers)."""
    try:
        ctor = BUILTIN_FAMILIES[name]
    except KeyError:
        raise InvalidParameter(f"unknown family {name!r}") from None
    return ctor(delta)


DERIVATIVE_STEP = 1e-3


def derivative(family: HamiltonianFamily, t: float, order: int = 1) -> np.ndarray:
    """Fourth-order central-difference dH/dt with step ``DERIVATIVE_STEP``.

    The built-in families also carry analytic derivatives (``d_evaluate``)
    which the propagator uses internally; this is the generic stencil,
    accurate to ~1e-12 for tanh-scale variation.
    """
    if order != 1:
        raise InvalidParameter("only first derivatives are provided")
    h = DERIVATIVE_STEP
    f = family.evaluate
    return (-f(t + 2 * h) + 8.0 * f(t + h) - 8.0 * f(t - h) + f(t - 2 * h)) / (12.0 * h)
