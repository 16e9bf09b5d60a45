import numpy as np
import pytest

from adlab.families import GapFunction, HamiltonianFamily


def make_constant_family(matrix, gap_value=None):
    """Family with H(z) identically equal to one Hermitian matrix."""
    m = np.asarray(matrix, dtype=complex)
    ev = np.linalg.eigvalsh(m)
    gap = float(ev[1] - ev[0]) if gap_value is None else gap_value
    return HamiltonianFamily(
        name="constant",
        delta=gap,
        evaluate=lambda z: m.copy(),
        gap=GapFunction(
            rho=lambda z: gap + 0.0j,
            zero_guess=1j,
            rho_sq=lambda z: gap * gap + 0.0j,
            d_rho_sq=lambda z: 0.0j,
            has_sqrt_branch=False,
        ),
        strip_mu=np.inf,
        decay_nu=None,
        limits=(m.copy(), m.copy()),
        kind=None,
        d_evaluate=lambda z: np.zeros((2, 2), dtype=complex),
        d2_evaluate=lambda z: np.zeros((2, 2), dtype=complex),
    )


def make_decoupled_family():
    """Diagonal two-channel family: no coupling, no level crossing."""

    def z_of(x):
        return 2.0 + np.tanh(x)

    def evaluate(x):
        z = z_of(x)
        return 0.5 * np.array([[z, 0.0], [0.0, -z]], dtype=complex)

    def d_evaluate(x):
        s2 = 1.0 / np.cosh(x) ** 2
        return 0.5 * s2 * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

    def d2_evaluate(x):
        th = np.tanh(x)
        s2 = 1.0 / np.cosh(x) ** 2
        return -s2 * th * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

    h_minus = 0.5 * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    h_plus = 0.5 * np.array([[3.0, 0.0], [0.0, -3.0]], dtype=complex)
    return HamiltonianFamily(
        name="decoupled",
        delta=1.0,
        evaluate=evaluate,
        gap=GapFunction(
            rho=lambda z: 2.0 + np.tanh(z),
            zero_guess=1j,
            rho_sq=lambda z: (2.0 + np.tanh(z)) ** 2,
            d_rho_sq=None,
            has_sqrt_branch=False,
        ),
        strip_mu=1.4,
        decay_nu=3.0,
        limits=(h_minus, h_plus),
        kind=None,
        d_evaluate=d_evaluate,
        d2_evaluate=d2_evaluate,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


def random_hermitian(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return 0.5 * (a + a.conj().T)
