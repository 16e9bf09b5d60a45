import math

import numpy as np
import pytest
from scipy.linalg import expm

from adlab.errors import StepUnderflow
from adlab.families import constant_gap, zener
from adlab.linalg2 import IDENTITY, SIGMA_Z, eigen_decompose, spectral_norm
from adlab.propagate import (
    EvolutionSpec,
    adiabatic_defect,
    evolve_u,
    evolve_v,
    kato_coupling,
)
from adlab.superadiabatic import build_hierarchy, optimal_q

from conftest import make_constant_family, random_hermitian


def test_zero_length_interval_is_identity():
    spec = EvolutionSpec(epsilon=0.3, t_start=1.0, t_end=1.0)
    res = evolve_u(zener(1.0), spec)
    assert np.allclose(res.u_matrix, IDENTITY)
    assert res.accepted_steps == 0


def test_constant_generator_diagonal_oracle():
    # H = sz/2, eps=1, interval 2pi -> diag(e^{-i pi}, e^{i pi})
    fam = make_constant_family(0.5 * SIGMA_Z)
    spec = EvolutionSpec(epsilon=1.0, t_start=0.0, t_end=2.0 * math.pi,
                         tol_per_unit_time=1e-10)
    res = evolve_u(fam, spec)
    expected = np.diag([np.exp(-1j * math.pi), np.exp(1j * math.pi)])
    assert np.max(np.abs(res.u_matrix - expected)) <= 1e-9


def test_constant_generator_matches_expm(rng):
    for _ in range(5):
        h = random_hermitian(rng)
        fam = make_constant_family(h)
        eps, t1 = 0.7, 1.3
        spec = EvolutionSpec(epsilon=eps, t_start=0.0, t_end=t1,
                             tol_per_unit_time=1e-11)
        res = evolve_u(fam, spec)
        assert np.max(np.abs(res.u_matrix - expm(-1j * t1 * h / eps))) <= 1e-9


def test_group_property_fixed_split():
    fam = zener(1.0)
    kw = dict(epsilon=0.5, tol_per_unit_time=1e-10)
    u_full = evolve_u(fam, EvolutionSpec(t_start=-40.0, t_end=40.0, **kw)).u_matrix
    u_left = evolve_u(fam, EvolutionSpec(t_start=-40.0, t_end=0.0, **kw)).u_matrix
    u_right = evolve_u(fam, EvolutionSpec(t_start=0.0, t_end=40.0, **kw)).u_matrix
    assert spectral_norm(u_right @ u_left - u_full) <= 1e-10


def test_group_property_random_splits(rng):
    fam = zener(1.0)
    tol = 1e-9
    kw = dict(epsilon=0.25, tol_per_unit_time=tol)
    u_full = evolve_u(fam, EvolutionSpec(t_start=-10.0, t_end=10.0, **kw)).u_matrix
    for r in rng.uniform(-9, 9, size=4):
        u1 = evolve_u(fam, EvolutionSpec(t_start=-10.0, t_end=r, **kw)).u_matrix
        u2 = evolve_u(fam, EvolutionSpec(t_start=r, t_end=10.0, **kw)).u_matrix
        assert spectral_norm(u2 @ u1 - u_full) <= 10 * tol * 20


def test_time_reversal():
    fam = zener(1.0)
    tol = 1e-9
    fwd = evolve_u(fam, EvolutionSpec(epsilon=0.2, t_start=-6.0, t_end=6.0,
                                      tol_per_unit_time=tol)).u_matrix
    bwd = evolve_u(fam, EvolutionSpec(epsilon=0.2, t_start=6.0, t_end=-6.0,
                                      tol_per_unit_time=tol)).u_matrix
    assert spectral_norm(bwd - np.linalg.inv(fwd)) <= 10 * tol * 12


def test_unitarity_defect_bound():
    for eps in (0.5, 0.1):
        tol = 1e-8
        spec = EvolutionSpec(epsilon=eps, t_start=-20.0, t_end=20.0,
                             tol_per_unit_time=tol)
        res = evolve_u(zener(1.0), spec)
        assert res.unitarity_defect <= 10 * tol * 40


def test_self_convergence_of_amplitude():
    # halving the tolerance moves the extracted amplitude by < 10% of itself
    fam = zener(1.0)
    amps = []
    for tol in (1e-8, 5e-9):
        spec = EvolutionSpec(epsilon=0.1, t_start=-40.0, t_end=40.0,
                             tol_per_unit_time=tol)
        res = evolve_u(fam, spec)
        f0 = eigen_decompose(fam.evaluate(-40.0))
        f1 = eigen_decompose(fam.evaluate(40.0))
        amps.append(abs(np.vdot(f1.v_high, res.u_matrix @ f0.v_low)))
    assert abs(amps[0] - amps[1]) <= 0.1 * amps[1]


def test_jit_and_python_paths_agree():
    fam = zener(1.0)
    spec = EvolutionSpec(epsilon=0.5, t_start=-8.0, t_end=8.0,
                         tol_per_unit_time=1e-8)
    a = evolve_u(fam, spec).u_matrix
    b = evolve_u(fam, spec, force_python=True).u_matrix
    assert spectral_norm(a - b) <= 1e-12


def test_history_sampling():
    fam = constant_gap(1.0)
    times = np.linspace(-5.0, 5.0, 11)
    spec = EvolutionSpec(epsilon=0.3, t_start=-5.0, t_end=5.0,
                         tol_per_unit_time=1e-9)
    res = evolve_u(fam, spec, sample_times=times)
    ts, us = res.history
    assert np.allclose(ts, times)
    assert us.shape == (11, 2, 2)
    assert np.allclose(us[0], IDENTITY, atol=1e-12)
    assert spectral_norm(us[-1] - res.u_matrix) <= 1e-12


def test_step_underflow_raises():
    spec = EvolutionSpec(epsilon=0.1, t_start=-1.0, t_end=1.0,
                         tol_per_unit_time=1e-30)
    with pytest.raises(StepUnderflow):
        evolve_u(zener(1.0), spec)


def test_evolve_v_constant_equals_u(rng):
    h = random_hermitian(rng)
    fam = make_constant_family(h)
    spec = EvolutionSpec(epsilon=0.4, t_start=0.0, t_end=3.0,
                         tol_per_unit_time=1e-10)
    assert spectral_norm(
        evolve_v(fam, spec).u_matrix - evolve_u(fam, spec).u_matrix
    ) <= 1e-9


def test_kato_coupling_structure():
    # [dP, P] is anti-Hermitian and off-diagonal in the band basis
    fam = zener(1.0)
    k = kato_coupling(fam, 0.7)
    assert np.max(np.abs(k + k.conj().T)) <= 1e-12
    p = eigen_decompose(fam.evaluate(0.7)).p_low
    assert np.max(np.abs(p @ k @ p)) <= 1e-12


def test_intertwining_of_v():
    fam = zener(1.0)
    tol = 1e-9
    spec = EvolutionSpec(epsilon=0.1, t_start=-10.0, t_end=10.0,
                         tol_per_unit_time=tol)
    v = evolve_v(fam, spec).u_matrix
    p_s = eigen_decompose(fam.evaluate(-10.0)).p_low
    p_t = eigen_decompose(fam.evaluate(10.0)).p_low
    assert spectral_norm(v @ p_s - p_t @ v) <= 5 * tol * 20


def test_u_minus_v_first_order_slope():
    fam = zener(1.0)
    eps_list = [0.2, 0.1, 0.05]
    diffs = []
    for eps in eps_list:
        kw = dict(epsilon=eps, t_start=-10.0, t_end=10.0, tol_per_unit_time=1e-10)
        u = evolve_u(fam, EvolutionSpec(**kw)).u_matrix
        v = evolve_v(fam, EvolutionSpec(**kw)).u_matrix
        diffs.append(spectral_norm(u - v))
    slope = np.polyfit(np.log(eps_list), np.log(diffs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.2)


def test_adiabatic_defect_constant():
    fam = make_constant_family(0.5 * np.array([[1.0, 0.3], [0.3, -1.0]]))
    spec = EvolutionSpec(epsilon=0.2, t_start=0.0, t_end=5.0,
                         tol_per_unit_time=1e-9)
    assert adiabatic_defect(fam, spec) <= 1e-8


def test_adiabatic_defect_order_epsilon():
    # sharp O(eps) behavior shows at finite time, reading out at the crossing
    fam = zener(1.0)
    spec = EvolutionSpec(epsilon=0.1, t_start=-10.0, t_end=0.0,
                         tol_per_unit_time=1e-9)
    d = adiabatic_defect(fam, spec, basis="instantaneous")
    assert 0.01 <= d <= 0.1


def test_adiabatic_defect_optimal_basis():
    # in the optimal dressed basis the defect drops to the scattering value
    fam = zener(1.0)
    grid = np.linspace(-10.0, 10.0, 4001)
    hier = build_hierarchy(fam, 0.1, grid)
    q = optimal_q(hier)
    spec = EvolutionSpec(epsilon=0.1, t_start=-10.0, t_end=10.0,
                         tol_per_unit_time=1e-9)
    d = adiabatic_defect(fam, spec, basis=("superadiabatic", q), hierarchy=hier)
    target = math.exp(-math.pi / 0.4)
    assert target / 3 <= d <= 3 * target
