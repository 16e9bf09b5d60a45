import math

import numpy as np
import pytest

from adlab.errors import FitDiverged, GapClosure, GridTooCoarse
from adlab.families import constant_gap, zener
from adlab.linalg2 import IDENTITY, eigen_decompose, spectral_norm
from adlab.propagate import EvolutionSpec, adiabatic_defect, evolve_u
from adlab.superadiabatic import (
    TransitionHistory,
    _continued_projectors,
    build_hierarchy,
    dressed_transition_history,
    erf_profile_fit,
    evolve_vq,
    optimal_dressed_basis,
    optimal_q,
    riesz_projector_quadrature,
    transition_history,
    u_minus_vq,
)

from conftest import make_constant_family, random_hermitian


@pytest.fixture(scope="module")
def zener_hier_01():
    return build_hierarchy(zener(1.0), 0.1, np.linspace(-8.0, 8.0, 3201), q_max=12)


def test_constant_family_fixed_point():
    fam = make_constant_family(0.5 * np.array([[1.0, 0.4], [0.4, -1.0]]))
    grid = np.linspace(-3.0, 3.0, 401)
    h = build_hierarchy(fam, 0.2, grid, q_max=4)
    p0 = h.projectors[0]
    for q in range(5):
        assert np.max(np.abs(h.projectors[q] - p0)) <= 1e-12
        assert np.max(np.abs(h.couplings[q])) <= 1e-12
    assert np.max(h.beta_estimates) <= 1e-12
    assert optimal_q(h) == 0


def test_level_zero_matches_eigen_projector(zener_hier_01):
    h = zener_hier_01
    for i in (0, 800, 1600, 2400, 3200):
        p = eigen_decompose(h.family.evaluate(h.grid[i])).p_low
        assert np.max(np.abs(h.projectors[0][i] - p)) <= 1e-12


def test_projector_idempotency(zener_hier_01):
    h = zener_hier_01
    for q in range(h.q_max + 1):
        p = h.projectors[q]
        defect = np.max(np.abs(np.einsum("nij,njk->nik", p, p) - p))
        assert defect <= 1e-11


def test_dressed_projector_stays_near_band(zener_hier_01):
    h = zener_hier_01
    for q in (1, 2, 3):
        dist = np.max(
            np.linalg.norm(
                (h.projectors[q] - h.projectors[0]).reshape(-1, 4), axis=1
            )
        )
        assert dist <= 2.0 * h.epsilon  # P_q = P_0 + O(eps)


def test_first_level_perturbation_oracle():
    # oracle: first-order dressing tilts the band direction by eps*(n' x n)/gap
    fam = zener(1.0)
    eps = 0.02
    grid = np.linspace(-4.0, 4.0, 1601)
    h = build_hierarchy(fam, eps, grid, q_max=1)
    i = 900
    t = h.grid[i]
    rho = math.sqrt(t * t + 1.0)
    n = np.array([1.0, 0.0, t]) / rho
    dn = np.array([-t, 0.0, 1.0]) / rho**3  # d/dt of (delta,0,t)/rho, delta=1
    m1 = np.cross(dn, n) / (2.0 * rho)  # gap = 2 rho for this normalization
    tilted = n + eps * m1 * 2.0  # projector vector carries gap/2 scaling
    tilted /= np.linalg.norm(tilted)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0]).astype(complex)
    p_pred = 0.5 * (IDENTITY - (tilted[0] * sx + tilted[1] * sy + tilted[2] * sz))
    err = np.max(np.abs(h.projectors[1][i] - p_pred))
    assert err <= 20.0 * eps * eps


def test_beta_one_scales_linearly_in_eps():
    fam = zener(1.0)
    grid = np.linspace(-8.0, 8.0, 3201)
    b = [build_hierarchy(fam, e, grid, q_max=1).beta_estimates[1] for e in (0.2, 0.1, 0.05)]
    slope = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(b), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)
    assert 0.0 < b[1] <= 2.0 * 0.1  # within C*eps
    # and the coupling correction shrinks: sup||K_1 - K_0|| < sup||K_0||
    h = build_hierarchy(fam, 0.1, grid, q_max=1)
    assert h.beta_estimates[1] < h.beta_estimates[0]


def test_beta_growth_factorial_shape(zener_hier_01):
    # normalized integral proxies grow log-convexly beyond q ~ 3
    bn = zener_hier_01.beta_integrals_normalized
    logs = np.log(bn[3:9])
    assert np.all(np.diff(logs) > 0)
    assert np.all(np.diff(logs, 2) >= -1e-9)


def test_optimal_q_examples():
    fam = zener(1.0)
    grid = np.linspace(-8.0, 8.0, 3201)
    h_large = build_hierarchy(fam, 0.5, grid)
    assert optimal_q(h_large) in (0, 1)
    h_small = build_hierarchy(fam, 0.05, grid)
    q = optimal_q(h_small)
    assert q >= 3
    assert h_small.beta_estimates[q] <= h_small.beta_estimates[0] * 0.05 / 10.0


def test_riesz_residue_vs_contour_quadrature(rng):
    # the residue-form projector equals the resolvent contour integral
    for _ in range(10):
        m = random_hermitian(rng) + 0.05 * (
            rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        )
        evals = np.linalg.eigvals(m)
        if abs(evals[0] - evals[1]) < 0.3:
            continue
        ref = eigen_decompose(0.5 * (m + m.conj().T)).p_low
        p, _ = _continued_projectors(m[None, :, :], ref[None, :, :], level=1)
        i = int(np.argmin([abs(np.trace(p[0] @ (m - e * IDENTITY))) for e in evals]))
        quad = riesz_projector_quadrature(
            m, evals[i], 0.4 * abs(evals[0] - evals[1]), n_nodes=128
        )
        assert np.max(np.abs(p[0] - quad)) <= 1e-10


def test_gap_closure_guard():
    m = np.array([[[1.0, 0.0], [0.0, 1.0]]], dtype=complex)  # degenerate
    with pytest.raises(GapClosure):
        _continued_projectors(m, m, level=2)


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        build_hierarchy(zener(1.0), 0.1, np.linspace(-8.0, 8.0, 33), q_max=2)


def test_history_constant_stays_empty():
    fam = make_constant_family(0.5 * np.array([[1.0, 0.4], [0.4, -1.0]]))
    grid = np.linspace(-3.0, 3.0, 401)
    h = build_hierarchy(fam, 0.2, grid, q_max=2)
    hist = transition_history(fam, 0.2, h, 0, stride=8)
    assert np.max(hist.coefficients) <= 1e-8
    assert hist.coefficients[0] <= 1e-9


def test_history_final_amplitude_constant_gap():
    # final leaked amplitude ~ sqrt(2) e^{-delta/eps} at eps = 0.2
    fam = constant_gap(1.0)
    eps = 0.2
    grid = np.linspace(-20.0, 20.0, 8001)
    h = build_hierarchy(fam, eps, grid)
    q = optimal_q(h)
    hist = transition_history(fam, eps, h, q, stride=8)
    target = math.sqrt(2.0) * math.exp(-1.0 / eps)
    assert hist.coefficients[-1] == pytest.approx(target, rel=0.10)
    assert np.all(hist.coefficients >= 0)
    assert np.all(hist.coefficients <= 1.0)


def test_history_instantaneous_oscillates():
    fam = constant_gap(1.0)
    eps = 0.2
    grid = np.linspace(-20.0, 20.0, 8001)
    h = build_hierarchy(fam, eps, grid, q_max=1)
    hist = transition_history(fam, eps, h, 0, stride=8)
    final = math.sqrt(2.0) * math.exp(-1.0 / eps)
    assert np.max(hist.coefficients) >= 5.0 * final


def test_erf_fit_self_consistency():
    from scipy.special import erf

    t = np.linspace(-10, 10, 2001)
    a, c, w = 3.2e-4, 0.15, 0.5
    coeff = a * 0.5 * (erf((t - c) / w) + 1.0)
    fit = erf_profile_fit(
        TransitionHistory(times=t, coefficients=coeff, basis_tag="synthetic"),
        delta=1.0,
        epsilon=0.125,
    )
    assert fit.amplitude == pytest.approx(a, rel=1e-10)
    assert fit.center == pytest.approx(c, abs=1e-10)
    assert fit.width == pytest.approx(w, rel=1e-10)
    assert fit.max_residual <= 1e-10


def test_erf_fit_diverged():
    t = np.linspace(-1, 1, 101)
    noise = np.abs(np.sin(40 * t))
    with pytest.raises(FitDiverged):
        erf_profile_fit(
            TransitionHistory(times=t, coefficients=noise, basis_tag="noise"),
            delta=1.0,
            epsilon=0.1,
        )


def test_dressed_basis_erf_profile():
    fam = constant_gap(1.0)
    eps = 0.1
    grid = np.linspace(-25.0, 25.0, 5001)
    basis = optimal_dressed_basis(fam, eps, grid)
    hist = dressed_transition_history(fam, basis, stride=2)
    fit = erf_profile_fit(hist, 1.0, eps)
    assert fit.width == pytest.approx(math.sqrt(2.0 * eps), rel=0.15)
    assert abs(fit.center) <= 0.2
    assert fit.amplitude == pytest.approx(math.sqrt(2.0) * math.exp(-10.0), rel=0.10)
    assert fit.max_residual <= 0.05


def test_vq_intertwines_dressed_projectors():
    fam = zener(1.0)
    grid = np.linspace(-8.0, 8.0, 3201)
    for q in (0, 1, 2):
        h = build_hierarchy(fam, 0.1, grid, q_max=3)
        v = evolve_vq(fam, h, q, tol_per_unit_time=1e-10).u_matrix
        p_s = h.projectors[q][0]
        p_t = h.projectors[q][-1]
        assert spectral_norm(v @ p_s - p_t @ v) <= 1e-6


def test_error_proxy_bound():
    # measured ||U - V_q|| <= 1.5 |t-s| sup||K_q - K_{q-1}||
    fam = zener(1.0)
    grid = np.linspace(-8.0, 8.0, 3201)
    h = build_hierarchy(fam, 0.1, grid, q_max=4)
    span = 16.0
    for q in range(4):
        d = u_minus_vq(fam, h, q, tol_per_unit_time=1e-10)
        assert d <= 1.5 * span * h.beta_estimates[q]


def test_defect_improves_then_rises():
    fam = zener(1.0)
    eps = 0.05
    grid = np.linspace(-8.0, 8.0, 3201)
    h = build_hierarchy(fam, eps, grid)
    spec = EvolutionSpec(epsilon=eps, t_start=-8.0, t_end=8.0,
                         tol_per_unit_time=1e-10)
    defects = [
        adiabatic_defect(fam, spec, basis=("superadiabatic", q), hierarchy=h)
        for q in range(h.q_max + 1)
    ]
    q_min = int(np.argmin(defects))
    assert 0 < q_min < h.q_max
    assert defects[q_min] < defects[0]
    assert defects[-1] > defects[q_min]


def test_hierarchy_projector_at_lookup(zener_hier_01):
    h = zener_hier_01
    p = h.projector_at(0, h.grid[17])
    assert np.allclose(p, h.projectors[0][17])
    with pytest.raises(ValueError):
        h.projector_at(0, h.grid[17] + 0.002)
