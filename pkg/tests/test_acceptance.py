"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS/FAIL line per criterion.  The quantitative
criteria (1, 2, 3, 4, 6, 7) also run the tolerance-halving self-convergence
rerun and require the amplitude-like columns to move by less than 10%.
Run standalone with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from adlab.experiments import run_experiment, self_check, write_outputs

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def load_config(name):
    return json.loads((CONFIG_DIR / name).read_text())


def report(criterion, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}  {detail}")
    assert ok, f"{criterion}: {detail}"


def run_with_self_check(config_name):
    result = run_experiment(load_config(config_name))
    check = self_check(result)
    return result, check


def gate_summary(result):
    failing = [k for k, v in result.gates.items() if not v]
    return "all gates green" if not failing else f"failing: {failing}"


def test_criterion_1_landau_zener_exactness():
    """Amplitudes within 10% of exp(-pi d^2/4eps); gamma 3%; prefactor 15%."""
    details = []
    ok = True
    for cfg in ("lz_zener_delta1.json", "lz_zener_delta05.json"):
        result, check = run_with_self_check(cfg)
        ok = ok and result.all_gates_pass and check["pass"]
        details.append(
            f"{cfg}: worst ratio err {result.metrics['worst_ratio']:.2e}, "
            f"gamma {result.metrics['gamma_fit']:.6f} "
            f"(target {result.metrics['gamma_predicted']:.6f}), "
            f"G {result.metrics['g_fit']:.4f}, "
            f"self-check drift {check['sweep.measured_amplitude']:.2e}"
        )
    report("criterion 1: crossing amplitude law", ok, "; ".join(details))


def test_criterion_2_constant_gap_amplitude():
    """Final amplitude within 10% of sqrt(2) e^{-d/eps}; gamma 3%; G 15%."""
    result, check = run_with_self_check("lz_constant_gap_delta1.json")
    ok = result.all_gates_pass and check["pass"]
    report(
        "criterion 2: constant-gap amplitude law",
        ok,
        f"gamma {result.metrics['gamma_fit']:.6f} (target 1), "
        f"G {result.metrics['g_fit']:.4f} (target {math.sqrt(2):.4f}), "
        f"{gate_summary(result)}, self-check drift "
        f"{check['sweep.measured_amplitude']:.2e}",
    )


def test_criterion_3_erf_universality():
    """Fitted switching profile: residual <= 5%, width 15%, contrast 5x."""
    result, check = run_with_self_check("erf_profile.json")
    ok = result.all_gates_pass and check["pass"]
    cols, rows = result.tables["fit"]
    i_res = cols.index("max_residual")
    i_w = cols.index("width_fit")
    i_wp = cols.index("width_predicted")
    detail = ", ".join(
        f"eps={r[0]:g}: resid {r[i_res]:.3f}, width ratio {r[i_w]/r[i_wp]:.3f}"
        for r in rows
    )
    report("criterion 3: erf switching profile", ok,
           f"{detail}; {gate_summary(result)}")


def test_criterion_4_superadiabatic_scaling():
    """||U-V_q|| slopes q+1 (q<=2); proxy log-convex; interior defect min."""
    result, check = run_with_self_check("superadiabatic_scan.json")
    ok = result.all_gates_pass and check["pass"]
    slopes = {int(q): s for q, s, _ in result.tables["slopes"][1]}
    report(
        "criterion 4: dressed-basis error scaling",
        ok,
        f"slopes {slopes}, defect min {result.metrics['defect_min']:.2e} at "
        f"q={int(result.metrics['defect_min_q'])} "
        f"(q=0 defect {result.metrics['defect_q0']:.2e}); {gate_summary(result)}",
    )


def test_criterion_5_contour_consistency():
    """Three decay-rate routes agree to 1e-6; deformation invariant to 1e-8."""
    result, check = run_with_self_check("decay_rate.json")
    ok = result.all_gates_pass and check["pass"]
    cols, rows = result.tables["rates"]
    i_spread = cols.index("relative_spread")
    i_def = cols.index("deformation_change")
    detail = ", ".join(
        f"delta={r[0]:g}: spread {r[i_spread]:.2e}, deformation {r[i_def]:.2e}"
        for r in rows
    )
    report("criterion 5: contour consistency", ok, detail)


def test_criterion_6_bo_transmitted_slope():
    """ln|c1-| slope within 5% of the loop integral; flux defects < 1e-8."""
    result, check = run_with_self_check("bo_transmit.json")
    ok = result.all_gates_pass and check["pass"]
    report(
        "criterion 6: transmitted-coefficient decay",
        ok,
        f"slope {result.metrics['slope']:.6f} vs loop "
        f"{-result.metrics['contour']:.6f} "
        f"(small-delta {-result.metrics['small_delta']:.6f}); "
        f"{gate_summary(result)}, self-check drift "
        f"{check['transmission.c1_abs']:.2e}",
    )


def test_criterion_7_transmitted_packet():
    """E*>E0, alpha*<alpha(E0); L2 mismatch decreasing and <= 25%; v = k*."""
    result, check = run_with_self_check("bo_packet.json")
    ok = result.all_gates_pass and check["pass"]
    cols, rows = result.tables["packet"]
    i_m = cols.index("l2_mismatch")
    mism = ", ".join(f"eps={r[0]:g}: {r[i_m]:.4f}" for r in rows)
    report(
        "criterion 7: transmitted-packet asymptotics",
        ok,
        f"E*={result.metrics['e_star']:.6f}, alpha*={result.metrics['alpha_star']:.6f}; "
        f"mismatch {mism}; {gate_summary(result)}",
    )


def test_criterion_8_structural_properties(tmp_path):
    """Structure-only checks, no quantitative model content."""
    import numpy.random as npr

    from adlab.families import zener
    from adlab.linalg2 import eigen_decompose, spectral_norm, unitary_step, unitarity_defect
    from adlab.propagate import EvolutionSpec, evolve_u, evolve_v
    from adlab.scattering import solve_stationary
    from adlab.superadiabatic import build_hierarchy

    from conftest import random_hermitian

    checks = {}
    rng = npr.default_rng(1234)

    # unitarity of the closed-form exponential and of the propagator
    checks["unitary_step"] = all(
        unitarity_defect(unitary_step(random_hermitian(rng), float(rng.uniform(-4, 4))))
        <= 1e-14
        for _ in range(1000)
    )
    fam = zener(1.0)
    tol = 1e-9
    spec = EvolutionSpec(epsilon=0.2, t_start=-10.0, t_end=10.0, tol_per_unit_time=tol)
    res = evolve_u(fam, spec)
    checks["propagator_unitarity"] = res.unitarity_defect <= 10 * tol * 20

    # group property at a random split point
    r = float(rng.uniform(-8, 8))
    u1 = evolve_u(fam, EvolutionSpec(epsilon=0.2, t_start=-10.0, t_end=r,
                                     tol_per_unit_time=tol)).u_matrix
    u2 = evolve_u(fam, EvolutionSpec(epsilon=0.2, t_start=r, t_end=10.0,
                                     tol_per_unit_time=tol)).u_matrix
    checks["group_property"] = spectral_norm(u2 @ u1 - res.u_matrix) <= 10 * tol * 20

    # intertwining of the gap-following evolution
    v = evolve_v(fam, spec).u_matrix
    p_s = eigen_decompose(fam.evaluate(-10.0)).p_low
    p_t = eigen_decompose(fam.evaluate(10.0)).p_low
    checks["intertwining"] = spectral_norm(v @ p_s - p_t @ v) <= 5 * tol * 20

    # projector idempotency across the hierarchy
    hier = build_hierarchy(fam, 0.1, np.linspace(-6.0, 6.0, 2401), q_max=8)
    checks["projector_idempotency"] = all(
        float(np.max(np.abs(np.einsum("nij,njk->nik", p, p) - p))) <= 1e-11
        for p in hier.projectors
    )

    # flux conservation of the stationary solver
    from adlab.families import tanh_model

    sol = solve_stationary(tanh_model(0.25), 0.8, 0.4)
    checks["flux_conservation"] = sol.flux_defect <= 1e-8

    # CLI output determinism
    from adlab.experiments import run_experiment, write_outputs

    cfg = {
        "schema_version": 1,
        "experiment": "decay-rate",
        "family": {"name": "zener", "delta": 1.0},
        "deltas": [1.0],
    }
    m1 = write_outputs(run_experiment(cfg), tmp_path / "d1", figures=False)
    m2 = write_outputs(run_experiment(cfg), tmp_path / "d2", figures=False)
    checks["csv_determinism"] = all(
        a["sha256"] == b["sha256"] for a, b in zip(m1["outputs"], m2["outputs"])
    )

    ok = all(checks.values())
    report(
        "criterion 8: structural property suite",
        ok,
        ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()),
    )
