"""Figure rendering for experiment reports.

Each experiment's tables are turned into one or two PNG files written next
to the CSV output.  Rendering is read-only on the result tables, so the
figures always reflect exactly what is in the delimited output.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _col(table, name):
    columns, rows = table
    j = columns.index(name)
    return np.array([float(r[j]) for r in rows])


def _save(fig, outdir, name):
    path = Path(outdir) / name
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    return path


def _fig_lz_sweep(result, outdir):
    sweep = result.tables["sweep"]
    eps = _col(sweep, "epsilon")
    meas = _col(sweep, "measured_amplitude")
    pred = _col(sweep, "prediction")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    x = 1.0 / eps
    ax1.semilogy(x, pred, "-", color="0.4", label="closed form")
    ax1.semilogy(x, meas, "o", ms=5, label="measured")
    ax1.set_xlabel(r"$1/\epsilon$")
    ax1.set_ylabel("transition amplitude")
    ax1.legend()
    ax2.plot(x, meas / pred, "o-", ms=4)
    ax2.axhline(1.0, color="0.6", lw=0.8)
    ax2.axhspan(0.9, 1.1, color="0.9")
    ax2.set_xlabel(r"$1/\epsilon$")
    ax2.set_ylabel("measured / predicted")
    fig.suptitle(f"amplitude sweep: {result.config['family']['name']}")
    return [_save(fig, outdir, "amplitudes.png")]


def _fig_erf_profile(result, outdir):
    keys = sorted(k for k in result.tables if k.startswith("history_eps"))
    fig, axes = plt.subplots(1, len(keys), figsize=(4.6 * len(keys), 3.4), squeeze=False)
    for ax, key in zip(axes[0], keys):
        t = _col(result.tables[key], "t")
        c = _col(result.tables[key], "coefficient")
        m = _col(result.tables[key], "erf_model")
        ax.plot(t, c, lw=1.0, label="history")
        ax.plot(t, m, "--", lw=1.2, label="fitted erf")
        ax.set_xlim(-6, 6)
        ax.set_xlabel("t")
        ax.set_ylabel("|leaked component|")
        ax.set_title(key.replace("history_eps", "eps = ").replace("p", "."))
        ax.legend()
    return [_save(fig, outdir, "erf_profiles.png")]


def _fig_superadiabatic(result, outdir):
    figs = []
    uv = result.tables["u_minus_vq"]
    qs = _col(uv, "q").astype(int)
    eps = _col(uv, "epsilon")
    d = _col(uv, "defect")
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    for q in sorted(set(qs)):
        sel = qs == q
        ax.loglog(eps[sel], d[sel], "o-", label=f"q = {q}")
    ax.set_xlabel(r"$\epsilon$")
    ax.set_ylabel(r"$\|U - V_q\|$")
    ax.legend()
    figs.append(_save(fig, outdir, "uv_defect_slopes.png"))

    betas = result.tables["betas"]
    q = _col(betas, "q")
    bn = _col(betas, "beta_integral_normalized")
    dq = result.tables["defect_vs_q"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.semilogy(q, bn, "o-")
    ax1.set_xlabel("q")
    ax1.set_ylabel(r"$\beta_q$ (normalized proxy)")
    ax2.semilogy(_col(dq, "q"), _col(dq, "defect"), "o-")
    ax2.set_xlabel("q")
    ax2.set_ylabel("band-leak defect")
    figs.append(_save(fig, outdir, "optimal_truncation.png"))
    return figs


def _fig_decay_rate(result, outdir):
    rates = result.tables["rates"]
    deltas = _col(rates, "delta")
    routes = {
        "closed form": _col(rates, "gamma_closed_form"),
        "contour": _col(rates, "gamma_contour"),
        "gap reparametrization": _col(rates, "gamma_natural_time"),
    }
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    width = 0.25
    for i, (label, vals) in enumerate(routes.items()):
        ax.bar(np.arange(len(deltas)) + (i - 1) * width, vals, width, label=label)
    ax.set_xticks(range(len(deltas)), [f"delta = {d:g}" for d in deltas])
    ax.set_ylabel(r"decay rate $\gamma$")
    ax.legend()
    return [_save(fig, outdir, "decay_rates.png")]


def _fig_bo_transmit(result, outdir):
    tr = result.tables["transmission"]
    eps = _col(tr, "epsilon")
    amp = _col(tr, "c1_abs")
    summ = result.tables["summary"]
    slope = _col(summ, "slope_vs_inv_eps2")[0]
    contour = _col(summ, "contour_im_loop")[0]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    x = 1.0 / eps**2
    ax.semilogy(x, amp, "o", label=r"$|c_1^-(+\infty)|$")
    xs = np.linspace(x.min(), x.max(), 50)
    c0 = math.log(amp[0]) - slope * x[0]
    ax.semilogy(xs, np.exp(slope * xs + c0), "-", color="0.4",
                label=f"fit slope {slope:.4f}")
    ax.semilogy(xs, np.exp(-contour * xs + c0 + (slope + contour) * x[0]), "--",
                color="0.6", label=f"loop integral {-contour:.4f}")
    ax.set_xlabel(r"$1/\epsilon^2$")
    ax.set_ylabel("transmitted amplitude")
    ax.legend()
    return [_save(fig, outdir, "transmitted_decay.png")]


def _fig_bo_packet(result, outdir):
    keys = sorted(k for k in result.tables if k.startswith("field_eps"))
    fig, axes = plt.subplots(1, len(keys), figsize=(4.6 * len(keys), 3.4), squeeze=False)
    for ax, key in zip(axes[0], keys):
        x = _col(result.tables[key], "x")
        syn = _col(result.tables[key], "re_synthesized") + 1j * _col(
            result.tables[key], "im_synthesized"
        )
        pred = _col(result.tables[key], "re_predicted") + 1j * _col(
            result.tables[key], "im_predicted"
        )
        ax.plot(x, np.abs(syn) ** 2, lw=1.0, label="synthesized")
        ax.plot(x, np.abs(pred) ** 2, "--", lw=1.2, label="predicted Gaussian")
        ax.set_xlabel("x")
        ax.set_ylabel(r"$|\psi|^2$")
        ax.set_title(key.replace("field_eps", "eps = ").replace("p", "."))
        ax.legend()
    figs = [_save(fig, outdir, "transmitted_packets.png")]

    pk = result.tables["packet"]
    fig, ax = plt.subplots(figsize=(4.4, 3.4))
    ax.plot(_col(pk, "epsilon"), _col(pk, "l2_mismatch"), "o-")
    ax.set_xlabel(r"$\epsilon$")
    ax.set_ylabel("relative L2 mismatch")
    figs.append(_save(fig, outdir, "packet_mismatch.png"))
    return figs


_RENDERERS = {
    "lz-sweep": _fig_lz_sweep,
    "erf-profile": _fig_erf_profile,
    "superadiabatic-scan": _fig_superadiabatic,
    "decay-rate": _fig_decay_rate,
    "bo-transmit": _fig_bo_transmit,
    "bo-packet": _fig_bo_packet,
}


def render(result, outdir) -> list:
    """Render the experiment's figures; returns the list of files written."""
    renderer = _RENDERERS.get(result.experiment)
    if renderer is None:  # pragma: no cover - registry covers all experiments
        return []
    return [p.name for p in renderer(result, outdir)]
