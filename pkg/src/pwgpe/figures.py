"""Figure rendering for study reports.

Figures are written next to the delimited study output: log-log error decay
against the cutoff, the error-versus-error relations with their fitted
slopes, and the perturbation improvement ratio.  A standalone plot script
consuming study.csv is emitted as well, so the figures can be regenerated
or restyled without rerunning the study.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .study import StudyReport

_RC = {
    "figure.figsize": (5.2, 3.6),
    "figure.dpi": 130,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.markersize": 4.5,
}


def _fit_line(ax, xs, ys, slope_r2, label):
    if slope_r2 is None:
        return
    slope, _ = slope_r2
    x = np.asarray(xs, float)
    y = np.asarray(ys, float)
    c = np.exp(np.mean(np.log(y) - slope * np.log(x)))
    grid = np.array([x.min(), x.max()])
    ax.loglog(grid, c * grid**slope, "--", lw=0.9, alpha=0.7,
              label=f"{label}: slope {slope:+.2f}")


def render_study_figures(report: StudyReport, outdir) -> list:
    """Write the study figures into outdir; returns the file paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    records = report.records
    Ms = np.array([r.M for r in records], float)
    e1 = np.array([r.coarse["err_h1"] for r in records])
    schemes = [s for s in report.config["schemes"]]
    with plt.rc_context(_RC):
        # error decay against the cutoff
        fig, ax = plt.subplots()
        ax.loglog(Ms, e1, "o-", label="coarse")
        for s in schemes:
            ys = [r.schemes[s]["err_h1"] for r in records]
            ax.loglog(Ms, ys, "s-", label=s)
        rd = [r.estimates["residual_dual"] for r in records]
        ax.loglog(Ms, rd, "^:", label="residual dual norm")
        ax.set_xlabel("cutoff M")
        ax.set_ylabel("H1 error vs reference")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = os.path.join(outdir, "errors_vs_cutoff.png")
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)

        # error-versus-error relations
        fig, ax = plt.subplots()
        el = [r.coarse["err_lambda"] for r in records]
        ee = [r.coarse["err_energy"] for r in records]
        ax.loglog(e1, el, "o", label="eigenvalue error")
        _fit_line(ax, e1, el, report.slopes.get("eigenvalue_quadratic"), "eigenvalue")
        ax.loglog(e1, ee, "s", label="energy error")
        _fit_line(ax, e1, ee, report.slopes.get("energy_quadratic"), "energy")
        if "newton" in report.config["schemes"]:
            n1 = [r.schemes["newton"]["err_h1"] for r in records]
            ax.loglog(e1, n1, "^", label="post-processed H1 error")
            _fit_line(ax, e1, n1, report.slopes.get("newton_h1"), "post-processed")
        ax.set_xlabel("coarse H1 error")
        ax.set_ylabel("derived error")
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = os.path.join(outdir, "error_relations.png")
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)

        # perturbation gain
        if "pert" in report.config["schemes"]:
            fig, ax = plt.subplots()
            ratio = [r.schemes["pert"]["improvement_h1"] for r in records]
            ax.loglog(Ms, ratio, "o-", label="pert err / coarse err")
            _fit_line(ax, Ms, ratio, report.slopes.get("perturbation_gain"), "gain")
            ax.set_xlabel("cutoff M")
            ax.set_ylabel("improvement ratio")
            ax.legend(fontsize=7)
            fig.tight_layout()
            p = os.path.join(outdir, "perturbation_gain.png")
            fig.savefig(p)
            plt.close(fig)
            paths.append(p)
    return paths


PLOT_SCRIPT = '''#!/usr/bin/env python3
"""Regenerate the study figures from study.csv (written by the study run)."""

import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV = sys.argv[1] if len(sys.argv) > 1 else "study.csv"

with open(CSV) as f:
    rows = list(csv.DictReader(f))

def col(name):
    return [float(r[name]) for r in rows if r.get(name) not in ("", None)]

M = col("M")
e1 = col("coarse_err_h1")

fig, ax = plt.subplots(figsize=(5.2, 3.6))
ax.loglog(M, e1, "o-", label="coarse")
for name in ("newton", "tg1", "tg2a", "tg2b", "pert"):
    key = f"{name}_err_h1"
    if rows and key in rows[0] and rows[0][key] != "":
        ax.loglog(M, col(key), "s-", label=name)
ax.loglog(M, col("residual_dual"), "^:", label="residual dual norm")
ax.set_xlabel("cutoff M")
ax.set_ylabel("H1 error vs reference")
ax.grid(alpha=0.3)
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("errors_vs_cutoff.png", dpi=130)

fig, ax = plt.subplots(figsize=(5.2, 3.6))
ax.loglog(e1, col("coarse_err_lambda"), "o", label="eigenvalue error")
ax.loglog(e1, col("coarse_err_energy"), "s", label="energy error")
if rows and rows[0].get("newton_err_h1", "") != "":
    ax.loglog(e1, col("newton_err_h1"), "^", label="post-processed H1 error")
ax.set_xlabel("coarse H1 error")
ax.set_ylabel("derived error")
ax.grid(alpha=0.3)
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("error_relations.png", dpi=130)
print("wrote errors_vs_cutoff.png and error_relations.png")
'''


def write_plot_script(outdir) -> str:
    path = os.path.join(outdir, "plot_study.py")
    with open(path, "w") as f:
        f.write(PLOT_SCRIPT)
    os.chmod(path, 0o755)
    return path
