#!/usr/bin/env python3
"""Render figures from langesim result CSVs.

Reads only the CSV surface: the commented header (experiment tag, resolved
config, fit summaries) and the data rows. Every fit line drawn here comes
from coefficients stored in the file; nothing is recomputed from the data.

Usage: render.py --kind <tag> --in <csv...> --out <img>
Exit codes: 0 written, 2 schema/tag/column problem.
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class SchemaError(Exception):
    pass


@dataclass
class Table:
    path: str
    meta: dict
    columns: list
    rows: np.ndarray

    def col(self, name):
        if name not in self.columns:
            raise SchemaError(f"{self.path}: missing column '{name}'")
        return self.rows[:, self.columns.index(name)]

    def summary(self, name):
        val = self.meta.get(name)
        if not isinstance(val, dict):
            raise SchemaError(f"{self.path}: missing summary '{name}'")
        return val

    def config(self):
        cfg = self.meta.get("config")
        return cfg if isinstance(cfg, dict) else {}


def read_table(path):
    meta, columns, rows = {}, None, []
    try:
        fh = open(path)
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e.strerror}") from e
    with fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                body = line[2:]
                if ": " in body:
                    key, val = body.split(": ", 1)
                    try:
                        meta[key] = json.loads(val)
                    except json.JSONDecodeError:
                        meta[key] = val
                continue
            if columns is None:
                columns = line.split(",")
                continue
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(columns):
                raise SchemaError(f"{path}: row has {len(cells)} cells, header has {len(columns)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as e:
                raise SchemaError(f"{path}: non-numeric cell ({e})") from e
    if columns is None or not rows:
        raise SchemaError(f"{path}: no data rows")
    return Table(path=str(path), meta=meta, columns=columns, rows=np.array(rows))


def _data_errorbar(ax, gid, x, y, yerr, **kw):
    """Errorbar whose point series carries a data: gid for back-extraction."""
    container = ax.errorbar(x, y, yerr=yerr, fmt=kw.pop("fmt", "o"),
                            ms=kw.pop("ms", 4), capsize=kw.pop("capsize", 2), **kw)
    container.lines[0].set_gid(gid)
    return container.lines[0]


def extract_series(fig):
    """Pull every plotted data series back out of the figure.

    Returns {gid: (x, y)} for all line artists tagged data:*; this is the
    hook the tests use to compare plotted values against the CSV.
    """
    out = {}
    for ax in fig.axes:
        for ln in ax.lines:
            gid = ln.get_gid()
            if gid and gid.startswith("data:"):
                out[gid] = (np.asarray(ln.get_xdata(), dtype=float),
                            np.asarray(ln.get_ydata(), dtype=float))
    return out


def _fit_line_lr(ax, table, idx, xmax, color):
    s = table.summary("fit")
    xs = np.linspace(0.0, xmax, 200)
    ys = s["slope_x"] * xs + s["intercept_x"]
    ln, = ax.plot(xs, ys, "-", lw=1.1, color=color)
    ln.set_gid(f"fit:{idx}")
    return s


def _omega_label(table):
    return r"$\omega = 2\pi$" if table.config().get("modulated") else r"$\omega = 0$"


def build_slr(tables):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for i, t in enumerate(tables):
        eta = t.col("eta")
        pts = _data_errorbar(ax, f"data:{i}:mean_vx", eta, t.col("mean_vx"),
                             t.col("stderr_vx"), label=t.config().get("force", f"input {i}"))
        _fit_line_lr(ax, t, i, float(eta.max()), pts.get_color())
    ax.axhline(0.0, color="0.75", lw=0.8, zorder=0)
    ax.set_xlabel(r"forcing amplitude $\eta$")
    ax.set_ylabel(r"mean velocity $\bar v_x$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_neg_mob(tables):
    fig, (ax_v, ax_f) = plt.subplots(2, 1, figsize=(6.0, 5.6), sharex=True)
    for i, t in enumerate(tables):
        eta = t.col("eta")
        pts = _data_errorbar(ax_v, f"data:{i}:mean_vx", eta, t.col("mean_vx"),
                             t.col("stderr_vx"))
        _fit_line_lr(ax_v, t, i, float(eta.max()), pts.get_color())
        _data_errorbar(ax_f, f"data:{i}:force_x", eta, t.col("force_x"),
                       t.col("stderr_force_x"), color=pts.get_color())
        nm = t.summary("negative_mobility")
        ln = ax_f.axhline(nm["mean_force_x"], ls="--", lw=1.0, color=pts.get_color())
        ln.set_gid(f"fit:{i}:mean_force")
        if nm.get("flag"):
            ax_v.set_title(f"drift against the mean force "
                           f"({nm['significance']:.1f}$\\sigma$)", fontsize=9)
    for ax in (ax_v, ax_f):
        ax.axhline(0.0, color="0.75", lw=0.8, zorder=0)
    ax_v.set_ylabel(r"mean velocity $\bar v_x$")
    ax_f.set_ylabel(r"mean experienced force $\bar F_x$")
    ax_f.set_xlabel(r"forcing amplitude $\eta$")
    fig.tight_layout()
    return fig


def _build_resonance(tables, title):
    fig, (ax_lin, ax_log) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for i, t in enumerate(tables):
        f, a, e = t.col("freq"), t.col("amp_x"), t.col("stderr_amp_x")
        pts = _data_errorbar(ax_lin, f"data:{i}:amp_x@lin", f, a, e)
        _data_errorbar(ax_log, f"data:{i}:amp_x@log", f, a, e, color=pts.get_color())
        s = t.summary("tail_fit")
        xs = np.geomspace(s["fmin"], s["fmax"], 100)
        ys = math.exp(s["intercept"]) * xs ** s["slope"]
        ln, = ax_log.plot(xs, ys, "-", lw=1.2, color="k")
        ln.set_gid(f"fit:{i}:tail")
        ax_log.annotate(f"slope {s['slope']:.2f}", xy=(xs[len(xs) // 2], ys[len(ys) // 2]),
                        xytext=(4, 6), textcoords="offset points", fontsize=8)
    ax_log.set_xscale("log")
    ax_log.set_yscale("log")
    for ax in (ax_lin, ax_log):
        ax.set_xlabel(r"$\omega / 2\pi$")
    ax_lin.set_ylabel(r"$|\hat V_x(\omega)|$")
    ax_lin.set_title(title, fontsize=9)
    ax_log.set_title("log-log tail", fontsize=9)
    fig.tight_layout()
    return fig


def build_resonance(tables):
    return _build_resonance(tables, "amplitude response")


def build_resonance_dir(tables):
    return _build_resonance(tables, "amplitude response, constant direction drive")


def build_diff(tables):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    comps = (("Dxx", "stderr_Dxx", "o"), ("Dyy", "stderr_Dyy", "s"),
             ("Dxy", "stderr_Dxy", "^"))
    for i, t in enumerate(tables):
        eta = t.col("eta")
        for name, err, marker in comps:
            _data_errorbar(ax, f"data:{i}:{name}", eta, t.col(name), t.col(err),
                           fmt=marker, label=f"$D_{{{name[1:]}}}$, {_omega_label(t)}")
    ax.axhline(0.0, color="0.75", lw=0.8, zorder=0)
    ax.set_xlabel(r"forcing amplitude $\eta$")
    ax.set_ylabel("effective diffusion")
    ax.legend(fontsize=8, ncols=max(1, len(tables)))
    fig.tight_layout()
    return fig


def build_spec(tables):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for i, t in enumerate(tables):
        eta = t.col("eta")
        for name, marker in (("eig1", "o"), ("eig2", "s")):
            ln, = ax.plot(eta, t.col(name), marker, ms=4, ls="-", lw=0.8,
                          label=f"$\\lambda_{name[-1]}$, {_omega_label(t)}")
            ln.set_gid(f"data:{i}:{name}")
    ax.set_xlabel(r"forcing amplitude $\eta$")
    ax.set_ylabel("diffusion matrix eigenvalues")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_diff_zoom(tables):
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    xmax = 0.0
    for i, t in enumerate(tables):
        eta = t.col("eta")
        pts = _data_errorbar(ax, f"data:{i}:Dxx", eta, t.col("Dxx"), t.col("stderr_Dxx"),
                             label=_omega_label(t))
        q = t.summary("quadratic_fit")
        xs = np.linspace(0.0, q["eta_max_used"], 200)
        ys = q["D0"] + q["a"] * xs + q["b"] * xs ** 2
        ln, = ax.plot(xs, ys, "-", lw=1.2, color=pts.get_color())
        ln.set_gid(f"fit:{i}:quadratic")
        ax.annotate(f"$a$={q['a']:.4g}, $b$={q['b']:.4g}", xy=(xs[-1], ys[-1]),
                    xytext=(-6, -12), textcoords="offset points",
                    ha="right", fontsize=8, color=pts.get_color())
        xmax = max(xmax, q["eta_max_used"])
    ax.set_xlim(-0.02, xmax * 1.08)
    ax.set_xlabel(r"forcing amplitude $\eta$")
    ax.set_ylabel(r"$D_{xx}$")
    ax.legend(fontsize=8, loc="upper left")
    fig.tight_layout()
    return fig


KINDS = {
    "fig:SLR": ("linear-response", build_slr),
    "fig:neg_mob": ("negative-mobility", build_neg_mob),
    "fig:resonance": ("resonance-scan", build_resonance),
    "fig:resonance_dir": ("resonance-scan", build_resonance_dir),
    "fig:diff": ("diffusion-sweep", build_diff),
    "fig:spec": ("diffusion-sweep", build_spec),
    "fig:diff_zoom": ("diffusion-sweep", build_diff_zoom),
}


def build(kind, paths):
    """Parse the CSVs, check tags, and return the assembled figure."""
    expected, builder = KINDS[kind]
    tables = []
    for p in paths:
        t = read_table(p)
        tag = t.meta.get("experiment")
        if tag != expected:
            raise SchemaError(f"{p}: experiment tag '{tag}' does not match "
                              f"kind '{kind}' (needs '{expected}')")
        tables.append(t)
    return builder(tables)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="render.py", description="Render a figure from langesim result CSVs.")
    parser.add_argument("--kind", required=True, choices=sorted(KINDS),
                        help="figure kind tag")
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV", help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        fig = build(args.kind, args.inputs)
    except SchemaError as e:
        print(f"render.py: {e}", file=sys.stderr)
        return 2
    fig.savefig(args.out, dpi=150)
    plt.close(fig)
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
