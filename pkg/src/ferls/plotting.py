"""SVG figures from metrics CSVs.

Stream CSVs (``one_step`` column) give error-vs-time curves with 10/50/90 %
bands plus coefficient traces; autonomy CSVs (``x_0`` column) give top-down
paths. Output is byte-stable for a given CSV and matplotlib version.
"""
import csv
from pathlib import Path

import numpy as np

from .errors import ParseError


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise ParseError(f"{path}: empty CSV", 1)
    header, body = rows[0], rows[1:]
    if not body:
        raise ParseError(f"{path}: header but no data rows", 2)
    cols = {h: [] for h in header}
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(r)}", i)
        for h, v in zip(header, r):
            cols[h].append(v)
    return header, cols


def _num(vals):
    return np.array([float(v) if v != "" else np.nan for v in vals])


def _figure(nrows):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "ferls"
    matplotlib.rcParams["svg.fonttype"] = "path"
    fig, axes = plt.subplots(nrows, 1, figsize=(7, 2.6 * nrows), squeeze=False)
    return plt, fig, axes[:, 0]


def _bands(ax, t, batch, label):
    uniq = np.unique(t)
    groups = [batch[t == u] for u in uniq]
    with np.errstate(all="ignore"):
        q = np.array([np.nanquantile(g, (0.1, 0.5, 0.9)) if np.any(np.isfinite(g)) else [np.nan] * 3
                      for g in groups])
    ax.plot(uniq, q[:, 1], marker="." if len(uniq) == 1 else None, label=label)
    ax.fill_between(uniq, q[:, 0], q[:, 2], alpha=0.25)


def plot_stream(header, cols, ax_list):
    t = _num(cols["t"])
    model = cols["model"][0]
    _bands(ax_list[0], t, _num(cols["one_step"]), model)
    ax_list[0].set_ylabel("one-step error")
    _bands(ax_list[1], t, _num(cols["kstep"]), model)
    ax_list[1].set_ylabel("k-step error")
    alphas = [h for h in header if h.startswith("alpha_")]
    if alphas:
        first = [(s, j) for s, j in zip(cols["seed"], cols["start"])][0]
        mask = np.array([(s, j) == first for s, j in zip(cols["seed"], cols["start"])])
        for h in alphas:
            ax_list[2].plot(t[mask], _num(cols[h])[mask], lw=1, label=h)
        ax_list[2].set_ylabel("coefficients")
    ax_list[-1].set_xlabel("time [s]")
    ax_list[0].legend(loc="upper right")


def plot_autonomy(header, cols, ax_list):
    x, y = _num(cols["x_0"]), _num(cols["x_1"])
    seeds = np.array(cols["seed"])
    for s in dict.fromkeys(cols["seed"]):
        m = seeds == s
        ax_list[0].plot(x[m], y[m], lw=1, marker="." if m.sum() == 1 else None, label=f"seed {s}")
    ax_list[0].set_aspect("equal", adjustable="datalim")
    ax_list[0].set_xlabel("x [m]")
    ax_list[0].set_ylabel("y [m]")
    alphas = [h for h in header if h.startswith("alpha_")]
    if alphas:
        m = seeds == cols["seed"][0]
        t = _num(cols["t"])
        for h in alphas:
            ax_list[1].plot(t[m], _num(cols[h])[m], lw=1)
        ax_list[1].set_xlabel("time [s]")
        ax_list[1].set_ylabel("coefficients")


def plot_csv(src, dest):
    header, cols = read_csv(src)
    has_alpha = any(h.startswith("alpha_") for h in header)
    if "one_step" in header:
        plt, fig, axes = _figure(3 if has_alpha else 2)
        plot_stream(header, cols, axes)
    elif "x_0" in header:
        plt, fig, axes = _figure(2 if has_alpha else 1)
        plot_autonomy(header, cols, axes)
    else:
        raise ParseError(f"{src}: unrecognized metrics CSV (no one_step or x_0 column)", 1)
    fig.tight_layout()
    Path(dest).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(dest, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(dest)
