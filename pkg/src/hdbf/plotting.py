"""Line charts of sweep results, one SVG per metric."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRICS = ("mdr", "vr", "rate")
LABELS = {"fs": "FS", "cq": "CQ", "plugin": "PA-surrogate"}
YLABELS = {"mdr": "MDR", "vr": "VR", "rate": "rejection rate"}
AXIS_LABELS = {"p": "dimension p", "lambda": r"common shift $\lambda$", "eta": r"signal $\eta$", None: "run"}
REFERENCE = {"mdr": 0.0, "vr": 1.0}
STYLE = {"fs": ("C0", "o", "-"), "cq": ("C1", "s", "--"), "plugin": ("C2", "^", "-.")}

# Byte-stable SVG: no timestamps, fixed element ids, glyphs as paths.
_RC = {
    "svg.hashsalt": "hdbf",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _series(rows, test, metric):
    pts = [(r.axis_value, getattr(r, metric)) for r in rows if r.test == test]
    xs = [0 if x is None else x for x, _ in pts]
    ys = [float("nan") if y is None else y for _, y in pts]
    return xs, ys


def plot_sweep(rows: Sequence, out_dir, axis: str | None = None) -> list[Path]:
    """Render ``mdr.svg``, ``vr.svg`` and ``rate.svg``; each test is one line with gid ``<metric>-<test>``."""
    out_dir = Path(out_dir)
    tests = list(dict.fromkeys(r.test for r in rows))
    paths = []
    with plt.rc_context(_RC):
        for metric in METRICS:
            fig, ax = plt.subplots(figsize=(4.5, 3.2))
            for test in tests:
                xs, ys = _series(rows, test, metric)
                color, marker, ls = STYLE.get(test, ("k", "x", ":"))
                (line,) = ax.plot(xs, ys, color=color, marker=marker, ls=ls, lw=1.2, ms=4,
                                  label=LABELS.get(test, test))
                line.set_gid(f"{metric}-{test}")
            if metric in REFERENCE:
                ax.axhline(REFERENCE[metric], color="0.6", lw=0.8, ls=":", zorder=0)
            ax.set_xlabel(AXIS_LABELS.get(axis, axis))
            ax.set_ylabel(YLABELS[metric])
            ax.legend(frameon=False)
            fig.tight_layout()
            path = out_dir / f"{metric}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
