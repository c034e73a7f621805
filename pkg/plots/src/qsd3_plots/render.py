"""Render simulation CSVs into publication-style relaxation figures.

This package never recomputes physics: it draws exactly the columns found
in the delimited files the simulator CLI writes.  Line styles follow the
usual convention for these plots: <Jx> red dot-dashed, <Jy> green dashed,
<Jz> blue solid, with shaded +-1 standard-error bands where the stderr
columns are nonzero and dotted black overlays for deterministic reference
curves.  Output is PNG at a fixed 200 dpi.
"""

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# published schema of the simulator's observable CSV
EXPECTED_HEADER = (
    "t,Jx,Jx_se,Jy,Jy_se,Jz,Jz_se,purity,purity_se,"
    "rho00,rho11,rho22,re_rho01,im_rho01,re_rho02,im_rho02,re_rho12,im_rho12,n_traj"
)

DPI = 200
FIGWIDTH = 11.0


class RenderError(Exception):
    """Bad panel spec, missing file, or schema mismatch."""


def load_series(path) -> dict:
    """Read one schema-conforming CSV into a column dict.

    Raises :class:`RenderError` naming the path when the file is missing,
    the first offending column when the header deviates, or the file when
    it has a header but no data rows.
    """
    p = Path(path)
    if not p.exists():
        raise RenderError(f"input CSV does not exist: {p}")
    with open(p) as fh:
        header = fh.readline().strip()
        expected = EXPECTED_HEADER.split(",")
        got = header.split(",")
        if got != expected:
            for k, want in enumerate(expected):
                if k >= len(got) or got[k] != want:
                    found = got[k] if k < len(got) else "<missing>"
                    raise RenderError(
                        f"schema mismatch in {p}: column {k} is {found!r}, expected {want!r}"
                    )
            raise RenderError(f"schema mismatch in {p}: {len(got)} columns, expected {len(expected)}")
        body = [line for line in fh if line.strip()]
    if not body:
        raise RenderError(f"CSV has no data rows: {p}")
    data = np.loadtxt(body, delimiter=",", ndmin=2)
    return {name: data[:, k] for k, name in enumerate(expected)}


@dataclass(frozen=True)
class SeriesSpec:
    csv: str
    label: str
    oracle: str | None = None


@dataclass(frozen=True)
class PanelSpec:
    title: str
    series: tuple


@dataclass(frozen=True)
class FigureSpec:
    kind: str                 # "observables" or "purity"
    out: str
    panels: tuple
    suptitle: str | None = None


def figure_spec_from_dict(data: dict, base_dir=".") -> FigureSpec:
    try:
        kind = data["kind"]
        out = data["out"]
        raw_panels = data["panels"]
    except (KeyError, TypeError) as exc:
        raise RenderError(f"figure spec is missing required key: {exc}") from None
    if kind not in ("observables", "purity"):
        raise RenderError(f"kind must be 'observables' or 'purity', got {kind!r}")
    base = Path(base_dir)
    panels = []
    for p in raw_panels:
        series = tuple(
            SeriesSpec(
                csv=str(base / s["csv"]),
                label=s.get("label", Path(s["csv"]).stem),
                oracle=None if s.get("oracle") is None else str(base / s["oracle"]),
            )
            for s in p.get("series", [])
        )
        if not series:
            raise RenderError(f"panel {p.get('title', '?')!r} lists no series")
        panels.append(PanelSpec(title=p.get("title", ""), series=series))
    if not panels:
        raise RenderError("figure spec lists no panels")
    return FigureSpec(kind=kind, out=str(base / out), panels=tuple(panels),
                      suptitle=data.get("suptitle"))


_OBS_STYLES = (
    ("Jx", "Jx_se", dict(color="red", linestyle="-.", label=r"$\langle J_x\rangle$")),
    ("Jy", "Jy_se", dict(color="green", linestyle="--", label=r"$\langle J_y\rangle$")),
    ("Jz", "Jz_se", dict(color="blue", linestyle="-", label=r"$\langle J_z\rangle$")),
)


def _draw_observables(ax, cols, oracle_cols):
    for name, se_name, style in _OBS_STYLES:
        ax.plot(cols["t"], cols[name], linewidth=1.2, **style)
        if np.any(cols[se_name] != 0.0):
            ax.fill_between(
                cols["t"], cols[name] - cols[se_name], cols[name] + cols[se_name],
                color=style["color"], alpha=0.2, linewidth=0,
            )
    if oracle_cols is not None:
        for name, _, _ in _OBS_STYLES:
            ax.plot(oracle_cols["t"], oracle_cols[name], color="black",
                    linestyle=":", linewidth=1.0)
    ax.set_ylabel(r"$\langle \vec J\rangle$")


_PURITY_COLORS = ("red", "green", "blue", "purple", "orange")
_PURITY_STYLES = ("-.", "--", "-", ":", "-")


def _draw_purity(ax, series_cols, labels, oracle_cols_list):
    for k, (cols, label) in enumerate(zip(series_cols, labels)):
        color = _PURITY_COLORS[k % len(_PURITY_COLORS)]
        ax.plot(cols["t"], cols["purity"], color=color,
                linestyle=_PURITY_STYLES[k % len(_PURITY_STYLES)],
                linewidth=1.2, label=label)
        if np.any(cols["purity_se"] != 0.0):
            ax.fill_between(
                cols["t"], cols["purity"] - cols["purity_se"],
                cols["purity"] + cols["purity_se"],
                color=color, alpha=0.2, linewidth=0,
            )
    for oracle_cols in oracle_cols_list:
        if oracle_cols is not None:
            ax.plot(oracle_cols["t"], oracle_cols["purity"], color="black",
                    linestyle=":", linewidth=1.0)
    ax.set_ylabel(r"Tr$[\rho^2]$")


def render_figure(spec: FigureSpec) -> str:
    """Draw every panel of the spec and write the PNG; returns the path."""
    n = len(spec.panels)
    ncols = 2 if n > 1 else 1
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(FIGWIDTH, 3.2 * nrows), squeeze=False, sharex=False
    )
    for k, panel in enumerate(spec.panels):
        ax = axes[k // ncols][k % ncols]
        if spec.kind == "observables":
            cols = load_series(panel.series[0].csv)
            oracle = None if panel.series[0].oracle is None else load_series(panel.series[0].oracle)
            _draw_observables(ax, cols, oracle)
        else:
            series_cols = [load_series(s.csv) for s in panel.series]
            oracles = [None if s.oracle is None else load_series(s.oracle) for s in panel.series]
            _draw_purity(ax, series_cols, [s.label for s in panel.series], oracles)
        ax.set_title(panel.title)
        ax.set_xlabel(r"$t$")
        ax.legend(fontsize=8, loc="best")
    for k in range(n, nrows * ncols):
        axes[k // ncols][k % ncols].set_axis_off()
    if spec.suptitle:
        fig.suptitle(spec.suptitle)
    fig.tight_layout()
    fig.savefig(spec.out, dpi=DPI)
    plt.close(fig)
    return spec.out


def fig1_spec(directory) -> FigureSpec:
    """Panel layout for the relaxation preset: three gammas plus white noise."""
    base = Path(directory)
    panels = []
    for gamma in ("0.2", "0.8", "2.0"):
        panels.append(
            PanelSpec(
                title=f"gamma = {gamma}",
                series=(
                    SeriesSpec(
                        csv=str(base / f"fig1_gamma_{gamma}.csv"),
                        label=f"gamma={gamma}",
                        oracle=str(base / f"fig1_gamma_{gamma}_oracle.csv"),
                    ),
                ),
            )
        )
    panels.append(
        PanelSpec(
            title="white noise",
            series=(
                SeriesSpec(
                    csv=str(base / "fig1_markov.csv"),
                    label="white noise",
                    oracle=str(base / "fig1_markov_oracle.csv"),
                ),
            ),
        )
    )
    return FigureSpec(kind="observables", out=str(base / "fig1.png"), panels=tuple(panels))


def fig2_spec(directory) -> FigureSpec:
    """Purity preset: one panel per realization count, three gammas each."""
    base = Path(directory)
    panels = []
    for n in ("5", "1000"):
        series = tuple(
            SeriesSpec(
                csv=str(base / f"fig2_n{n}_gamma_{gamma}.csv"),
                label=f"gamma={gamma}",
                oracle=str(base / f"fig2_gamma_{gamma}_oracle.csv"),
            )
            for gamma in ("0.2", "0.8", "2.0")
        )
        panels.append(PanelSpec(title=f"{n} realizations", series=series))
    return FigureSpec(kind="purity", out=str(base / "fig2.png"), panels=tuple(panels))
