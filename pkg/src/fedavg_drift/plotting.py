"""Turn recipe CSVs into line-chart data: an SVG file or gnuplot data blocks."""

from __future__ import annotations

from pathlib import Path

from .experiments import read_csv

KINDS = ("svg", "gnuplot")


def _col(columns, name):
    """Plain column, or the ``_mean`` column of an aggregate CSV."""
    if name in columns:
        return name
    if f"{name}_mean" in columns:
        return f"{name}_mean"
    return None


def extract_series(columns: list[str], rows: list[dict]) -> tuple[str, str, dict]:
    """Pick (x label, y label, {series name: [(x, y), ...]}) for a recipe CSV."""
    sm, ms = _col(columns, "squared_mean_bias"), _col(columns, "mean_square_bias")
    if "H" in columns and sm and ms:
        series = {}
        groups = sorted({r["eps_var"] for r in rows}, key=float) if "eps_var" in columns else [None]
        for g in groups:
            sub = [r for r in rows if g is None or r["eps_var"] == g]
            tag = "" if g is None else f" (eps_var={g})"
            series[f"squared mean{tag}"] = [(float(r["H"]), float(r[sm])) for r in sub]
            series[f"mean square{tag}"] = [(float(r["H"]), float(r[ms])) for r in sub]
        return "local steps H", "gradient bias", series
    dist = _col(columns, "dist_sq")
    if "round" in columns and dist:
        series = {}
        if "algorithm" in columns:
            for r in rows:
                series.setdefault(r["algorithm"], []).append((float(r["round"]), float(r[dist])))
        else:
            series["dist_sq"] = [(float(r["round"]), float(r[dist])) for r in rows]
            if "bound" in columns:
                series["bound"] = [(float(r["round"]), float(r["bound"])) for r in rows]
        return "round", "||w - w_opt||^2", series
    rho = _col(columns, "rho") or _col(columns, "mean_rho")
    if "n" in columns and "M" in columns and rho:
        series = {}
        for r in rows:
            series.setdefault(f"n={r['n']}", []).append(
                (float(r["n"]) * float(r["M"]), float(r[rho])))
        return "n * M", "average drift at optimum", series
    raise ValueError(f"unrecognised CSV layout with columns {columns}")


def emit_plotdata(csv_path, kind: str = "svg", out_path=None) -> Path:
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    columns, rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    xlabel, ylabel, series = extract_series(columns, rows)
    out = Path(out_path) if out_path else Path(csv_path).with_suffix(
        ".svg" if kind == "svg" else ".dat")
    if kind == "gnuplot":
        blocks = []
        for name, pts in series.items():
            lines = [f'# series "{name}"', f"# {xlabel}\t{ylabel}"]
            lines += [f"{x!r}\t{y!r}" for x, y in pts]
            blocks.append("\n".join(lines))
        out.write_text("\n\n\n".join(blocks) + "\n")
        return out

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "fedavg-drift"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, pts in series.items():
        color = "tab:red" if name.startswith("squared mean") else (
            "tab:blue" if name.startswith("mean square") else None)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3,
                label=name, color=color)
    if all(p[1] > 0 for pts in series.values() for p in pts):
        ax.set_yscale("log")
    if xlabel in ("local steps H", "n * M"):
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out
