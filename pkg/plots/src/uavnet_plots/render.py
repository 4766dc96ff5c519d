"""Render experiment CSV series into static vector figures.

A figure spec is the same line-oriented `figure.key = value` format the
experiment configs use. Series come either from a grouping column (one curve
per distinct value) or from multiple y columns; rows sharing an x value within
a series are averaged, so multi-seed sweeps collapse to their mean curve.
Rendering never mutates the inputs and is deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "uavnet-plots"  # deterministic element ids
import matplotlib.pyplot as plt  # noqa: E402


class SpecError(ValueError):
    """Bad figure spec: unknown key, missing field, unreadable value."""


class CsvDataError(ValueError):
    """Input CSV missing, malformed, or lacking the requested data."""


_KNOWN_KEYS = {"input", "x", "y", "group", "series", "out", "xlabel", "ylabel",
               "title", "logy", "smooth"}


@dataclass
class FigureSpec:
    input_csv: str
    x: str
    y: tuple
    out: str
    group: str | None = None
    series: tuple | None = None     # expected series names, error when absent
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    logy: bool = False
    smooth: int = 1                 # rolling-mean window over x order


@dataclass
class RenderResult:
    path: Path
    series_names: list
    points_per_series: dict = field(default_factory=dict)


def parse_figure_spec(text: str) -> FigureSpec:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'figure.key = value'")
        key, _, tok = line.partition("=")
        key = key.strip()
        tok = tok.strip()
        if not key.startswith("figure."):
            raise SpecError(f"line {lineno}: keys must start with 'figure.'")
        name = key[len("figure."):]
        if name not in _KNOWN_KEYS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        values[name] = tok
    for required in ("input", "x", "y", "out"):
        if required not in values:
            raise SpecError(f"missing required key figure.{required}")
    smooth = 1
    if "smooth" in values:
        try:
            smooth = max(1, int(values["smooth"]))
        except ValueError:
            raise SpecError(f"figure.smooth expects an integer, got {values['smooth']!r}")
    return FigureSpec(
        input_csv=values["input"],
        x=values["x"],
        y=tuple(t.strip() for t in values["y"].split(",") if t.strip()),
        out=values["out"],
        group=values.get("group") or None,
        series=(tuple(t.strip() for t in values["series"].split(",") if t.strip())
                if "series" in values else None),
        xlabel=values.get("xlabel", ""),
        ylabel=values.get("ylabel", ""),
        title=values.get("title", ""),
        logy=values.get("logy", "false").lower() in ("true", "1", "yes"),
        smooth=smooth)


def _read_csv(path: Path) -> tuple[list[str], list[dict]]:
    if not path.exists():
        raise CsvDataError(f"input CSV not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvDataError(f"{path}: empty file, no header") from None
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvDataError(
                    f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")
            rows.append(dict(zip(header, row)))
    return header, rows


def _to_float(value: str, path: Path, rownum: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise CsvDataError(
            f"{path}: row {rownum} column {column!r} is not numeric: {value!r}") from None


def _rolling_mean(ys: list[float], window: int) -> list[float]:
    if window <= 1:
        return ys
    out = []
    acc = 0.0
    for i, v in enumerate(ys):
        acc += v
        if i >= window:
            acc -= ys[i - window]
        out.append(acc / min(i + 1, window))
    return out


def collect_series(spec: FigureSpec, csv_path: Path) -> dict[str, tuple[list, list]]:
    """Series name -> (xs, ys), averaged over duplicate x values, x-sorted."""
    header, rows = _read_csv(csv_path)
    needed = [spec.x, *spec.y] + ([spec.group] if spec.group else [])
    for col in needed:
        if col not in header:
            raise CsvDataError(
                f"{csv_path}: column {col!r} not in header {header}")
    if not rows:
        raise CsvDataError(f"{csv_path}: no data rows under the header")

    buckets: dict[str, dict[float, list[float]]] = {}
    for rownum, row in enumerate(rows, start=2):
        x = _to_float(row[spec.x], csv_path, rownum, spec.x)
        for ycol in spec.y:
            if spec.group:
                name = row[spec.group] if len(spec.y) == 1 else f"{row[spec.group]}:{ycol}"
            else:
                name = ycol
            y = _to_float(row[ycol], csv_path, rownum, ycol)
            if math.isnan(y):
                continue
            buckets.setdefault(name, {}).setdefault(x, []).append(y)

    series: dict[str, tuple[list, list]] = {}
    for name, pts in buckets.items():
        xs = sorted(pts)
        ys = [sum(pts[x]) / len(pts[x]) for x in xs]
        series[name] = (xs, _rolling_mean(ys, spec.smooth))
    if spec.series is not None:
        missing = [s for s in spec.series if s not in series]
        if missing:
            raise CsvDataError(
                f"{csv_path}: series {missing} not found; available groups: "
                f"{sorted(series)}")
        series = {name: series[name] for name in spec.series}
    return series


def render(spec: FigureSpec, base_dir: Path | None = None,
           out_dir: Path | None = None) -> RenderResult:
    """Render one figure; returns the output path and per-series point counts."""
    base = base_dir or Path(".")
    csv_path = base / spec.input_csv
    series = collect_series(spec, csv_path)

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name in sorted(series):
        xs, ys = series[name]
        ax.plot(xs, ys, label=str(name), linewidth=1.4)
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel(spec.xlabel or spec.x)
    ax.set_ylabel(spec.ylabel or ", ".join(spec.y))
    if spec.title:
        ax.set_title(spec.title)
    if len(series) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()

    out_path = Path(spec.out)
    if out_dir is not None:
        out_path = Path(out_dir) / out_path.name
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, metadata={"Date": None})
    plt.close(fig)
    return RenderResult(out_path, sorted(series),
                        {name: len(series[name][0]) for name in series})
