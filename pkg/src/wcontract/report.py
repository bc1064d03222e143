"""Output writers: CSV/JSON tables, manifests, gnuplot scripts and figures."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and dataclasses for json."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if not callable(getattr(obj, f.name))}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items() if not callable(v)}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclasses.dataclass
class Table:
    name: str
    columns: list
    rows: list
    plot: dict = dataclasses.field(default_factory=dict)   # {"x": col, "y": [cols], "logy": bool}

    def as_records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]


def write_csv(path, table: Table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for r in table.rows:
            w.writerow([_fmt(v) for v in r])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def gnuplot_script(table: Table, csv_name):
    p = table.plot
    if not p:
        return None
    cols = table.columns
    xi = cols.index(p["x"]) + 1
    lines = ["set datafile separator ','",
             "set key autotitle columnhead",
             f"set xlabel '{p['x']}'",
             f"set terminal pngcairo size 900,600",
             f"set output '{Path(csv_name).stem}.gp.png'"]
    if p.get("logy"):
        lines.append("set logscale y")
    if p.get("logx"):
        lines.append("set logscale x")
    plots = [f"'{csv_name}' using {xi}:{cols.index(y) + 1} with linespoints" for y in p["y"]]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def render_figure(table: Table, path):
    """PNG of the table's plot spec with matplotlib (Agg backend)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    p = table.plot
    data = np.array([[float(v) for v in r] for r in table.rows]) if table.rows else np.empty((0, 0))
    fig, ax = plt.subplots(figsize=(6, 4))
    x = data[:, table.columns.index(p["x"])]
    for y in p["y"]:
        ax.plot(x, data[:, table.columns.index(y)], marker="o", ms=3, label=y)
    if p.get("logy"):
        ax.set_yscale("log")
    if p.get("logx"):
        ax.set_xscale("log")
    ax.set_xlabel(p["x"])
    ax.legend()
    ax.set_title(table.name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_outputs(directory, tables, fmt="csv", figures=False):
    """Write every table (plus gnuplot script / figure); return {file: sha256}."""
    directory = Path(directory)
    digests = {}
    for t in tables:
        if fmt == "json":
            fname = f"{t.name}.json"
            write_json(directory / fname, {"columns": t.columns, "rows": t.rows})
        else:
            fname = f"{t.name}.csv"
            write_csv(directory / fname, t)
        digests[fname] = sha256(directory / fname)
        if t.plot and fmt == "csv":
            gp = gnuplot_script(t, fname)
            (directory / f"{t.name}.gp").write_text(gp, encoding="utf-8")
        if t.plot and figures:
            render_figure(t, directory / f"{t.name}.png")
    return digests


def atomic_dir(target):
    """Temporary sibling directory to fill before renaming onto target."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.parent / f".{target.name}.partial-{os.getpid()}"
    if tmp.exists():
        import shutil
        shutil.rmtree(tmp)
    tmp.mkdir()
    return tmp
