"""Render a ReportBundle to files: delimited tables, JSON, logs, figures.

Writers are deterministic: rerunning the same experiment with the same seed
produces byte-identical files.  Wall time therefore never enters a file; it
is returned to the caller for console display only.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

from .continual import ResultsMatrix
from .errors import ConfigError

MATRIX_COLUMNS = ["step", "domain", "em", "f1", "overall", "rel_change"]
FORMATS = ("csv", "structured-text")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _text_table(columns: list[str], rows: list[list[str]]) -> str:
    widths = [len(c) for c in columns]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(columns), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def matrix_text(matrix: ResultsMatrix) -> str:
    """Step-by-domain grid; off-diagonal cells carry the relative F1 change."""
    columns = ["step"] + matrix.domains + ["overall"]
    rows = []
    for row in matrix.rows:
        cells = [str(row["step"])]
        for domain in matrix.domains:
            got = row["scores"].get(domain)
            if got is None:
                cells.append("")
                continue
            rel = matrix.rel_change(row["step"], domain)
            f1 = f"{got[1]:.2f}"
            cells.append(f1 if rel is None else f"{f1} ({rel:+.1f}%)")
        cells.append(f"{row['overall']:.2f}")
        rows.append(cells)
    return _text_table(columns, rows)


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode()


def write_report(bundle, out_dir, fmt: str = "csv", figures: bool = True) -> list[Path]:
    """Write every artifact for a bundle; returns the sorted list of paths."""
    if fmt not in FORMATS:
        raise ConfigError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    base = Path(out_dir)
    base.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    payload = bundle.to_dict()
    payload["meta"] = {k: v for k, v in payload["meta"].items()
                       if k != "wall_time_s"}
    path = base / "bundle.json"
    path.write_bytes(_json_bytes(payload))
    written.append(path)

    if fmt == "csv":
        for run_id, matrix in bundle.matrices.items():
            path = base / f"matrix-{_safe(run_id)}.csv"
            _write_csv(path, MATRIX_COLUMNS, matrix.to_records())
            written.append(path)
        if bundle.curves:
            rows = [pt for rid in sorted(bundle.curves) for pt in bundle.curves[rid]]
            columns = ["run_id", "tracked", "during", "domain_pos", "epoch",
                       "global_epoch", "em", "f1"]
            path = base / "curves.csv"
            _write_csv(path, columns, rows)
            written.append(path)
        for name in sorted(bundle.tables):
            rows = bundle.tables[name]
            if not rows:
                continue
            columns = list(rows[0])
            path = base / f"table-{_safe(name)}.csv"
            _write_csv(path, columns, rows)
            written.append(path)
    else:
        chunks = []
        for run_id, matrix in bundle.matrices.items():
            chunks.append(f"== matrix {run_id} ==\n" + matrix_text(matrix))
        for name in sorted(bundle.tables):
            rows = bundle.tables[name]
            if not rows:
                continue
            columns = list(rows[0])
            body = [[_cell(r.get(c)) for c in columns] for r in rows]
            chunks.append(f"== table {name} ==\n" + _text_table(columns, body))
        if bundle.curves:
            columns = ["run_id", "tracked", "during", "domain_pos", "epoch",
                       "global_epoch", "em", "f1"]
            rows = [[_cell(pt.get(c)) for c in columns]
                    for rid in sorted(bundle.curves) for pt in bundle.curves[rid]]
            chunks.append("== curves ==\n" + _text_table(columns, rows))
        path = base / "report.txt"
        path.write_text("\n".join(chunks), encoding="utf-8")
        written.append(path)

    logs_dir = base / "logs"
    if bundle.logs:
        logs_dir.mkdir(exist_ok=True)
    for run_id in sorted(bundle.logs):
        path = logs_dir / f"{_safe(run_id)}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for rec in bundle.logs[run_id]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        written.append(path)

    for run_id in sorted(bundle.predictions):
        run_dir = base / "predictions" / _safe(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        for domain in sorted(bundle.predictions[run_id]):
            path = run_dir / f"{_safe(domain)}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                for rec in bundle.predictions[run_id][domain]:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            written.append(path)

    if figures:
        written.extend(render_figures(bundle, base))
    return sorted(written)


def render_figures(bundle, base: Path) -> list[Path]:
    """Matrix heatmaps plus, when present, curve and sweep plots."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    save_kw = {"dpi": 120, "metadata": {"Software": None}}
    written: list[Path] = []

    for run_id, matrix in bundle.matrices.items():
        n = len(matrix.domains)
        grid = np.full((len(matrix.rows), n), np.nan)
        for i, row in enumerate(matrix.rows):
            for j, domain in enumerate(matrix.domains):
                if domain in row["scores"]:
                    grid[i, j] = row["scores"][domain][1]
        fig, ax = plt.subplots(figsize=(1.2 * n + 2.5, 1.0 * len(matrix.rows) + 1.5))
        im = ax.imshow(grid, cmap="viridis", vmin=0.0, vmax=100.0)
        ax.set_xticks(range(n), matrix.domains, rotation=30, ha="right")
        ax.set_yticks(range(len(matrix.rows)),
                      [f"step {r['step']}" for r in matrix.rows])
        for i in range(len(matrix.rows)):
            for j in range(n):
                if not np.isnan(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center",
                            color="white", fontsize=8)
        ax.set_title(f"F1 after each training step ({run_id})")
        fig.colorbar(im, ax=ax, label="F1")
        fig.tight_layout()
        path = base / f"fig-matrix-{_safe(run_id)}.png"
        fig.savefig(path, **save_kw)
        plt.close(fig)
        written.append(path)

    if bundle.curves:
        fig, ax = plt.subplots(figsize=(7, 4.2))
        for run_id in sorted(bundle.curves):
            pts = bundle.curves[run_id]
            ax.plot([p["global_epoch"] for p in pts], [p["f1"] for p in pts],
                    marker="o", markersize=3.5, label=run_id)
        tracked = next(iter(bundle.curves.values()))[0]["tracked"] \
            if any(bundle.curves.values()) else "?"
        ax.set_xlabel("epoch boundary (cumulative)")
        ax.set_ylabel(f"F1 on {tracked}")
        ax.set_title("Tracked-domain F1 over the training sequence")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = base / "fig-curves.png"
        fig.savefig(path, **save_kw)
        plt.close(fig)
        written.append(path)

    sweep = bundle.tables.get("adapter_sweep_overall")
    if sweep:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([r["d_s"] for r in sweep], [r["overall"] for r in sweep],
                marker="o")
        ax.set_xlabel("adapter width")
        ax.set_ylabel("summed F1 over domains")
        ax.set_title("Adapter width sweep")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = base / "fig-sweep.png"
        fig.savefig(path, **save_kw)
        plt.close(fig)
        written.append(path)
    return written
