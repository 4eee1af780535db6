"""Reports and their CSV / JSON / SVG persistence.

Outputs are byte-stable for a fixed config and seed: floats are written
with ``repr`` (exact round trip), wall times are left blank unless the
config asks for them, and SVG files carry a fixed hash salt and no date.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Report:
    """Rows of one experiment plus derived fits and pass flags.

    ``fits`` and ``flags`` are functions of ``rows`` and ``config`` only;
    :meth:`recompute` rebuilds them from scratch.
    """

    experiment: str
    config: dict
    columns: list
    rows: list
    fits: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    plot: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.flags) and all(self.flags.values())

    def recompute(self) -> tuple[dict, dict]:
        from .experiments import SUMMARIZERS

        return SUMMARIZERS[self.experiment](self.rows, self.config)

    def failed_flags(self) -> list[str]:
        return [k for k, v in self.flags.items() if not v]

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "config": self.config, "columns": list(self.columns),
                "rows": self.rows, "fits": self.fits, "flags": self.flags, "passed": self.passed,
                "plot": self.plot, "artifacts": self.artifacts}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        data = json.loads(text)
        return cls(data["experiment"], data["config"], data["columns"], data["rows"], data["fits"],
                   data["flags"], data.get("plot", {}), data.get("artifacts", {}))

    def summary(self) -> str:
        lines = [f"{self.experiment}: {'PASS' if self.passed else 'FAIL'}"]
        for k, v in self.flags.items():
            lines.append(f"  [{'ok' if v else 'FAIL'}] {k}")
        for k, v in self.fits.items():
            lines.append(f"  fit {k}: order {v['order']:.3f} +- {v['stderr']:.3f}")
        return "\n".join(lines)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        return x.item()
    return x


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return str(v)


def to_csv(report: Report, timing: bool = False) -> str:
    """CSV text with the report's columns as header; ``wall_ms`` is blank unless ``timing``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for row in report.rows:
        w.writerow(["" if (c == "wall_ms" and not timing) else _cell(row.get(c)) for c in report.columns])
    return buf.getvalue()


def to_svg(report: Report) -> str:
    """Log-log (or semilog) plot described by ``report.plot``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    spec = report.plot or {}
    x, y, group = spec.get("x"), spec.get("y", "error"), spec.get("group")
    with matplotlib.rc_context({"svg.hashsalt": "magctl", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        groups: dict = {}
        for i, row in enumerate(report.rows):
            xv = i if x is None else row.get(x)
            yv = row.get(y)
            if xv is None or yv is None or not _positive(yv) or (spec.get("logx", True) and not _positive(xv)):
                continue
            groups.setdefault(row.get(group, "") if group else "", []).append((float(xv), float(yv)))
        for label, pts in groups.items():
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=str(label) or None)
        if spec.get("logx", True) and groups:
            ax.set_xscale("log")
        if groups:
            ax.set_yscale("log")
        ax.set_xlabel(spec.get("xlabel", x or "index"))
        ax.set_ylabel(spec.get("ylabel", y))
        ax.set_title(report.experiment)
        if group and groups:
            ax.legend(fontsize=8)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def _positive(v) -> bool:
    try:
        f = float(v)
    except (TypeError, ValueError):
        return False
    return math.isfinite(f) and f > 0


def emit(report: Report, formats=("csv", "json", "svg"), out_dir=None, timing: bool = False) -> list[Path]:
    """Write ``<experiment>.csv/.json/.svg`` into ``out_dir``; returns the written paths."""
    out = Path(out_dir if out_dir is not None else report.config.get("out", "results"))
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    writers = {"csv": lambda: to_csv(report, timing), "json": report.to_json, "svg": lambda: to_svg(report)}
    for fmt in formats:
        if fmt not in writers:
            raise ValueError(f"unknown output format {fmt!r}")
        p = out / f"{report.experiment}.{fmt}"
        p.write_text(writers[fmt]())
        paths.append(p)
    return paths
