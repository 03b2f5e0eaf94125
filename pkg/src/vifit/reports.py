"""Experiment reports: tagged metrics, JSON/CSV emission, SVG figure data.

Every metric cell is one of: a finite float, "inf", "-inf", or "na".
tables.csv must be byte-identical across reruns with the same seed and
config, so wall-clock runtimes appear only in report.json and the CSV
runtime column is pinned to "na".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("family", "rank", "kl_p_q", "kl_q_p", "logq_theta_star", "elbo", "runtime_s")


def fmt_metric(value) -> str:
    """Canonical cell text: finite decimal, 'inf', '-inf', or 'na'."""
    if value is None:
        return "na"
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        raise ValueError("NaN is not a reportable metric")
    return repr(value)


def parse_metric(text):
    if text == "na":
        return None
    if text == "inf":
        return math.inf
    if text == "-inf":
        return -math.inf
    return float(text)


@dataclass
class FamilyResult:
    """Metrics for one trained family; None encodes 'not applicable'."""

    family: str
    rank: int | None = None
    metrics: dict = field(default_factory=dict)
    runtime_s: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "rank": self.rank,
            "metrics": {k: fmt_metric(v) for k, v in self.metrics.items()},
            "runtime_s": self.runtime_s,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FamilyResult":
        return cls(
            family=doc["family"],
            rank=doc["rank"],
            metrics={k: parse_metric(v) for k, v in doc["metrics"].items()},
            runtime_s=doc["runtime_s"],
        )


@dataclass
class ExperimentReport:
    experiment: str
    seed: int
    config: dict
    families: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "families": [f.to_json_dict() for f in self.families],
            "extras": self.extras,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentReport":
        return cls(
            experiment=doc["experiment"],
            seed=doc["seed"],
            config=doc["config"],
            families=[FamilyResult.from_json_dict(f) for f in doc["families"]],
            extras=doc["extras"],
        )

    def csv_text(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for f in self.families:
            cells = [
                f.family,
                "na" if f.rank is None else str(f.rank),
                fmt_metric(f.metrics.get("kl_p_q")),
                fmt_metric(f.metrics.get("kl_q_p")),
                fmt_metric(f.metrics.get("logq_theta_star")),
                fmt_metric(f.metrics.get("elbo")),
                "na",  # wall-clock lives in report.json; CSV stays reproducible
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, out_dir, formats=("json", "csv")) -> list:
    """Write report.json / tables.csv / figure SVGs; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    formats = set(formats)
    unknown = formats - {"json", "csv", "svg"}
    if unknown:
        raise ValueError(f"unknown output formats: {sorted(unknown)}")
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(json.dumps(report.to_json_dict(), indent=2))
        written.append(path)
    if "csv" in formats:
        path = out_dir / "tables.csv"
        path.write_text(report.csv_text())
        written.append(path)
    if "svg" in formats:
        written.extend(_emit_svgs(report, out_dir))
    return written


# ---------------------------------------------------------------------------
# SVG figure data (hand-rolled: deterministic text, no plotting dependency)


def _fmt(x: float) -> str:
    return f"{x:.3f}"


class _Frame:
    """Maps data coordinates into a fixed SVG viewport."""

    def __init__(self, xlim, ylim, width=640, height=420, margin=40):
        self.xlim, self.ylim = xlim, ylim
        self.width, self.height, self.margin = width, height, margin

    def x(self, x):
        span = self.xlim[1] - self.xlim[0]
        return self.margin + (x - self.xlim[0]) / span * (self.width - 2 * self.margin)

    def y(self, y):
        span = self.ylim[1] - self.ylim[0]
        return self.height - self.margin - (y - self.ylim[0]) / span * (
            self.height - 2 * self.margin
        )

    def polyline(self, xs, ys, stroke, width="1", opacity="1"):
        pts = " ".join(f"{_fmt(self.x(a))},{_fmt(self.y(b))}" for a, b in zip(xs, ys))
        return (
            f'<polyline fill="none" stroke="{stroke}" stroke-width="{width}" '
            f'stroke-opacity="{opacity}" points="{pts}"/>'
        )

    def circle(self, x, y, r, fill):
        return f'<circle cx="{_fmt(self.x(x))}" cy="{_fmt(self.y(y))}" r="{r}" fill="{fill}"/>'

    def document(self, body: list) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">'
        )
        frame_rect = (
            f'<rect x="{self.margin}" y="{self.margin}" '
            f'width="{self.width - 2 * self.margin}" '
            f'height="{self.height - 2 * self.margin}" fill="none" stroke="#888"/>'
        )
        return "\n".join([head, frame_rect, *body, "</svg>"]) + "\n"


def svg_atom_curves(doc: dict) -> str:
    """Posterior atom curves over an input grid, truth and data overlaid."""
    xs = np.asarray(doc["x"])
    curves = np.asarray(doc["curves"])
    weights = np.asarray(doc["weights"])
    ys = [curves.min(), curves.max()]
    if "truth" in doc:
        truth = np.asarray(doc["truth"])
        ys = [min(ys[0], truth.min()), max(ys[1], truth.max())]
    pad = 0.05 * (ys[1] - ys[0] + 1e-9)
    frame = _Frame((float(xs.min()), float(xs.max())), (ys[0] - pad, ys[1] + pad))
    body = []
    w_max = weights.max() if weights.size else 1.0
    for curve, w in zip(curves, weights):
        opacity = 0.08 + 0.6 * (w / w_max)
        body.append(frame.polyline(xs, curve, "#3366cc", opacity=f"{opacity:.3f}"))
    if "truth" in doc:
        body.append(frame.polyline(xs, doc["truth"], "#000000", width="2"))
    for x, t in zip(doc.get("data_x", []), doc.get("data_t", [])):
        body.append(frame.circle(x, t, 2.5, "#a0522d"))
    return frame.document(body)


def _ellipse_path(frame, mean, cov, scale, stroke):
    angles = np.linspace(0.0, 2.0 * np.pi, 120)
    vals, vecs = np.linalg.eigh(cov)
    radii = scale * np.sqrt(np.maximum(vals, 0.0))
    circle = np.stack([np.cos(angles), np.sin(angles)])
    pts = (vecs @ (radii[:, None] * circle)).T + mean
    return frame.polyline(pts[:, 0], pts[:, 1], stroke)


def svg_isolines(doc: dict) -> str:
    """1- and 2-sigma isolines of 2-D Gaussian fits around the target."""
    target_mean = np.asarray(doc["target_mean"])[:2]
    target_cov = np.asarray(doc["target_cov"])[:2, :2]
    spread = 2.8 * math.sqrt(float(np.max(np.diag(target_cov))))
    frame = _Frame(
        (target_mean[0] - spread, target_mean[0] + spread),
        (target_mean[1] - spread, target_mean[1] + spread),
    )
    body = []
    for s in (1.0, 2.0):
        body.append(_ellipse_path(frame, target_mean, target_cov, s, "#555555"))
    palette = ("#cc3333", "#2277cc", "#22aa66", "#aa7722", "#7744cc", "#cc44aa")
    for i, fit in enumerate(doc.get("fits", [])):
        mean = np.asarray(fit["mean"])[:2]
        cov = np.asarray(fit["cov"])[:2, :2]
        color = palette[i % len(palette)]
        for s in (1.0, 2.0):
            body.append(_ellipse_path(frame, mean, cov, s, color))
    for point in doc.get("atoms", []):
        body.append(frame.circle(point[0], point[1], 3, "#cc3333"))
    return frame.document(body)


def _emit_svgs(report: ExperimentReport, out_dir: Path) -> list:
    written = []
    if "dropout_curves" in report.extras:
        path = out_dir / "posterior_atoms.svg"
        path.write_text(svg_atom_curves(report.extras["dropout_curves"]))
        written.append(path)
    if "isolines" in report.extras:
        path = out_dir / "posterior_isolines.svg"
        path.write_text(svg_isolines(report.extras["isolines"]))
        written.append(path)
    return written
