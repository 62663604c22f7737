"""Evaluation metrics and the ablation table.

All regression metrics are in physical units (mm, mm^2) over the pooled
frames of every test fold.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

RWT_NAMES = ("IS", "I", "IL", "AL", "A", "AS")
DIM_NAMES = ("dim1", "dim2", "dim3")
AREA_NAMES = ("cavity", "myocardium")

# (section title, row names, label-matrix columns, decimals)
SECTIONS = (
    ("RWT (mm)", RWT_NAMES, tuple(range(5, 11)), 2),
    ("Dimension (mm)", DIM_NAMES, (2, 3, 4), 2),
    ("Area (mm^2)", AREA_NAMES, (0, 1), 0),
)
SECTION_KEYS = {"RWT (mm)": "rwt", "Dimension (mm)": "dim", "Area (mm^2)": "area"}


def mae(preds, labels):
    """Per-column mean and standard deviation of |pred - label|."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"predictions {p.shape} vs labels {y.shape}")
    if p.ndim == 1:
        p, y = p[:, None], y[:, None]
    err = np.abs(p - y)
    return err.mean(axis=0), err.std(axis=0)


def phase_error_rate(p_diastole, labels) -> float:
    """Percent of frames misclassified; p >= 0.5 is called diastole (0)."""
    p = np.asarray(p_diastole, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} vs labels {y.shape}")
    if len(p) == 0:
        return 0.0
    pred = np.where(p >= 0.5, 0, 1)
    return 100.0 * float(np.mean(pred != y))


@dataclass
class MetricsReport:
    label: str
    rows: dict = field(default_factory=dict)  # index name -> (mae, std)
    averages: dict = field(default_factory=dict)  # "rwt"/"dim"/"area" -> (mae, std)
    phase_error_rate: float = 0.0
    n_frames: int = 0

    def average(self, key: str) -> float:
        return self.averages[key][0]


def compute_report(pred_mm, labels_mm, p_diastole, phase, label: str = "intra/inter") -> MetricsReport:
    """Build a report from (N, 11+) prediction/label matrices in label layout."""
    p = np.asarray(pred_mm, dtype=np.float64)[:, :11]
    y = np.asarray(labels_mm, dtype=np.float64)[:, :11]
    means, stds = mae(p, y)
    err = np.abs(p - y)
    rep = MetricsReport(label=label, phase_error_rate=phase_error_rate(p_diastole, phase), n_frames=len(p))
    for title, names, cols, _ in SECTIONS:
        for name, c in zip(names, cols):
            rep.rows[name] = (float(means[c]), float(stds[c]))
        per_frame = err[:, list(cols)].mean(axis=1)
        rep.averages[SECTION_KEYS[title]] = (float(np.mean([means[c] for c in cols])), float(per_frame.std()))
    return rep


def _cell(mean, std, decimals):
    return f"{mean:.{decimals}f}±{std:.{decimals}f}"


def render_report(reports) -> tuple[str, str]:
    """Table-style text and CSV renderings of one or more configurations."""
    reports = list(reports)
    if not reports:
        raise ValueError("render_report needs at least one report")
    labels = [r.label for r in reports]
    body = []  # (kind, name, cells) where kind is 'header' or 'row'
    csv_rows = []
    for title, names, _, dec in SECTIONS:
        body.append(("header", title, None))
        for name in names + ("Average",):
            cells = []
            for r in reports:
                m, s = r.averages[SECTION_KEYS[title]] if name == "Average" else r.rows[name]
                cells.append(_cell(m, s, dec))
                csv_rows.append([title, name, r.label, f"{m:.{dec}f}", f"{s:.{dec}f}"])
            body.append(("row", name, cells))
    body.append(("header", "Phase (%)", None))
    cells = []
    for r in reports:
        cells.append(f"{r.phase_error_rate:.1f}")
        csv_rows.append(["Phase (%)", "phase", r.label, f"{r.phase_error_rate:.1f}", ""])
    body.append(("row", "phase", cells))

    name_w = max(len(b[1]) for b in body if b[0] == "row")
    col_w = max([len(lab) for lab in labels] + [len(c) for b in body if b[2] for c in b[2]])
    head = f"{'Method':<{name_w}} | " + " | ".join(f"{lab:>{col_w}}" for lab in labels)
    rule = "-" * len(head)
    lines = [head, rule]
    for kind, name, cells in body:
        if kind == "header":
            lines += [name.center(len(head)), rule] if lines[-1] == rule else [rule, name.center(len(head)), rule]
        else:
            lines.append(f"{name:<{name_w}} | " + " | ".join(f"{c:>{col_w}}" for c in cells))
    lines.append(rule)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "index", "config", "mean", "std"])
    w.writerows(csv_rows)
    return "\n".join(lines), buf.getvalue()
