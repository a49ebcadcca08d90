"""CSV ingestion, bundled meta-analysis tables, and fit export (JSON, CSV, SVG)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import NotFoundError, ParseError
from .fitter import FitResult, exceedances, naive_fit
from .observation_sim import AccuracyRecord, ThresholdProfile
from .stats_core import PARAM_NAMES, CurveParams, biased_mean, observed_mean, true_curve

SCHEMA_VERSION = 1
CSV_COLUMNS = ("n", "accuracy", "study_id", "year")

BUNDLED = {
    "ni_ad": ("Neuroimaging-based classification, healthy controls vs Alzheimer's disease "
              "(Arbabshirani et al. 2017 meta-analysis)",
              "0742d4de537349026677cafa6b1615e31d1cec3b0b8a7de4bb83e1e267adac21"),
    "ni_sz": ("Neuroimaging-based classification, healthy controls vs schizophrenia "
              "(Arbabshirani et al. 2017 meta-analysis)",
              "732cbb25b2781720b6ca0eac5c6eb493012a5fd6dca11014c4ffed4d029a8c87"),
    "ni_asd": ("Neuroimaging-based classification, healthy controls vs autism spectrum disorder "
               "(Arbabshirani et al. 2017 meta-analysis)",
               "4cdba0513104d533b26ff3baab563054d26dc2961bac2c38ca4a5e6e16e656b8"),
    "ni_adhd": ("Neuroimaging-based classification, healthy controls vs ADHD "
                "(Arbabshirani et al. 2017 meta-analysis)",
                "49044e9c27206e0bdf137d60ab6657ab8c1aee5ba0dc5071023bde2814816ba9"),
}


@dataclass
class Dataset:
    name: str
    records: list[AccuracyRecord] = field(default_factory=list)
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.records)


def _parse_n(text: str, line: int) -> int:
    try:
        n = int(text.strip())
    except ValueError:
        raise ParseError(f"sample size {text!r} is not an integer", line, "n") from None
    if n < 2:
        raise ParseError(f"sample size {n} is below 2", line, "n")
    return n


def _parse_accuracy(text: str, line: int) -> float:
    try:
        acc = float(text.strip())
    except ValueError:
        raise ParseError(f"accuracy {text!r} is not a number", line, "accuracy") from None
    if not math.isfinite(acc) or not 0.0 < acc <= 1.0:
        raise ParseError(f"accuracy {text.strip()} out of range (0, 1]", line, "accuracy")
    return acc


def parse_csv(data: bytes | str, name: str = "", provenance: str = "") -> Dataset:
    """Parse ``n,accuracy[,study_id[,year]]`` rows with strict validation."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc}") from None
    rows = list(csv.reader(io.StringIO(data)))
    if not rows:
        return Dataset(name, [], provenance)
    header = [h.strip().lower() for h in rows[0]]
    if header[:2] != ["n", "accuracy"] or len(header) > 4 or any(
            h != CSV_COLUMNS[i] for i, h in enumerate(header)):
        raise ParseError("header must be n,accuracy[,study_id[,year]]", 1)
    records = []
    seen: set[str] = set()
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        n = _parse_n(row[0], line)
        acc = _parse_accuracy(row[1], line)
        study = row[2].strip() if len(row) > 2 and row[2].strip() else None
        year = None
        if len(row) > 3 and row[3].strip():
            try:
                year = int(row[3])
            except ValueError:
                raise ParseError(f"year {row[3]!r} is not an integer", line, "year") from None
        if study is not None:
            if study in seen:
                raise ParseError(f"duplicate study_id {study!r}", line, "study_id")
            seen.add(study)
        records.append(AccuracyRecord(n=n, accuracy=acc, study_id=study, year=year))
    return Dataset(name, records, provenance)


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_csv(dataset: Dataset | Sequence[AccuracyRecord]) -> str:
    records = dataset.records if isinstance(dataset, Dataset) else list(dataset)
    has_year = any(r.year is not None for r in records)
    has_id = has_year or any(r.study_id is not None for r in records)
    cols = ["n", "accuracy"] + (["study_id"] if has_id else []) + (["year"] if has_year else [])
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        row = [str(r.n), _fmt(r.accuracy)]
        if has_id:
            row.append(r.study_id or "")
        if has_year:
            row.append("" if r.year is None else str(r.year))
        w.writerow(row)
    return out.getvalue()


def bundled_names() -> list[str]:
    return sorted(BUNDLED)


def bundled_bytes(name: str) -> bytes:
    if name not in BUNDLED:
        raise NotFoundError(f"no bundled dataset named {name!r}; available: {', '.join(bundled_names())}")
    return resources.files("curvecorrect").joinpath("data", f"{name}.csv").read_bytes()


def bundled(name: str) -> Dataset:
    """One of the embedded meta-analysis tables (ni_ad, ni_sz, ni_asd, ni_adhd)."""
    raw = bundled_bytes(name)
    provenance, digest = BUNDLED[name]
    if hashlib.sha256(raw).hexdigest() != digest:
        raise ParseError(f"bundled table {name!r} failed its integrity check")
    return parse_csv(raw, name=name, provenance=provenance)


def fit_to_dict(result: FitResult, dataset_name: str = "") -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset": dataset_name,
        "params": result.params.as_dict(),
        "ci": None if result.ci is None else {k: list(v) for k, v in result.ci.items()},
        "flags": list(result.flags),
        "outliers": [r.study_id for r in result.outliers],
        "thresholds": [[n, g] for n, g in result.thresholds.pairs()],
        "pareto": [dict(p.as_dict(), f1=f1, f2=f2) for p, f1, f2 in result.pareto],
        "diagnostics": dict(result.diagnostics),
        "seed": result.diagnostics.get("seed"),
    }


def fit_from_dict(doc: dict) -> FitResult:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {doc.get('schema_version')!r}")
    params = CurveParams(**doc["params"])
    pareto = [(CurveParams(*(p[k] for k in PARAM_NAMES)), p["f1"], p["f2"]) for p in doc["pareto"]]
    ci = None if doc["ci"] is None else {k: tuple(v) for k, v in doc["ci"].items()}
    return FitResult(params=params, pareto=pareto, ci=ci,
                     thresholds=ThresholdProfile.from_pairs(doc["thresholds"]),
                     flags=list(doc["flags"]), diagnostics=dict(doc["diagnostics"]))


def curve_rows(result: FitResult, n_grid: Sequence[float]) -> list[tuple[float, ...]]:
    p = result.params
    rows = []
    for n in n_grid:
        gamma = result.thresholds.at(n)
        rows.append((float(n), true_curve(p, n), biased_mean(p, n),
                     observed_mean(p, gamma, n), float(result.upper_band(n))))
    return rows


def export_fit(result: FitResult, n_grid: Sequence[float], dataset_name: str = "",
               ) -> tuple[str, str]:
    """JSON document and curve CSV (n, true_curve, biased_mean, observed_mean, upper_band)."""
    doc = json.dumps(fit_to_dict(result, dataset_name), indent=2, sort_keys=True, allow_nan=False)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["n", "true_curve", "biased_mean", "observed_mean", "upper_band"])
    for row in curve_rows(result, n_grid):
        w.writerow([_fmt(v) for v in row])
    return doc + "\n", out.getvalue()


@dataclass(frozen=True)
class SvgOptions:
    width: int = 640
    height: int = 420
    title: str = ""
    show_naive: bool = True
    show_band: bool = True
    y_min: float | None = None
    y_max: float | None = None


def _num(x: float) -> str:
    return f"{x:.2f}"


def export_svg(dataset: Dataset, result: FitResult | None = None,
               options: SvgOptions | None = None) -> bytes:
    """Static log-x scatter of the records with the corrected and naive curves."""
    opt = options or SvgOptions()
    left, right, top, bottom = 60, 20, 30 if opt.title else 15, 45
    pw = opt.width - left - right
    ph = opt.height - top - bottom
    records = list(dataset.records)

    ns = [r.n for r in records] or [10, 1000]
    nlo = 10 ** math.floor(math.log10(min(ns)))
    nhi = 10 ** math.ceil(math.log10(max(ns) * 1.0001))
    ys = [r.accuracy for r in records]
    ylo = opt.y_min if opt.y_min is not None else (math.floor(min(ys + [0.5]) * 10) / 10)
    yhi = opt.y_max if opt.y_max is not None else 1.05

    def sx(n):
        return left + pw * (math.log10(n) - math.log10(nlo)) / (math.log10(nhi) - math.log10(nlo))

    def sy(y):
        return top + ph * (1.0 - (y - ylo) / (yhi - ylo))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{opt.width}" height="{opt.height}" '
        f'viewBox="0 0 {opt.width} {opt.height}">',
        "<style>.axis{stroke:#333;stroke-width:1}.grid{stroke:#ddd;stroke-width:0.5}"
        ".record{fill:#1f77b4;fill-opacity:0.7}.outlier{fill:#1f77b4;fill-opacity:0.25}"
        ".flagged{fill:#d62728;stroke:#000;stroke-width:0.8}"
        ".fitted{fill:none;stroke:#d62728;stroke-width:2;stroke-dasharray:8 3 2 3}"
        ".naive{fill:none;stroke:#1f77b4;stroke-width:1.5}"
        ".band{fill:none;stroke:#d62728;stroke-width:1;stroke-dasharray:3 3}"
        "text{font-family:sans-serif;font-size:11px}</style>",
    ]
    if opt.title:
        out.append(f'<text x="{opt.width / 2:.2f}" y="18" text-anchor="middle">{escape(opt.title)}</text>')
    decade = nlo
    while decade <= nhi * 1.0001:
        x = sx(decade)
        out.append(f'<line class="grid" x1="{_num(x)}" y1="{top}" x2="{_num(x)}" y2="{top + ph}"/>')
        out.append(f'<text x="{_num(x)}" y="{top + ph + 15}" text-anchor="middle">{decade:g}</text>')
        decade *= 10
    steps = int(round((yhi - ylo) / 0.1))
    for i in range(steps + 1):
        y = ylo + 0.1 * i
        if y > yhi + 1e-9:
            break
        out.append(f'<line class="grid" x1="{left}" y1="{_num(sy(y))}" x2="{left + pw}" y2="{_num(sy(y))}"/>')
        out.append(f'<text x="{left - 6}" y="{_num(sy(y) + 4)}" text-anchor="end">{y:.1f}</text>')
    out.append(f'<line class="axis" x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>')
    out.append(f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{opt.height - 8}" text-anchor="middle">sample size n (log scale)</text>')
    out.append(f'<text transform="translate(14 {top + ph / 2:.2f}) rotate(-90)" text-anchor="middle">accuracy</text>')

    if result is not None and records:
        grid = np.exp(np.linspace(math.log(nlo), math.log(nhi), 120))

        def path(values, cls):
            pts = [(sx(n), sy(min(max(v, ylo), yhi))) for n, v in zip(grid, values)]
            d = "M" + " L".join(f"{_num(x)} {_num(y)}" for x, y in pts)
            return f'<path class="{cls}" d="{d}"/>'

        if opt.show_naive and len({r.n for r in records}) >= 3:
            nv = naive_fit(records)
            out.append(path(nv.A + nv.alpha * grid ** nv.beta, "naive"))
        out.append(path(result.curve(grid), "fitted"))
        if opt.show_band:
            out.append(path(result.upper_band(grid), "band"))

    flagged = {id(row[1]) for row in exceedances(records, result)} if result is not None else set()
    outlier_keys = {(r.n, r.accuracy, r.study_id) for r in result.outliers} if result is not None else set()
    for r in records:
        cls = "record"
        if id(r) in flagged:
            cls = "flagged"
        elif (r.n, r.accuracy, r.study_id) in outlier_keys:
            cls = "outlier"
        label = escape(f"{r.study_id or ''} n={r.n} acc={r.accuracy:g}")
        out.append(f'<circle class="{cls}" cx="{_num(sx(r.n))}" cy="{_num(sy(r.accuracy))}" r="3.5">'
                   f"<title>{label}</title></circle>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")
