"""Report serialization: JSON + CSV artifacts with atomic writes.

All floating values are serialized with 17 significant digits, which
round-trips float64 exactly: ``load_report(export(report))`` compares
equal to the original. Files are staged and renamed so a failed export
never leaves partial artifacts in the output directory.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

from .errors import DataError
from .kan import SplineDump
from .training import RunReport

__all__ = ["export", "load_report", "write_splines_csv"]


def _fmt(value: float) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    return str(value)


def _to_json(value, indent: int = 0) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _fmt(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        inner = ",\n".join("  " * (indent + 1) + _to_json(v, indent + 1) for v in value)
        return f"[\n{inner}\n{pad}]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        inner = ",\n".join(
            "  " * (indent + 1) + f"{json.dumps(str(k))}: {_to_json(v, indent + 1)}"
            for k, v in value.items()
        )
        return f"{{\n{inner}\n{pad}}}"
    raise TypeError(f"cannot serialize {type(value).__name__} to JSON")


def _csv_line(values) -> str:
    return ",".join(_fmt(v) for v in values) + "\n"


def _confusion_csv(report: RunReport) -> str:
    names = report.class_names
    lines = [_csv_line(["true\\pred", *names])]
    for name, row in zip(names, report.pooled.confusion):
        lines.append(_csv_line([name, *row]))
    return "".join(lines)


def _per_class_csv(report: RunReport) -> str:
    header = ["class", "precision", "recall", "f1", "support", "auc", "ap"]
    lines = [_csv_line(header)]
    for row in report.pooled.per_class:
        lines.append(
            _csv_line(
                [
                    row["name"],
                    row["precision"],
                    row["recall"],
                    row["f1"],
                    row["support"],
                    "" if row["auc"] is None else row["auc"],
                    "" if row["ap"] is None else row["ap"],
                ]
            )
        )
    return "".join(lines)


def _folds_csv(report: RunReport) -> str:
    lines = [_csv_line(["fold", "macro_f1", "accuracy", "best_epoch", "epochs_run"])]
    for f in report.folds:
        lines.append(_csv_line([f.fold, f.macro_f1, f.accuracy, f.best_epoch, f.epochs_run]))
    s = report.summary
    lines.append(_csv_line(["mean", s["macro_f1_mean"], s["accuracy_mean"], "", ""]))
    lines.append(_csv_line(["std", s["macro_f1_std"], s["accuracy_std"], "", ""]))
    return "".join(lines)


def _calibration_csv(report: RunReport) -> str:
    calib = report.pooled.calibration
    lines = [_csv_line(["bin", "mean_confidence", "accuracy", "count"])]
    for b, (conf, acc, count) in enumerate(
        zip(calib["bin_confidence"], calib["bin_accuracy"], calib["bin_count"])
    ):
        lines.append(_csv_line([b, conf, acc, count]))
    return "".join(lines)


def splines_csv_text(dump: SplineDump) -> str:
    lines = [_csv_line(["layer", "out_index", "in_index", "x", "phi"])]
    for curve in dump.curves:
        for x, phi in zip(curve.x, curve.phi):
            lines.append(_csv_line([curve.layer, curve.out_index, curve.in_index, float(x), float(phi)]))
    return "".join(lines)


def write_splines_csv(dump: SplineDump, path) -> None:
    Path(path).write_text(splines_csv_text(dump))


def export(report: RunReport, out_dir, spline_dump: SplineDump | None = None) -> list:
    """Write report.json plus the CSV views; returns the written paths.

    Everything is staged in a temp directory inside ``out_dir`` and
    renamed at the end, so either all files land or none do.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".export-", dir=out_dir))
    except OSError as exc:
        raise DataError(f"cannot write to {out_dir}: {exc}") from exc

    files = {
        "report.json": _to_json(report.to_dict()) + "\n",
        "confusion.csv": _confusion_csv(report),
        "per_class.csv": _per_class_csv(report),
        "folds.csv": _folds_csv(report),
        "calibration.csv": _calibration_csv(report),
    }
    if spline_dump is not None:
        files["splines.csv"] = splines_csv_text(spline_dump)

    written = []
    try:
        for name, text in files.items():
            (staging / name).write_text(text)
        for name in files:
            os.replace(staging / name, out_dir / name)
            written.append(str(out_dir / name))
    except OSError as exc:
        raise DataError(f"export to {out_dir} failed: {exc}") from exc
    finally:
        for leftover in staging.glob("*"):
            leftover.unlink(missing_ok=True)
        staging.rmdir()
    return written


def load_report(path) -> RunReport:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load report {path}: {exc}") from exc
    return RunReport.from_dict(data)
