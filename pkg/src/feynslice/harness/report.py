"""CSV output for experiment reports.

Every line is one record: ``row`` (a measurement), ``fit`` (a fitted rate
or constant), ``warning`` or ``check``.  The experiment columns come first,
then ``record, config_hash, slope, message``.  Floats are written with 17
significant digits so a CSV round-trips the doubles exactly.
"""
from __future__ import annotations

import csv
import io
import math

TRAILER = ["record", "config_hash", "slope", "message"]


def fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def to_csv(report, checks=()) -> str:
    cols = list(report.columns) + TRAILER
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)

    def emit(rec, kind, slope=None, message=""):
        rec = dict(rec, record=kind, config_hash=report.config_hash,
                   slope=math.nan if slope is None else slope, message=message)
        w.writerow([fmt(rec.get(c)) if c != "message" else rec["message"] for c in cols])

    for r in report.rows:
        emit(r, "row")
    for f in report.fits:
        rest = {k: v for k, v in f.items() if k not in ("slope", "message")}
        emit(rest, "fit", f["slope"], f.get("message", ""))
    for n in report.notes:
        emit({}, "warning", message=n)
    for c in checks:
        emit({}, "check", c.value, f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}")
    return buf.getvalue()
