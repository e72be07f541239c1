"""CSV and gnuplot serialization of SolveRecords."""

from __future__ import annotations

import csv
import io
import math

from .forward import SolveRecord

COLUMNS = ("test_id", "model", "dim", "n_e", "k", "d0_elems", "d03_elems", "n_elements",
           "volume_fraction", "W0", "W", "gap", "seed", "status")
_INT = {"dim", "n_e", "d0_elems", "d03_elems", "n_elements", "seed"}
_FLOAT = {"k", "volume_fraction", "W0", "W", "gap"}


def format_float(x: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def _cell(name, value):
    if name in _FLOAT:
        return format_float(value)
    if name in _INT:
        return str(int(value))
    return str(value)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        writer.writerow([_cell(c, getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def write_csv(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(records_to_csv(records))


def parse_csv(text: str, source: str = "<csv>"):
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError(f"{source}: empty file")
    missing = [c for c in COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ValueError(f"{source}: missing columns {missing}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            kw = {c: int(row[c]) if c in _INT else float(row[c]) if c in _FLOAT else row[c]
                  for c in COLUMNS}
        except (TypeError, ValueError) as err:
            raise ValueError(f"{source}:{lineno}: {err}") from err
        out.append(SolveRecord(**kw))
    return out


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read(), str(path))


def records_to_dat(records, lines=()) -> str:
    """gnuplot data: one block of ``gap volume_fraction`` points per k, then the
    end points of each bound line, blocks separated by two blank lines.

    ``lines`` holds ``(label, BoundsLine)`` pairs.
    """
    by_k = {}
    for r in records:
        if r.status == "ok":
            by_k.setdefault(float(r.k), []).append(r)
    blocks = []
    gmax = max((r.gap for rs in by_k.values() for r in rs if math.isfinite(r.gap)),
               default=0.0)
    for k in sorted(by_k):
        rows = [f"# points k={format_float(k)}", "# gap volume_fraction"]
        rows += [f"{format_float(r.gap)} {format_float(r.volume_fraction)}" for r in by_k[k]]
        blocks.append("\n".join(rows))
    for label, line in lines:
        for name, coef in (("lower", line.lower_coef), ("upper", line.upper_coef)):
            rows = [f"# line {label} {name} k={format_float(line.k)}",
                    "0 0", f"{format_float(gmax)} {format_float(coef * gmax**line.exponent)}"]
            blocks.append("\n".join(rows))
    return "\n\n\n".join(blocks) + ("\n" if blocks else "")
