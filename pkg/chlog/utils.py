"""Small helpers shared by the diagnostics harnesses and the command-line front end."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from pathlib import Path

# Relative tolerance for "dt divides t exactly".
STEP_RTOL = 1e-9


def steps_for(t: float, dt: float) -> int:
    """Number of fixed steps of size ``dt`` reaching ``t``; raises if ``dt`` does not divide ``t``."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    k = round(t / dt)
    if abs(k * dt - t) > STEP_RTOL * max(t, dt):
        raise ValueError(f"dt={dt!r} does not divide t={t!r}")
    return int(k)


def format_float(x: float | None) -> str:
    """17 significant digits, enough to reproduce the double exactly; ``None`` becomes ''."""
    if x is None:
        return ""
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def _cell(v: object) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float) or v is None:
        return format_float(v)
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
