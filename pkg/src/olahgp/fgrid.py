"""Text format for square gridded scalar fields.

::

    FGRID 1
    s <side_m> res <n>
    <n lines of n values, row-major, north to south>

In memory the arrays are indexed ``[row, col]`` with row 0 at the southern
edge, so rows are flipped on read and write.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class FgridParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def format_fgrid(values: np.ndarray, side_s: float) -> str:
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if values.shape != (n, n):
        raise ValueError("FGRID fields must be square")
    lines = ["FGRID 1", f"s {float(side_s)!r} res {n}"]
    for row in values[::-1]:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_fgrid(path, values: np.ndarray, side_s: float) -> None:
    Path(path).write_text(format_fgrid(values, side_s))


def parse_fgrid(text: str, path="<string>") -> tuple[np.ndarray, float]:
    """Parse FGRID text; returns ``(values, side_s)``."""
    lines = text.splitlines()
    if not lines or lines[0].split() != ["FGRID", "1"]:
        raise FgridParseError(path, 1, "expected header 'FGRID 1'")
    if len(lines) < 2:
        raise FgridParseError(path, 2, "missing size line")
    tok = lines[1].split()
    if len(tok) != 4 or tok[0] != "s" or tok[2] != "res":
        raise FgridParseError(path, 2, "expected 's <side_m> res <n>'")
    try:
        side = float(tok[1])
        n = int(tok[3])
    except ValueError as exc:
        raise FgridParseError(path, 2, str(exc)) from None
    if side <= 0 or n < 2:
        raise FgridParseError(path, 2, "side must be positive and res >= 2")
    body = [ln for ln in lines[2:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n:
        raise FgridParseError(path, 3 + min(len(body), n), f"expected {n} rows, found {len(body)}")
    out = np.empty((n, n))
    for k, ln in enumerate(body):
        lineno = k + 3
        parts = ln.split()
        if len(parts) != n:
            raise FgridParseError(path, lineno, f"expected {n} values, found {len(parts)}")
        try:
            row = np.array([float(p) for p in parts])
        except ValueError as exc:
            raise FgridParseError(path, lineno, str(exc)) from None
        if not np.all(np.isfinite(row)):
            raise FgridParseError(path, lineno, "non-finite value")
        out[n - 1 - k] = row
    return out, side


def read_fgrid(path) -> tuple[np.ndarray, float]:
    return parse_fgrid(Path(path).read_text(), path)
