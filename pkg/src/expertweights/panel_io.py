"""Reading and writing score panels and weight-constraint files.

Panels are long-format CSV::

    alternative,indicator,c1,c2,...,cm
    d1,u1,55,86,...
"""

from __future__ import annotations

import csv
import io
import re
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .model import ScorePanel
from .weighting import LinearConstraint


class PanelFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.column = column


class ConstraintSyntaxError(ValueError):
    pass


def parse_panel(text: str) -> ScorePanel:
    """Parse CSV text into a :class:`ScorePanel`, keeping labels in file order."""
    rows = [(i, row) for i, row in enumerate(csv.reader(io.StringIO(text)), start=1)
            if row and any(cell.strip() for cell in row)]
    if not rows:
        raise PanelFormatError("empty panel file")
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    if len(header) < 3:
        raise PanelFormatError("header needs alternative, indicator and at least one expert", header_line)
    experts = header[2:]
    if len(set(experts)) != len(experts):
        raise PanelFormatError(f"duplicate expert labels {experts}", header_line)

    alternatives: list[str] = []
    indicators: list[str] = []
    cells: dict[tuple[str, str], list[float]] = {}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise PanelFormatError(f"expected {len(header)} fields, found {len(row)}", line)
        alt, ind = row[0].strip(), row[1].strip()
        if not alt or not ind:
            raise PanelFormatError("missing alternative or indicator label", line)
        if (alt, ind) in cells:
            raise PanelFormatError(f"duplicate entry for ({alt}, {ind})", line)
        values = []
        for label, cell in zip(experts, row[2:]):
            try:
                value = float(cell)
            except ValueError:
                raise PanelFormatError(f"non-numeric score {cell.strip()!r}", line, label) from None
            if not np.isfinite(value):
                raise PanelFormatError(f"non-finite score {cell.strip()!r}", line, label)
            values.append(value)
        cells[(alt, ind)] = values
        if alt not in alternatives:
            alternatives.append(alt)
        if ind not in indicators:
            indicators.append(ind)

    if not cells:
        raise PanelFormatError("panel has no data rows")
    scores = np.empty((len(alternatives), len(indicators), len(experts)))
    for i, alt in enumerate(alternatives):
        for k, ind in enumerate(indicators):
            if (alt, ind) not in cells:
                raise PanelFormatError(f"missing scores for ({alt}, {ind})")
            scores[i, k] = cells[(alt, ind)]
    return ScorePanel(tuple(alternatives), tuple(indicators), tuple(experts), scores)


def format_panel(panel: ScorePanel) -> str:
    """CSV text that :func:`parse_panel` reads back to identical values."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["alternative", "indicator", *panel.experts])
    for i, alt in enumerate(panel.alternatives):
        for k, ind in enumerate(panel.indicators):
            writer.writerow([alt, ind, *(repr(float(v)) for v in panel.scores[i, k])])
    return out.getvalue()


def read_panel(path) -> ScorePanel:
    with open(path, newline="") as fh:
        return parse_panel(fh.read())


def load_table1() -> ScorePanel:
    """The bundled 5 alternative x 6 indicator x 7 expert example panel."""
    return parse_panel(resources.files("expertweights.data").joinpath("table1.csv").read_text())


_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TERM = r"w\(\s*([^()\s]+)\s*\)"
_RELATION = re.compile(
    rf"^\s*{_TERM}\s*(>=|<=|>|<)\s*(?:{_TERM}\s*(?:([-+])\s*({_NUMBER}))?|({_NUMBER}))\s*$"
)


def parse_constraints(lines: Iterable[str], experts: Sequence[str], margin: float = 0.0) -> list[LinearConstraint]:
    """Parse relations such as ``w(c4) >= w(c2)`` or ``w(c1) >= 0.2``.

    Each becomes a row ``a @ w >= b``.  Strict relations are tightened by
    `margin`, so with the default of 0 ``>`` means ``>=``.  Blank lines and
    ``#`` comments are ignored.
    """
    index = {label: j for j, label in enumerate(experts)}
    m = len(experts)
    out = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        match = _RELATION.match(text)
        if match is None:
            raise ConstraintSyntaxError(f"line {lineno}: cannot parse {text!r}")
        left, op, right, sign, offset, constant = match.groups()
        for label in (left, right):
            if label is not None and label not in index:
                raise ConstraintSyntaxError(f"line {lineno}: unknown expert {label!r}")
        coefficients = np.zeros(m)
        coefficients[index[left]] += 1.0
        if right is not None:
            coefficients[index[right]] -= 1.0
            rhs = float(offset) * (-1.0 if sign == "-" else 1.0) if offset else 0.0
        else:
            rhs = float(constant)
        if op in ("<=", "<"):
            coefficients, rhs = -coefficients, -rhs
        if op in (">", "<"):
            rhs += margin
        if not np.any(coefficients):
            raise ConstraintSyntaxError(f"line {lineno}: relation {text!r} does not involve any weight")
        out.append(LinearConstraint(coefficients, rhs, text))
    return out
