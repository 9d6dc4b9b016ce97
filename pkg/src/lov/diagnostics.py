from __future__ import annotations

import csv
from dataclasses import dataclass


@dataclass(frozen=True)
class Diagnostic:
    """A rejected input record: 1-based line (or record) number and reason."""

    line: int
    reason: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.reason}"


def csv_rows(text: str):
    """Yield ``(lineno, row, error)`` per physical line.

    Each line is parsed on its own so a stray quote or carriage return only
    spoils that line; quoted fields may not span lines.
    """
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            row = next(csv.reader([line]), [])
        except csv.Error as exc:
            yield lineno, None, str(exc)
            continue
        yield lineno, row, None
