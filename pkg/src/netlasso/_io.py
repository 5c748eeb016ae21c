"""Small TSV helpers shared by the serialization entry points.

All numeric output goes through :func:`fmt` so every TSV in the package
carries exactly 10 significant digits and identical inputs produce
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence


def fmt(value: float) -> str:
    """Format a float with 10 significant digits."""
    return f"{float(value):.10g}"


def write_tsv(path: str | Path, header: Sequence[str],
              rows: Iterable[Sequence], comments: Sequence[str] = ()) -> None:
    """Write a TSV with optional leading ``#`` comment lines.

    Floats are formatted via :func:`fmt`; everything else with ``str``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fields = [
                fmt(v) if isinstance(v, float) else str(v) for v in row
            ]
            fh.write("\t".join(fields) + "\n")


def read_tsv(path: str | Path) -> tuple[list[str], list[list[str]], list[str]]:
    """Read a TSV written by :func:`write_tsv`.

    Returns (header, rows, comment lines without the leading '# ').
    """
    comments: list[str] = []
    rows: list[list[str]] = []
    header: list[str] | None = None
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line.lstrip("#").strip())
                continue
            if header is None:
                header = line.split("\t")
            else:
                rows.append(line.split("\t"))
    if header is None:
        header = []
    return header, rows, comments
