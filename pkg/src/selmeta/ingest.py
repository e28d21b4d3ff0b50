"""Reading effect-size datasets and converting test statistics to effect sizes."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import IO, Iterable

from .densities import Study
from .stats_core import DomainError

STAT_TYPES = ("t", "F")


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


class ParseError(ValueError):
    """Dataset could not be read; ``errors`` lists every offending line."""

    def __init__(self, errors: Iterable[RowError | str]):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


def convert_to_d(statistic: float, stat_type: str, df: float, sign: float = 1.0) -> Study:
    """Standardised mean difference from a t or F statistic with ``df`` error degrees of freedom.

    ``d = t * sqrt(2 / df)`` with ``t = sqrt(F)`` for F statistics, and
    ``se(d) = sqrt(4 / N + d**2 / (2 N))`` with ``N = df + 2`` (two equal
    groups). ``sign`` orients F-derived effects, which are nonnegative.
    """
    statistic = float(statistic)
    df = float(df)
    if not (math.isfinite(statistic) and math.isfinite(df)):
        raise DomainError("statistic and df must be finite")
    if df < 1:
        raise DomainError("df must be at least 1")
    if stat_type == "F":
        if statistic < 0:
            raise DomainError("F statistic must be nonnegative")
        t = math.sqrt(statistic) * (-1.0 if sign < 0 else 1.0)
    elif stat_type == "t":
        t = statistic
    else:
        raise DomainError(f"stat_type must be one of {STAT_TYPES}")
    d = t * math.sqrt(2.0 / df)
    N = df + 2.0
    return Study(d, math.sqrt(4.0 / N + d * d / (2.0 * N)))


def _number(text: str, name: str) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise ValueError(f"{name} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite")
    return v


def _sign(text: str | None) -> float:
    if text is None or text.strip() == "":
        return 1.0
    t = text.strip()
    if t in ("+", "1", "+1", "pos", "positive"):
        return 1.0
    if t in ("-", "-1", "neg", "negative"):
        return -1.0
    raise ValueError(f"unrecognised sign {text!r}")


def parse_dataset(source: str | os.PathLike | IO[str], fmt: str = "csv") -> list[Study]:
    """Read studies from a CSV path or text stream.

    Accepts either ``effect,se`` columns or ``statistic,stat_type,df``
    columns (an optional ``sign`` column orients F statistics). Lines
    starting with ``#`` and blank lines are skipped. Every malformed row
    is collected and reported in one :class:`ParseError`.
    """
    if fmt != "csv":
        raise ParseError([f"unsupported format {fmt!r}"])
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, encoding="utf-8", newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError([f"cannot read {source}: {exc.strerror}"]) from None
    else:
        text = source.read()

    rows = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rows.append((lineno, next(csv.reader([line]))))
    if not rows:
        raise ParseError(["no header row"])

    header_line, header = rows[0]
    cols = [h.strip() for h in header]
    index = {c: k for k, c in enumerate(cols)}
    if {"effect", "se"} <= index.keys():
        mode = "effect"
    elif {"statistic", "stat_type", "df"} <= index.keys():
        mode = "stat"
    else:
        raise ParseError([RowError(header_line, "header needs effect,se or statistic,stat_type,df")])

    studies: list[Study] = []
    errors: list[RowError] = []
    for lineno, fields in rows[1:]:
        fields = [f.strip() for f in fields]
        if len(fields) != len(cols):
            errors.append(RowError(lineno, f"expected {len(cols)} fields, got {len(fields)}"))
            continue
        get = lambda name: fields[index[name]]  # noqa: E731
        try:
            if mode == "effect":
                effect = _number(get("effect"), "effect")
                se = _number(get("se"), "se")
                if se <= 0:
                    raise ValueError("se must be positive")
                studies.append(Study(effect, se))
            else:
                stat_type = get("stat_type")
                if stat_type not in STAT_TYPES:
                    raise ValueError(f"stat_type must be t or F, got {stat_type!r}")
                sign = _sign(get("sign")) if "sign" in index else 1.0
                studies.append(convert_to_d(
                    _number(get("statistic"), "statistic"), stat_type, _number(get("df"), "df"), sign,
                ))
        except (ValueError, DomainError) as exc:
            errors.append(RowError(lineno, str(exc)))
    if errors:
        raise ParseError(errors)
    if not studies:
        raise ParseError([RowError(header_line, "no data rows")])
    return studies
