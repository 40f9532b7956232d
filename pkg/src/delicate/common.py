"""Constants and small helpers shared across the pipeline."""

import re

NIL = "NIL"

ENTITY_TYPES = ("PER", "LOC", "ORG", "WORK")

QID_RE = re.compile(r"Q[0-9]+")

_YEAR_RE = re.compile(r"^\s*([+-]?)(\d+)")


def is_qid(value):
    return isinstance(value, str) and QID_RE.fullmatch(value) is not None


def parse_year(value):
    """Return the integer year of ``value``.

    Accepts ints and ISO-like date strings (``"1886"``, ``"1886-05-01"``,
    ``"+1886-05-01T00:00:00Z"``, ``"-0044-03-15"``). Anything finer than a
    year is truncated.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a year: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        m = _YEAR_RE.match(value)
        if m:
            year = int(m.group(2))
            return -year if m.group(1) == "-" else year
    raise ValueError(f"not a year: {value!r}")
