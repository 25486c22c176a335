"""Flat key=value configuration files.

One `key = value` per line, `#` comments, no sections, no includes.
Unknown keys are rejected with their line number; every key has a declared
parser. Booleans accept true/false/1/0/yes/no.
"""

from __future__ import annotations


class ParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    return tuple(int(p) for p in parts)


PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "int_tuple": _parse_int_tuple,
}


def parse_kv_file(path, schema: dict[str, str]) -> dict:
    """Read the file against a {key: parser-name} schema; unknown keys and
    unparseable values raise ParseError with the offending line number."""
    result: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, line_no, f"expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in schema:
                raise ParseError(path, line_no, f"unknown key {key!r}")
            if key in result:
                raise ParseError(path, line_no, f"duplicate key {key!r}")
            try:
                result[key] = PARSERS[schema[key]](value)
            except ValueError as exc:
                raise ParseError(path, line_no, f"bad value for {key!r}: {exc}") from exc
    return result
