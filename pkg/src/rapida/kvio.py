"""Flat dotted-key text files: one `key = value` per line, `#` comments.

Used for both run configs and scene descriptions.
"""

from __future__ import annotations


class KVParseError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


def parse_kv_text(text, path="<string>"):
    """Parse to an ordered dict of key -> raw string value."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KVParseError(path, lineno, f"expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise KVParseError(path, lineno, "empty key")
        if key in out:
            raise KVParseError(path, lineno, f"duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_kv_file(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_text(f.read(), path=str(path))


def emit_kv(mapping):
    """Canonical emission: sorted keys, `key = value` lines."""
    lines = [f"{k} = {mapping[k]}" for k in sorted(mapping)]
    return "\n".join(lines) + "\n"


def floats(value):
    return [float(tok) for tok in value.split()]
