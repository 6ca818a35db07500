"""Tiny flat key=value text format used for configs and descriptors.

Lines are ``key = value`` with ``#`` comments and optional ``[section]``
headers; a section prefixes subsequent keys as ``section.key``. Values are
kept as strings; consumers coerce types and report all problems at once.
"""

from __future__ import annotations

from .errors import ConfigError


def parse_kv_text(text: str) -> dict:
    """Parse key=value text into a flat {dotted_key: string} dict."""
    out: dict[str, str] = {}
    section = ""
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            problems.append(f"line {lineno}: empty key")
            continue
        full = f"{section}.{key}" if section else key
        if full in out:
            problems.append(f"line {lineno}: duplicate key {full!r}")
            continue
        out[full] = value
    if problems:
        raise ConfigError(problems)
    return out


def format_kv_text(pairs: dict) -> str:
    """Render dotted keys back into sectioned key=value text."""
    by_section: dict[str, list[tuple[str, str]]] = {}
    for full, value in pairs.items():
        section, _, key = full.rpartition(".")
        by_section.setdefault(section, []).append((key, value))
    lines = []
    for section in sorted(by_section):
        if section:
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
        for key, value in by_section[section]:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_kv_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())
