"""Timestamp parsing shared by the CSV readers."""

from __future__ import annotations

from datetime import datetime, timezone


def parse_time(text: str) -> float:
    """Seconds from a numeric field or an ISO-8601 string (naive times are UTC)."""
    try:
        return float(text)
    except ValueError:
        pass
    text = str(text).strip()
    if text.endswith(("Z", "z")):  # not accepted by fromisoformat before 3.11
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.timestamp()
