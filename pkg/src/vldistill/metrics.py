"""Line-oriented JSON metrics log with a fixed mandatory schema."""

from __future__ import annotations

import json

MANDATORY_KEYS = ("stage", "step", "seed", "wall_ms")


def log_metrics(stream, record: dict) -> None:
    """Append one sorted-key JSON object per line.

    Records are flat (scalar values only) and must carry stage, step, seed,
    and wall_ms. The line is written with a single write call and flushed,
    so concurrent appenders cannot interleave within a line.
    """
    missing = [k for k in MANDATORY_KEYS if k not in record]
    if missing:
        raise ValueError(f"metrics record missing mandatory keys: {missing}")
    for key, value in record.items():
        if not isinstance(value, (str, int, float, bool)):
            raise ValueError(f"metrics value for {key!r} must be a scalar")
    stream.write(json.dumps(record, sort_keys=True) + "\n")
    stream.flush()
