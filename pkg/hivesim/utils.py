"""
Utility functions for the HiveSim swarm coordination toolkit.
"""

import hashlib
import json
import logging
import math
import os
from typing import Any, Optional, Sequence

import numpy as np

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)

US_PER_MS = 1000
US_PER_S = 1_000_000


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure root logging once for CLI use.

    Args:
        level: Level name; falls back to HIVESIM_LOG_LEVEL, then WARNING
    """
    name = (level or os.environ.get('HIVESIM_LOG_LEVEL') or 'WARNING').upper()
    logging.basicConfig(level=getattr(logging, name, logging.WARNING), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, name, logging.WARNING))


def canonical_json(data: Any) -> str:
    """Serialize to canonical JSON (sorted keys, no whitespace variance)."""
    return json.dumps(sanitize(data), sort_keys=True, separators=(',', ':'))


def config_hash(config: Any) -> str:
    """
    Compute the SHA-256 hash of a configuration.

    Args:
        config: Any JSON-serializable configuration structure

    Returns:
        Hex digest of the canonical JSON form
    """
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def ms_to_us(value_ms: float) -> int:
    """Convert milliseconds to integer simulated microseconds."""
    return int(round(value_ms * US_PER_MS))


def s_to_us(value_s: float) -> int:
    """Convert seconds to integer simulated microseconds."""
    return int(round(value_s * US_PER_S))


def us_to_ms(value_us: float) -> float:
    return value_us / US_PER_MS


def us_to_s(value_us: float) -> float:
    return value_us / US_PER_S


def percentile(samples: Sequence[float], q: float) -> float:
    """
    Exact percentile of a sample set (linear interpolation).

    Args:
        samples: Sample values
        q: Percentile in [0, 100]

    Returns:
        Percentile value, or 0.0 for an empty sample set
    """
    if len(samples) == 0:
        return 0.0
    return float(np.percentile(np.asarray(samples, dtype=float), q))


def round_float(value: float, digits: int = 6) -> float:
    """Round floats for stable serialized output."""
    if value is None or not math.isfinite(value):
        return value
    return round(float(value), digits)


def sanitize(data: Any) -> Any:
    """
    Convert nested data into JSON-safe builtin types.

    Args:
        data: Arbitrary nested structure (dicts, lists, tuples, numpy scalars)

    Returns:
        Structure made of dict/list/str/int/float/bool/None only
    """
    if isinstance(data, dict):
        return {str(k): sanitize(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [sanitize(v) for v in data]
    if isinstance(data, (set, frozenset)):
        return [sanitize(v) for v in sorted(data)]
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return round_float(float(data))
    if isinstance(data, float):
        return round_float(data)
    if isinstance(data, (str, int, bool)) or data is None:
        return data
    if hasattr(data, 'to_dict'):
        return sanitize(data.to_dict())
    return str(data)


def chunk_sizes(total: int, parts: int) -> list:
    """Split `total` items into `parts` sizes differing by at most one."""
    if parts <= 0:
        return []
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def closest_factors(n: int) -> tuple:
    """Return (rows, cols) with rows * cols == n and rows <= cols, as square as possible."""
    rows = int(math.isqrt(n))
    while rows > 1 and n % rows:
        rows -= 1
    return rows, n // rows
