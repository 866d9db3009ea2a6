"""Human reference constants for side-by-side report columns.

The values ship as a versioned, read-only data asset
(``assets/human_benchmarks.json``); they are never fetched and never
recomputed. Source: Schweitzer and Cachon (2000), experiment 1.
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

HUMAN_LABEL = "humans"


@lru_cache(maxsize=1)
def human_benchmarks() -> dict:
    path = Path(__file__).resolve().parent / "assets" / "human_benchmarks.json"
    return json.loads(path.read_text(encoding="utf-8"))


def source() -> str:
    return human_benchmarks()["source"]


def bias_row(dist: str, margin: str) -> dict | None:
    """Mean order and optimum for (distribution, margin), or None if unavailable."""
    return human_benchmarks()["bias"].get(dist, {}).get(margin)


def adjustment_score(order_condition: str, dist: str, margin: str) -> float | None:
    return (
        human_benchmarks()["adjustment_score"]
        .get(order_condition, {})
        .get(dist, {})
        .get(margin)
    )


def adjustment_shares(dist: str, order_condition: str, quartile: str) -> dict | None:
    return (
        human_benchmarks()["adjustment_shares"]
        .get(dist, {})
        .get(order_condition, {})
        .get(quartile)
    )
