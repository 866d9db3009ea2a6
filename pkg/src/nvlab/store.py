"""Durable run store: append-only JSONL of round records plus a plan manifest.

Layout of one run directory::

    <run_dir>/
      manifest.json   # serialized plan, plan hash, template digests
      rounds.jsonl    # one RoundRecord per line, append-only

Records carry their full trajectory identity (condition index, repetition,
block, round) so concurrent trajectories can interleave safely. Profit is
recomputed from (order, demand, cost structure) on every read; any mismatch,
malformed line, or hash conflict raises IntegrityError naming the offending
record.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import ScenarioConfig, profit

MANIFEST_NAME = "manifest.json"
ROUNDS_NAME = "rounds.jsonl"
STORE_FORMAT = "nvlab-run/1"

# serialization order for one record line; timestamps last so diffs that
# exclude them are trivial
_RECORD_FIELDS = (
    "run_id",
    "condition_index",
    "agent",
    "experiment",
    "dist",
    "order_condition",
    "repetition",
    "block_index",
    "margin",
    "round_index",
    "order",
    "demand",
    "profit",
    "cumulative_profit",
    "parse_confidence",
    "prompt_sha256",
    "raw_response",
    "retries",
    "token_usage",
    "ts_start",
    "ts_end",
)

TIMESTAMP_FIELDS = ("ts_start", "ts_end")


class IntegrityError(RuntimeError):
    """The stored run data is internally inconsistent."""


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RoundRecord:
    """One persisted round of one trajectory."""

    run_id: str
    condition_index: int
    agent: str
    experiment: str
    dist: str
    order_condition: str
    repetition: int
    block_index: int
    margin: str
    round_index: int
    order: int
    demand: int
    profit: float
    cumulative_profit: float
    parse_confidence: str
    prompt_sha256: str
    raw_response: str
    retries: int = 0
    token_usage: dict | None = None
    ts_start: float = 0.0
    ts_end: float = 0.0

    def to_line(self) -> str:
        data = asdict(self)
        ordered = {key: data[key] for key in _RECORD_FIELDS}
        return json.dumps(ordered, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str, lineno: int) -> "RoundRecord":
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"rounds.jsonl line {lineno}: malformed JSON ({exc})") from exc
        missing = [key for key in _RECORD_FIELDS if key not in data]
        if missing:
            raise IntegrityError(f"rounds.jsonl line {lineno}: missing fields {missing}")
        return cls(**{key: data[key] for key in _RECORD_FIELDS})

    def identity(self) -> tuple:
        return (self.condition_index, self.order_condition, self.repetition, self.block_index)


@dataclass
class Trajectory:
    """All rounds of one (condition, repetition, block), in round order."""

    run_id: str
    condition_index: int
    agent: str
    order_condition: str
    repetition: int
    block_index: int
    scenario: ScenarioConfig
    records: list[RoundRecord] = field(default_factory=list)
    expected_rounds: int = 15

    @property
    def complete(self) -> bool:
        return len(self.records) == self.expected_rounds

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(r.order for r in self.records)

    @property
    def demands(self) -> tuple[int, ...]:
        return tuple(r.demand for r in self.records)

    @property
    def rationales(self) -> tuple[str, ...]:
        return tuple(r.raw_response for r in self.records)


class RunStore:
    """One run directory; create once, append rounds, read back validated."""

    def __init__(self, run_dir: Path | str):
        self.run_dir = Path(run_dir)

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / MANIFEST_NAME

    @property
    def rounds_path(self) -> Path:
        return self.run_dir / ROUNDS_NAME

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def create(self, manifest: dict):
        if self.exists():
            raise IntegrityError(f"run store already exists at {self.run_dir}")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self.rounds_path.touch()

    def manifest(self) -> dict:
        if not self.exists():
            raise IntegrityError(f"no run store at {self.run_dir}")
        try:
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"manifest.json is malformed: {exc}") from exc

    def append(self, record: RoundRecord):
        with self.rounds_path.open("a", encoding="utf-8") as handle:
            handle.write(record.to_line() + "\n")

    def records(self) -> list[RoundRecord]:
        if not self.rounds_path.exists():
            return []
        out = []
        with self.rounds_path.open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                out.append(RoundRecord.from_line(line, lineno))
        return out


def group_trajectories(
    records: list[RoundRecord],
    scenario_for: "callable",
    expected_rounds: int,
) -> list[Trajectory]:
    """Group records by trajectory identity and validate per-round invariants.

    ``scenario_for(record)`` must return the ScenarioConfig governing that
    record's block. Validates round contiguity, recomputed profit, and the
    cumulative-profit running sum.
    """
    by_identity: dict[tuple, list[RoundRecord]] = {}
    for record in records:
        by_identity.setdefault(record.identity(), []).append(record)

    trajectories = []
    for identity in sorted(by_identity):
        rows = sorted(by_identity[identity], key=lambda r: r.round_index)
        first = rows[0]
        sc = scenario_for(first)
        cumulative = 0.0
        for position, record in enumerate(rows, start=1):
            where = (
                f"record (condition={record.condition_index}, order={record.order_condition}, "
                f"rep={record.repetition}, block={record.block_index}, round={record.round_index})"
            )
            if record.round_index != position:
                raise IntegrityError(f"{where}: expected round {position}, rounds are not contiguous")
            recomputed = profit(record.order, record.demand, sc.cost)
            if abs(recomputed - record.profit) > 1e-9:
                raise IntegrityError(
                    f"{where}: stored profit {record.profit} != recomputed {recomputed}"
                )
            cumulative += recomputed
            if abs(cumulative - record.cumulative_profit) > 1e-9:
                raise IntegrityError(
                    f"{where}: stored cumulative profit {record.cumulative_profit} "
                    f"!= running sum {cumulative}"
                )
        trajectories.append(
            Trajectory(
                run_id=first.run_id,
                condition_index=first.condition_index,
                agent=first.agent,
                order_condition=first.order_condition,
                repetition=first.repetition,
                block_index=first.block_index,
                scenario=sc,
                records=rows,
                expected_rounds=expected_rounds,
            )
        )
    return trajectories


def strip_timestamps(line: str) -> str:
    """Round-record line with the timestamp fields zeroed, for comparisons."""
    data = json.loads(line)
    for key in TIMESTAMP_FIELDS:
        data[key] = 0.0
    return json.dumps(data, separators=(",", ":"))
