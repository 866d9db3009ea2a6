"""Experiment orchestration.

A plan is a list of conditions; each condition pairs one demand distribution
and experiment variant with an agent, a presentation order and a repetition
count. Every repetition runs two consecutive scenario blocks -- one high
margin, one low margin, ordered per the condition -- of ``rounds_per_block``
rounds each, with feedback embedded in the next round's prompt.

Demand sequences are drawn up front from seeds derived per (repetition,
block): ``seed = base_seed XOR sha256("rep:<r>|block:<b>")[:8]``. The agent
never influences the demand stream, so different agents given the same base
seed face identical demands and can be compared pairwise.

For LLM agents one conversation transcript spans both blocks of a repetition
(the second block's first prompt is appended to the running transcript), so
the model experiences the margin switch inside a single interaction. Scripted
agents ignore transcripts. Set ``transcript_continuity=False`` to isolate
blocks instead.

Every round is persisted to the run store before the next one starts; an
unresolved round (transport or parse failure after retries) marks its
trajectory incomplete, and `resume` restarts incomplete blocks from their
first missing round using the stored transcript and the original demand
sequence.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from .agents import (
    LLM,
    RANDOM,
    AgentSpec,
    AmbiguousDecisionError,
    ParsePolicy,
    decide,
)
from .llm import TransportError
from .prompts import PromptTemplateSet, RoundContext, default_templates, render_prompt
from .store import (
    IntegrityError,
    RoundRecord,
    RunStore,
    Trajectory,
    canonical_json,
    group_trajectories,
    sha256_text,
)

log = logging.getLogger(__name__)

HIGH_FIRST = "high-first"
LOW_FIRST = "low-first"
ORDER_CONDITIONS = (HIGH_FIRST, LOW_FIRST)


def derive_seed(base_seed: int, repetition: int, block_index: int, salt: str = "demand") -> int:
    """Stable per-(repetition, block) seed: base_seed XOR a keyed hash."""
    digest = hashlib.sha256(f"{salt}|rep:{repetition}|block:{block_index}".encode()).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "big")) & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class PlanCondition:
    """One experimental condition: who decides, under what demand, in what order."""

    experiment: str
    dist_kind: str
    agent: AgentSpec
    order_condition: str
    repetitions: int = 10
    rounds_per_block: int = model.DEFAULT_ROUNDS
    base_seed: int = 0

    def __post_init__(self):
        if self.order_condition not in ORDER_CONDITIONS:
            raise ValueError(f"order_condition must be one of {ORDER_CONDITIONS}")
        if self.repetitions < 1 or self.rounds_per_block < 1:
            raise ValueError("repetitions and rounds_per_block must be >= 1")
        # fail fast on inconsistent scenario parameters
        self.scenario_for_margin(model.HIGH)

    def scenario_for_margin(self, margin: str) -> model.ScenarioConfig:
        return model.scenario(self.experiment, margin, self.dist_kind, self.rounds_per_block)

    def margin_for_block(self, block_index: int) -> str:
        first_high = self.order_condition == HIGH_FIRST
        if block_index == 1:
            return model.HIGH if first_high else model.LOW
        return model.LOW if first_high else model.HIGH

    def scenario_for_block(self, block_index: int) -> model.ScenarioConfig:
        return self.scenario_for_margin(self.margin_for_block(block_index))

    def to_dict(self) -> dict:
        spec = self.agent
        agent = {"kind": spec.kind}
        if spec.kind == LLM:
            agent.update(model_name=spec.model_name, temperature=spec.temperature)
            if spec.parse_policy is not None:
                agent["parse_policy"] = {
                    "patterns": list(spec.parse_policy.patterns),
                    "plausible_range": list(spec.parse_policy.plausible_range),
                    "max_retries": spec.parse_policy.max_retries,
                }
        if spec.anchor_weight is not None:
            agent["anchor_weight"] = spec.anchor_weight
        if spec.chase_rate is not None:
            agent["chase_rate"] = spec.chase_rate
            agent["chase_rate_before"] = spec.chase_rate_before
            if spec.switch_round is not None:
                agent["switch_round"] = spec.switch_round
        return {
            "experiment": self.experiment,
            "dist": self.dist_kind,
            "agent": agent,
            "order_condition": self.order_condition,
            "repetitions": self.repetitions,
            "rounds_per_block": self.rounds_per_block,
            "base_seed": self.base_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlanCondition":
        agent = data["agent"]
        policy = None
        if "parse_policy" in agent:
            raw = agent["parse_policy"]
            policy = ParsePolicy(
                tuple(raw["patterns"]), tuple(raw["plausible_range"]), raw["max_retries"]
            )
        spec = AgentSpec(
            kind=agent["kind"],
            model_name=agent.get("model_name"),
            temperature=agent.get("temperature", 1.0),
            anchor_weight=agent.get("anchor_weight"),
            chase_rate=agent.get("chase_rate"),
            chase_rate_before=agent.get("chase_rate_before", 0.0),
            switch_round=agent.get("switch_round"),
            parse_policy=policy,
        )
        return cls(
            experiment=data["experiment"],
            dist_kind=data["dist"],
            agent=spec,
            order_condition=data["order_condition"],
            repetitions=data["repetitions"],
            rounds_per_block=data["rounds_per_block"],
            base_seed=data["base_seed"],
        )


@dataclass(frozen=True)
class ExperimentPlan:
    conditions: tuple[PlanCondition, ...]
    transcript_continuity: bool = True

    def to_dict(self) -> dict:
        return {
            "conditions": [c.to_dict() for c in self.conditions],
            "transcript_continuity": self.transcript_continuity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        return cls(
            conditions=tuple(PlanCondition.from_dict(c) for c in data["conditions"]),
            transcript_continuity=data.get("transcript_continuity", True),
        )

    def plan_hash(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))

    def run_id(self) -> str:
        return f"run-{self.plan_hash()[:12]}"


@dataclass
class RoundFailure:
    condition_index: int
    order_condition: str
    repetition: int
    block_index: int
    round_index: int
    kind: str  # "transport" | "parse"
    message: str


@dataclass
class RunOutcome:
    run_id: str
    store: RunStore
    trajectories: list[Trajectory]
    failures: list[RoundFailure] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.failures and all(t.complete for t in self.trajectories)


def build_manifest(plan: ExperimentPlan, templates: PromptTemplateSet) -> dict:
    return {
        "format": "nvlab-run/1",
        "run_id": plan.run_id(),
        "plan": plan.to_dict(),
        "plan_hash": plan.plan_hash(),
        "template_digests": {
            name: sha256_text(text) for name, text in templates.digest_inputs().items()
        },
    }


def _scenario_lookup(plan: ExperimentPlan):
    def scenario_for(record: RoundRecord) -> model.ScenarioConfig:
        condition = plan.conditions[record.condition_index]
        return condition.scenario_for_margin(record.margin)

    return scenario_for


class _BlockRunner:
    """Executes (or resumes) the rounds of a single scenario block."""

    def __init__(self, plan, condition_index, condition, repetition, block_index,
                 store, templates, client, transcript):
        self.plan = plan
        self.condition_index = condition_index
        self.condition = condition
        self.repetition = repetition
        self.block_index = block_index
        self.store = store
        self.templates = templates
        self.client = client
        self.transcript = transcript
        self.scenario = condition.scenario_for_block(block_index)
        self.sequence = model.sample_sequence(
            self.scenario.demand,
            condition.rounds_per_block,
            derive_seed(condition.base_seed, repetition, block_index),
        )
        self.agent_rng = np.random.default_rng(
            derive_seed(condition.base_seed, repetition, block_index, salt="agent")
        )

    def _context(self, round_index, prior: list[RoundRecord]) -> RoundContext:
        if round_index == 1:
            return RoundContext(self.scenario, 1)
        last = prior[-1]
        return RoundContext(
            self.scenario,
            round_index,
            last_order=last.order,
            last_demand=last.demand,
            last_profit=last.profit,
            cumulative_profit=last.cumulative_profit,
        )

    def replay(self, stored: list[RoundRecord]):
        """Re-render stored rounds: verify prompt hashes, rebuild transcript/rng."""
        for record in stored:
            ctx = self._context(record.round_index, stored[: record.round_index - 1])
            prompt = render_prompt(ctx, self.templates)
            if sha256_text(prompt) != record.prompt_sha256:
                raise IntegrityError(
                    f"record (condition={record.condition_index}, rep={record.repetition}, "
                    f"block={record.block_index}, round={record.round_index}): "
                    "stored prompt hash does not match the re-rendered prompt"
                )
            draw = self.sequence.draws[record.round_index - 1]
            if draw != record.demand:
                raise IntegrityError(
                    f"record (condition={record.condition_index}, rep={record.repetition}, "
                    f"block={record.block_index}, round={record.round_index}): "
                    f"stored demand {record.demand} does not match the seeded draw {draw}"
                )
            if self.condition.agent.kind == RANDOM:
                self.agent_rng.integers(self.scenario.demand.lower, self.scenario.demand.upper + 1)
            self.transcript.append({"role": "user", "content": prompt})
            self.transcript.append({"role": "assistant", "content": record.raw_response})

    def run(self, existing: list[RoundRecord]) -> tuple[list[RoundRecord], RoundFailure | None]:
        """Run rounds after ``existing`` up to the block length; persist each."""
        records = list(existing)
        cumulative = records[-1].cumulative_profit if records else 0
        for round_index in range(len(records) + 1, self.condition.rounds_per_block + 1):
            ctx = self._context(round_index, records)
            prompt = render_prompt(ctx, self.templates)
            ts_start = time.time()
            try:
                decision = decide(
                    self.condition.agent,
                    prompt,
                    ctx,
                    rng=self.agent_rng,
                    client=self.client,
                    transcript=self.transcript,
                )
            except AmbiguousDecisionError as exc:
                return records, self._failure(round_index, "parse", str(exc))
            except TransportError as exc:
                return records, self._failure(round_index, "transport", str(exc))
            demand = self.sequence.draws[round_index - 1]
            round_profit = model.profit(decision.order, demand, self.scenario.cost)
            cumulative += round_profit
            record = RoundRecord(
                run_id=self.plan.run_id(),
                condition_index=self.condition_index,
                agent=self.condition.agent.label,
                experiment=self.condition.experiment,
                dist=self.condition.dist_kind,
                order_condition=self.condition.order_condition,
                repetition=self.repetition,
                block_index=self.block_index,
                margin=self.condition.margin_for_block(self.block_index),
                round_index=round_index,
                order=decision.order,
                demand=demand,
                profit=round_profit,
                cumulative_profit=cumulative,
                parse_confidence=decision.parse_confidence,
                prompt_sha256=sha256_text(prompt),
                raw_response=decision.raw_response,
                retries=decision.retries,
                token_usage=decision.token_usage,
                ts_start=ts_start,
                ts_end=time.time(),
            )
            self.store.append(record)
            records.append(record)
            self.transcript.append({"role": "user", "content": prompt})
            self.transcript.append({"role": "assistant", "content": decision.raw_response})
        return records, None

    def _failure(self, round_index, kind, message) -> RoundFailure:
        log.warning(
            "unresolved round: condition=%d rep=%d block=%d round=%d (%s): %s",
            self.condition_index, self.repetition, self.block_index, round_index, kind, message,
        )
        return RoundFailure(
            self.condition_index,
            self.condition.order_condition,
            self.repetition,
            self.block_index,
            round_index,
            kind,
            message,
        )


def _execute(plan, store, templates, client_factory, existing_records, progress) -> RunOutcome:
    """Shared driver for fresh runs (empty store) and resumes."""
    by_identity: dict[tuple, list[RoundRecord]] = {}
    for record in existing_records:
        by_identity.setdefault(record.identity(), []).append(record)
    for rows in by_identity.values():
        rows.sort(key=lambda r: r.round_index)

    failures: list[RoundFailure] = []
    for condition_index, condition in enumerate(plan.conditions):
        client = None
        if condition.agent.kind == LLM:
            if client_factory is None:
                raise ValueError(
                    f"condition {condition_index} needs a chat client; pass client_factory"
                )
            client = client_factory(condition.agent)
        for repetition in range(condition.repetitions):
            transcript: list[dict] = []
            abort_repetition = False
            for block_index in (1, 2):
                if abort_repetition:
                    break
                if not plan.transcript_continuity:
                    transcript = []
                identity = (condition_index, condition.order_condition, repetition, block_index)
                stored = by_identity.get(identity, [])
                runner = _BlockRunner(
                    plan, condition_index, condition, repetition, block_index,
                    store, templates, client, transcript,
                )
                done = len(stored) >= condition.rounds_per_block
                runner.replay(stored)
                if done:
                    continue
                if progress:
                    progress(
                        f"condition {condition_index} ({condition.agent.label}, "
                        f"{condition.experiment}, {condition.dist_kind}, "
                        f"{condition.order_condition}) rep {repetition + 1}/"
                        f"{condition.repetitions} block {block_index}"
                    )
                _, failure = runner.run(stored)
                if failure is not None:
                    failures.append(failure)
                    # without block 1's full transcript, block 2 would see a
                    # different history than a completed run; leave it for resume
                    if plan.transcript_continuity:
                        abort_repetition = True

    records = store.records()
    trajectories = group_trajectories(
        records, _scenario_lookup(plan), expected_rounds=_expected_rounds(plan)
    )
    return RunOutcome(plan.run_id(), store, trajectories, failures)


def _expected_rounds(plan: ExperimentPlan) -> int:
    lengths = {c.rounds_per_block for c in plan.conditions}
    return max(lengths) if lengths else model.DEFAULT_ROUNDS


def run_plan(
    plan: ExperimentPlan,
    run_dir,
    client_factory=None,
    templates: PromptTemplateSet | None = None,
    progress=None,
) -> RunOutcome:
    """Execute a plan into a fresh run directory and persist every round."""
    templates = templates or default_templates()
    store = RunStore(run_dir)
    store.create(build_manifest(plan, templates))
    return _execute(plan, store, templates, client_factory, [], progress)


def resume(run_dir, client_factory=None, templates: PromptTemplateSet | None = None,
           progress=None) -> RunOutcome:
    """Finish incomplete blocks of a stored run; completed blocks are untouched.

    Verifies the manifest's plan hash and every stored round's prompt hash and
    seeded demand draw before continuing; a completed run is a no-op.
    """
    templates = templates or default_templates()
    store = RunStore(run_dir)
    manifest = store.manifest()
    plan = ExperimentPlan.from_dict(manifest["plan"])
    if plan.plan_hash() != manifest.get("plan_hash"):
        raise IntegrityError(
            f"plan hash mismatch in {store.manifest_path}: stored "
            f"{manifest.get('plan_hash')!r} vs recomputed {plan.plan_hash()!r}"
        )
    existing = store.records()
    # surfaces corrupted rounds before any new work
    group_trajectories(existing, _scenario_lookup(plan), _expected_rounds(plan))
    return _execute(plan, store, templates, client_factory, existing, progress)


def verify_prompt_hashes(run_dir, templates: PromptTemplateSet | None = None) -> int:
    """Re-render every stored round's prompt and check it against its hash.

    Returns the number of rounds verified; raises IntegrityError on the first
    mismatch.
    """
    templates = templates or default_templates()
    store = RunStore(run_dir)
    manifest = store.manifest()
    plan = ExperimentPlan.from_dict(manifest["plan"])
    trajectories = group_trajectories(
        store.records(), _scenario_lookup(plan), _expected_rounds(plan)
    )
    checked = 0
    for trajectory in trajectories:
        sc = trajectory.scenario
        prior = []
        for record in trajectory.records:
            if record.round_index == 1:
                ctx = RoundContext(sc, 1)
            else:
                last = prior[-1]
                ctx = RoundContext(
                    sc, record.round_index,
                    last_order=last.order, last_demand=last.demand,
                    last_profit=last.profit, cumulative_profit=last.cumulative_profit,
                )
            if sha256_text(render_prompt(ctx, templates)) != record.prompt_sha256:
                raise IntegrityError(
                    f"prompt hash mismatch at condition={record.condition_index} "
                    f"rep={record.repetition} block={record.block_index} "
                    f"round={record.round_index}"
                )
            prior.append(record)
            checked += 1
    return checked
