"""Decision agents: one remote LLM kind plus four scripted oracles.

The scripted agents exist to validate the metrics pipeline -- each one has a
known ground truth the metrics must recover:

* optimal       -- orders the critical-fractile optimum every round
* mean-anchor   -- order = A + w * (q* - A); the measured adjustment score
                   must come back as w
* demand-chaser -- moves the order toward the previous demand realization by
                   a fraction alpha of the prior forecast error; every such
                   move must classify as "toward demand"
* random        -- uniform order on the demand range, for null baselines

Scripted kinds ignore the prompt text and decide from the round context; the
llm kind sends one chat request and extracts an integer order from the reply.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .model import ScenarioConfig, anchor, optimal_quantity
from .prompts import RoundContext

LLM = "llm"
OPTIMAL = "optimal"
MEAN_ANCHOR = "mean-anchor"
DEMAND_CHASER = "demand-chaser"
RANDOM = "random"
AGENT_KINDS = (LLM, OPTIMAL, MEAN_ANCHOR, DEMAND_CHASER, RANDOM)
SCRIPTED_KINDS = (OPTIMAL, MEAN_ANCHOR, DEMAND_CHASER, RANDOM)

EXACT = "exact"
FALLBACK = "fallback"
AMBIGUOUS = "ambiguous"


class AmbiguousDecisionError(ValueError):
    """No plausible order quantity could be extracted from a response."""


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _round_away_from_zero(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class ParsePolicy:
    """Ordered extraction rules; the first in-range match wins.

    ``patterns`` are regexes with one capture group for the integer. If none
    matches, the fallback takes the last integer within ``plausible_range``.
    """

    patterns: tuple[str, ...]
    plausible_range: tuple[int, int]
    max_retries: int = 2


DEFAULT_PATTERNS = (
    r"(?i)order\s+(?:about\s+|around\s+|approximately\s+)?(\d[\d,]*)\s+wodgets",
    r"(?i)order\s+quantity\s*(?:is|of|:|=)?\s*\**\s*(\d[\d,]*)",
    r"(?i)(?:\bwill order|\bi order|decide to order|ordering)\s*:?\s*\**\s*(\d[\d,]*)",
)


def default_parse_policy(sc: ScenarioConfig) -> ParsePolicy:
    return ParsePolicy(DEFAULT_PATTERNS, (0, 2 * sc.demand.upper))


def _to_int(token: str) -> int:
    return int(token.replace(",", ""))


def extract_order(raw: str, policy: ParsePolicy) -> tuple[int, str]:
    """Pull an integer order out of free text.

    Pass 1 tries the explicit patterns in order, then the last standalone
    integer on a line mentioning "order"; any in-range hit is tagged exact.
    Pass 2 falls back to the last in-range integer anywhere. Pure and
    idempotent; raises AmbiguousDecisionError when nothing qualifies.
    """
    lo, hi = policy.plausible_range
    for pattern in policy.patterns:
        for match in re.finditer(pattern, raw):
            value = _to_int(match.group(1))
            if lo <= value <= hi:
                return value, EXACT
    standalone = r"(?<![\d.,])(\d[\d,]*)(?!\.?\d)"
    for line in reversed(raw.splitlines()):
        if "order" not in line.lower():
            continue
        hits = [_to_int(t) for t in re.findall(standalone, line)]
        hits = [v for v in hits if lo <= v <= hi]
        if hits:
            return hits[-1], EXACT
    all_hits = [_to_int(t) for t in re.findall(standalone, raw)]
    all_hits = [v for v in all_hits if lo <= v <= hi]
    if all_hits:
        return all_hits[-1], FALLBACK
    raise AmbiguousDecisionError(f"no plausible order in range [{lo}, {hi}] found in response")


@dataclass(frozen=True)
class AgentSpec:
    """Configuration of one decision agent.

    ``anchor_weight`` applies to mean-anchor, ``chase_rate`` (with the
    optional ``switch_round`` / ``chase_rate_before`` schedule) to the
    demand-chaser, ``model_name`` / ``temperature`` / ``parse_policy`` to the
    llm kind. Temperature defaults to 1.0.
    """

    kind: str
    model_name: str | None = None
    temperature: float = 1.0
    anchor_weight: float | None = None
    chase_rate: float | None = None
    chase_rate_before: float = 0.0
    switch_round: int | None = None
    parse_policy: ParsePolicy | None = None

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.kind == LLM and not self.model_name:
            raise ValueError("llm agent needs a model_name")
        if self.kind == MEAN_ANCHOR:
            if self.anchor_weight is None or not 0 <= self.anchor_weight <= 1:
                raise ValueError("mean-anchor agent needs anchor_weight in [0, 1]")
        if self.kind == DEMAND_CHASER:
            if self.chase_rate is None or self.chase_rate < 0:
                raise ValueError("demand-chaser agent needs chase_rate >= 0")

    @property
    def label(self) -> str:
        if self.kind == LLM:
            return self.model_name
        if self.kind == MEAN_ANCHOR:
            return f"mean-anchor(w={self.anchor_weight:g})"
        if self.kind == DEMAND_CHASER:
            if self.switch_round is not None:
                return (
                    f"demand-chaser(alpha={self.chase_rate:g},"
                    f"switch@{self.switch_round}from{self.chase_rate_before:g})"
                )
            return f"demand-chaser(alpha={self.chase_rate:g})"
        return self.kind


@dataclass(frozen=True)
class Decision:
    """One round's decision: the order, the stated reasoning, and provenance."""

    order: int
    rationale: str
    raw_response: str
    parse_confidence: str
    retries: int = 0
    token_usage: dict | None = None

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be a nonnegative integer")


RETRY_NUDGE = (
    "I could not find a clear order quantity in your reply. "
    "Please state your final decision as a single integer, for example: I will order 150 wodgets."
)


def _scripted_order(agent: AgentSpec, ctx: RoundContext, rng) -> tuple[int, str]:
    sc = ctx.scenario
    q_star = optimal_quantity(sc)
    mean = anchor(sc)
    if agent.kind == OPTIMAL:
        return q_star, f"Scripted rule: always order the critical-fractile optimum {q_star}."
    if agent.kind == MEAN_ANCHOR:
        w = agent.anchor_weight
        order = round_half_up(mean + w * (q_star - mean))
        return order, (
            f"Scripted rule: anchor on the demand mean {mean:g} and adjust a fraction "
            f"w={w:g} of the way toward the optimum {q_star}."
        )
    if agent.kind == DEMAND_CHASER:
        alpha = agent.chase_rate
        if agent.switch_round is not None and ctx.round_index < agent.switch_round:
            alpha = agent.chase_rate_before
        if ctx.round_index == 1 or ctx.last_order is None:
            return round_half_up(mean), (
                f"Scripted rule: start at the demand mean {mean:g}, then chase the previous "
                f"demand with rate alpha={agent.chase_rate:g}."
            )
        error = ctx.last_demand - ctx.last_order
        step = _round_away_from_zero(alpha * error)
        if alpha > 0 and error != 0 and step == 0:
            # always move at least one unit toward the observed demand
            step = 1 if error > 0 else -1
        order = max(0, min(ctx.last_order + step, 2 * sc.demand.upper))
        return order, (
            f"Scripted rule: previous error {error:+d}, chasing with alpha={alpha:g} "
            f"moves the order by {step:+d}."
        )
    if agent.kind == RANDOM:
        if rng is None:
            raise ValueError("random agent needs an rng")
        order = int(rng.integers(sc.demand.lower, sc.demand.upper + 1))
        return order, "Scripted rule: order uniformly at random over the demand range."
    raise ValueError(f"not a scripted kind: {agent.kind}")


def decide(
    agent: AgentSpec,
    prompt: str,
    ctx: RoundContext,
    rng=None,
    client=None,
    transcript: list[dict] | None = None,
) -> Decision:
    """Produce one round's decision.

    Scripted kinds are deterministic given (ctx, rng) and never error. The
    llm kind appends ``prompt`` to ``transcript`` (not mutated), sends one
    chat request via ``client`` and extracts the order; unparseable replies
    are re-prompted up to the policy's max_retries with a clarification turn
    that stays out of the persistent transcript.
    """
    if agent.kind != LLM:
        order, rationale = _scripted_order(agent, ctx, rng)
        return Decision(order, rationale, rationale, EXACT)

    if client is None:
        raise ValueError("llm agent needs a chat client")
    policy = agent.parse_policy or default_parse_policy(ctx.scenario)
    messages = list(transcript or []) + [{"role": "user", "content": prompt}]
    attempts = 0
    retries = 0
    usage = None
    while True:
        result = client.chat(messages)
        retries += result.retries
        usage = _merge_usage(usage, result.usage)
        try:
            order, confidence = extract_order(result.text, policy)
        except AmbiguousDecisionError:
            attempts += 1
            if attempts > policy.max_retries:
                raise
            messages = messages + [
                {"role": "assistant", "content": result.text},
                {"role": "user", "content": RETRY_NUDGE},
            ]
            continue
        return Decision(
            order=order,
            rationale=result.text,
            raw_response=result.text,
            parse_confidence=confidence,
            retries=retries,
            token_usage=usage,
        )


def _merge_usage(acc: dict | None, new: dict | None) -> dict | None:
    if not new:
        return acc
    if not acc:
        return dict(new)
    merged = dict(acc)
    for key, value in new.items():
        if isinstance(value, (int, float)) and isinstance(merged.get(key), (int, float)):
            merged[key] = merged[key] + value
        else:
            merged[key] = value
    return merged
