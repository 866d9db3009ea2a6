"""Render the experiment prompts and check them against the golden files.

Run:  python demos/02_prompt_rendering.py
"""

from nvlab import RoundContext, render_feedback, render_prompt, scenario, validate_golden
from nvlab.store import RoundRecord

# Round 1: context and instructions only, no feedback, no formula.
round_one = RoundContext(scenario("E1-baseline", "high", "uniform"), round_index=1)
print("=" * 72)
print("ROUND 1 PROMPT (baseline, high margin, uniform demand)")
print("=" * 72)
print(render_prompt(round_one))

# From round 2 on, the previous outcome is embedded in the prompt. With the
# formula variant, the critical-fractile guidance block is appended too.
round_five = RoundContext(
    scenario("E2-formula", "low", "truncated-normal"),
    round_index=5,
    last_order=120,
    last_demand=85,
    last_profit=255,
    cumulative_profit=1450,
)
print("=" * 72)
print("ROUND 5 PROMPT (formula variant, low margin, normal demand)")
print("=" * 72)
print(render_prompt(round_five))

# The feedback text alone, as it would follow a completed round.
last = RoundRecord(
    run_id="demo", condition_index=0, agent="demo", experiment="E1-baseline",
    dist="uniform", order_condition="high-first", repetition=0, block_index=1,
    margin="high", round_index=1, order=185, demand=210, profit=1665,
    cumulative_profit=1665, parse_confidence="exact", prompt_sha256="",
    raw_response="",
)
print("=" * 72)
print("FEEDBACK TEXT")
print("=" * 72)
print(render_feedback(last))
print()

# Byte-for-byte fidelity against the three stored golden prompts.
print("golden-file checks:")
for check in validate_golden():
    print(f"  {'ok ' if check.ok else 'FAIL'} {check.name}")
