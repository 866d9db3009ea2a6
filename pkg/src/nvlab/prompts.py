"""Prompt rendering for the ordering experiment.

Templates live as UTF-8 text assets (LF endings, one trailing newline) under
``assets/templates`` and are filled with named ``{placeholder}`` slots. Three
golden prompts under ``assets/golden`` pin the rendered output byte-for-byte;
`validate_golden` diffs the renderer against them.

Formatting rules the goldens rely on:

* integers render plain, no thousands separators;
* the truncated-normal standard deviation renders to one decimal ("49.8")
  even though the internal value is 49.8333...;
* the advertised demand mean is the range midpoint ("150.5" / "1050.5");
* profit values render as integers when integral, else with up to two
  decimals;
* the baseline variant uses a slightly shorter wording of the helpful-info
  lines, and the risk-neutral formula legend omits the cost clause -- both
  wordings are intentional and pinned by the golden files.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from pathlib import Path

from .model import (
    E1,
    E2,
    E3,
    HIGH,
    LOW,
    LOGNORMAL,
    TRUNCATED_NORMAL,
    UNIFORM,
    ScenarioConfig,
    scenario,
)


class TemplateError(ValueError):
    """A template placeholder could not be resolved."""


def _asset_root() -> Path:
    return Path(__file__).resolve().parent / "assets"


def fmt_int(value) -> str:
    n = int(round(float(value)))
    if n != value:
        raise TemplateError(f"expected an integer value, got {value!r}")
    return str(n)


def fmt_number(value) -> str:
    """Plain decimal rendering: 150.5 -> '150.5', 150.0 -> '150'."""
    x = float(value)
    if x == int(x):
        return str(int(x))
    return repr(x)


def fmt_francs(value) -> str:
    """Integral francs render as integers, otherwise up to two decimals."""
    x = float(value)
    if x == int(x):
        return str(int(x))
    text = f"{x:.2f}".rstrip("0").rstrip(".")
    return text


@dataclass(frozen=True)
class PromptTemplateSet:
    """The full template bundle, loaded from text assets."""

    base: str
    history_block: str
    formula_blocks: dict[str, str]        # experiment -> block (E2/E3 only)
    helpful_info: dict[str, str]          # experiment -> bullet lines
    distribution_descriptions: dict[str, str]
    distribution_formulas: dict[str, str]

    def digest_inputs(self) -> dict[str, str]:
        """Stable name -> text map used for manifest digests."""
        out = {"base": self.base, "history": self.history_block}
        for exp, text in sorted(self.formula_blocks.items()):
            out[f"formula:{exp}"] = text
        for exp, text in sorted(self.helpful_info.items()):
            out[f"helpful:{exp}"] = text
        for kind, text in sorted(self.distribution_descriptions.items()):
            out[f"description:{kind}"] = text
        for kind, text in sorted(self.distribution_formulas.items()):
            out[f"dist_formula:{kind}"] = text
        return out


def load_templates(root: Path | None = None) -> PromptTemplateSet:
    root = Path(root) if root is not None else _asset_root() / "templates"

    def read(name: str) -> str:
        path = root / name
        if not path.exists():
            raise TemplateError(f"missing template asset {path}")
        return path.read_text(encoding="utf-8")

    return PromptTemplateSet(
        base=read("base.txt"),
        history_block=read("history.txt"),
        formula_blocks={
            E2: read("formula_guidance.txt"),
            E3: read("formula_guidance_risk_neutral.txt"),
        },
        helpful_info={
            E1: read("helpful_info_baseline.txt"),
            E2: read("helpful_info_full.txt"),
            E3: read("helpful_info_full.txt"),
        },
        distribution_descriptions={
            UNIFORM: read("dist_uniform.txt"),
            TRUNCATED_NORMAL: read("dist_normal.txt"),
            LOGNORMAL: read("dist_lognormal.txt"),
        },
        distribution_formulas={
            UNIFORM: read("dist_formula_uniform.txt"),
            TRUNCATED_NORMAL: read("dist_formula_normal.txt"),
            LOGNORMAL: read("dist_formula_lognormal.txt"),
        },
    )


_DEFAULT_TEMPLATES: PromptTemplateSet | None = None


def default_templates() -> PromptTemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


@dataclass(frozen=True)
class RoundContext:
    """Everything the renderer needs for one round's prompt.

    Round 1 carries no feedback fields; from round 2 on, the previous round's
    order, demand, and profit must all be present. The renderer does not
    recompute profit -- values are formatted as given.
    """

    scenario: ScenarioConfig
    round_index: int
    last_order: int | None = None
    last_demand: int | None = None
    last_profit: float | None = None
    cumulative_profit: float = 0

    def __post_init__(self):
        if self.round_index < 1:
            raise ValueError("round_index is 1-based")
        feedback = (self.last_order, self.last_demand, self.last_profit)
        if self.round_index == 1 and any(v is not None for v in feedback):
            raise ValueError("round 1 must not carry feedback fields")
        if self.round_index > 1 and any(v is None for v in feedback):
            raise ValueError("rounds >= 2 need last_order, last_demand and last_profit")


class _Substitutions(dict):
    def __missing__(self, key):
        raise TemplateError(f"missing template variable '{key}'")


def _fill(template: str, values: dict[str, str]) -> str:
    try:
        return template.format_map(_Substitutions(values))
    except (IndexError, ValueError) as exc:
        raise TemplateError(f"malformed template placeholder: {exc}") from exc


def _demand_values(sc: ScenarioConfig) -> dict[str, str]:
    dist = sc.demand
    return {
        "a": fmt_int(dist.lower),
        "b": fmt_int(dist.upper),
        "mean": fmt_number(dist.midpoint),
        "std": f"{dist.sd_normal:.1f}",
    }


def render_prompt(ctx: RoundContext, templates: PromptTemplateSet | None = None) -> str:
    """Render one round's prompt; deterministic and locale-independent."""
    templates = templates or default_templates()
    sc = ctx.scenario
    values = _demand_values(sc)

    description = _fill(templates.distribution_descriptions[sc.demand.kind], values).strip()

    if ctx.round_index >= 2:
        history = _fill(
            templates.history_block,
            {
                "last_order": fmt_int(ctx.last_order),
                "last_demand": fmt_int(ctx.last_demand),
                "last_profit": fmt_francs(ctx.last_profit),
                "cumulative_profit": fmt_francs(ctx.cumulative_profit),
            },
        ).strip() + "\n"
    else:
        history = ""

    if sc.experiment in templates.formula_blocks:
        dist_formula = _fill(templates.distribution_formulas[sc.demand.kind], values).strip()
        formula = _fill(
            templates.formula_blocks[sc.experiment], {"distribution_formula": dist_formula}
        ).strip() + "\n\n"
    else:
        formula = ""

    return _fill(
        templates.base,
        {
            "cost": fmt_int(sc.cost.cost),
            "demand_description": description,
            "history_block": history,
            "helpful_info": templates.helpful_info[sc.experiment].strip(),
            "formula_block": formula,
        },
    )


def render_feedback(last, templates: PromptTemplateSet | None = None) -> str:
    """Feedback text for a completed round, in the history-block format.

    ``last`` is anything with order, demand, profit and cumulative_profit
    attributes (a stored round record qualifies).
    """
    templates = templates or default_templates()
    return _fill(
        templates.history_block,
        {
            "last_order": fmt_int(last.order),
            "last_demand": fmt_int(last.demand),
            "last_profit": fmt_francs(last.profit),
            "cumulative_profit": fmt_francs(last.cumulative_profit),
        },
    ).strip()


@dataclass(frozen=True)
class GoldenCheck:
    name: str
    golden_file: str
    ok: bool
    diff: str


def golden_contexts() -> list[tuple[str, str, RoundContext]]:
    """The three pinned rendering contexts and their golden file names."""
    return [
        (
            "baseline high-margin uniform, round 1",
            "e1_high_uniform_round1.txt",
            RoundContext(scenario(E1, HIGH, UNIFORM), 1),
        ),
        (
            "formula low-margin normal, round 5",
            "e2_low_normal_round5.txt",
            RoundContext(
                scenario(E2, LOW, TRUNCATED_NORMAL),
                5,
                last_order=120,
                last_demand=85,
                last_profit=255,
                cumulative_profit=1450,
            ),
        ),
        (
            "risk-neutral high-margin uniform, round 1",
            "e3_high_uniform_round1.txt",
            RoundContext(scenario(E3, HIGH, UNIFORM), 1),
        ),
    ]


def validate_golden(
    templates: PromptTemplateSet | None = None, golden_root: Path | None = None
) -> list[GoldenCheck]:
    """Render the pinned contexts and diff byte-for-byte against the goldens."""
    templates = templates or default_templates()
    golden_root = Path(golden_root) if golden_root is not None else _asset_root() / "golden"
    checks = []
    for name, filename, ctx in golden_contexts():
        path = golden_root / filename
        if not path.exists():
            checks.append(GoldenCheck(name, filename, False, f"missing golden file {path}"))
            continue
        expected = path.read_text(encoding="utf-8")
        actual = render_prompt(ctx, templates)
        if actual == expected:
            checks.append(GoldenCheck(name, filename, True, ""))
        else:
            diff = "\n".join(
                difflib.unified_diff(
                    expected.splitlines(),
                    actual.splitlines(),
                    fromfile=f"golden/{filename}",
                    tofile="rendered",
                    lineterm="",
                )
            )
            checks.append(GoldenCheck(name, filename, False, diff))
    return checks
