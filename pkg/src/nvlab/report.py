"""Report bundle: analysis tables and figure data from run stores.

Reads one or more run directories (never mutating them), recomputes every
metric from the persisted rounds, and writes a deterministic set of CSV files
plus a Markdown summary. Re-running over the same stores is bit-identical.

Files emitted into the output directory:

* ``bias_table.csv``            mean orders, optima, deviations, NB, PE per
                                (experiment, distribution, agent, margin)
* ``mas_table.csv``             adjustment scores split by presentation order
* ``risk_neutral_table.csv``    the risk-neutral variant in mean | optimal |
                                NB% form
* ``learning_table.csv``        convergence slope, efficiency slope, delta R^2
* ``quartile_table.csv``        direction shares by prior-error quartile
* ``round_trajectories.csv``    per-round mean orders (ordering-trajectory data)
* ``adjustment_shares_by_round.csv``  per-round direction shares
* ``word_frequencies.csv``      ranked rationale unigrams
* ``report.md``                 human-readable summary of the tables

Incomplete trajectories are excluded. Human reference rows (clearly labeled
with their source) are appended where available when ``compare_humans`` is
set.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from . import humans, metrics, model
from .runner import ExperimentPlan, _scenario_lookup
from .store import RunStore, Trajectory, group_trajectories

DIST_ORDER = {model.UNIFORM: 0, model.TRUNCATED_NORMAL: 1, model.LOGNORMAL: 2}
PE_LABEL = "pe_optimal_over_actual_pct"
TOP_WORDS = 50


class ReportError(ValueError):
    """The requested report cannot be built from the given stores."""


@dataclass(frozen=True)
class ReportBundle:
    output_dir: Path
    files: dict[str, Path]


def load_trajectories(run_dirs, include_incomplete: bool = False) -> list[Trajectory]:
    """Validated trajectories from one or more run stores."""
    out: list[Trajectory] = []
    for run_dir in run_dirs:
        store = RunStore(run_dir)
        manifest = store.manifest()
        plan = ExperimentPlan.from_dict(manifest["plan"])
        rounds = {c.rounds_per_block for c in plan.conditions}
        trajectories = group_trajectories(
            store.records(), _scenario_lookup(plan), expected_rounds=max(rounds)
        )
        for trajectory in trajectories:
            if trajectory.complete or include_incomplete:
                out.append(trajectory)
    if not out:
        raise ReportError("no complete trajectories in the given run directories")
    return out


def _dist_rank(dist: str) -> int:
    return DIST_ORDER.get(dist, len(DIST_ORDER))


def _fmt(value, digits) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def _group(trajectories, key_fn) -> dict:
    groups: dict = {}
    for t in trajectories:
        groups.setdefault(key_fn(t), []).append(t)
    return groups


def _condition_key(t: Trajectory):
    sc = t.scenario
    return (sc.experiment, _dist_rank(sc.demand.kind), sc.demand.kind, t.agent)


def _write_csv(path: Path, header: list[str], rows: list[list]):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buffer.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# tables


def bias_rows(trajectories, compare_humans=False) -> tuple[list[str], list[list]]:
    header = [
        "experiment", "distribution", "agent",
        "mean_order_high", "optimal_high", "deviation_high", "nb_high_pct", f"{PE_LABEL}_high",
        "mean_order_low", "optimal_low", "deviation_low", "nb_low_pct", f"{PE_LABEL}_low",
        "source",
    ]
    rows = []
    seen_human = set()
    for key in sorted(_group(trajectories, _condition_key)):
        experiment, _, dist, agent = key
        group = [t for t in trajectories if _condition_key(t) == key]
        cells: dict[str, list[str]] = {}
        for margin in (model.HIGH, model.LOW):
            subset = [t for t in group if t.scenario.margin == margin]
            if not subset:
                cells[margin] = ["", "", "", "", ""]
                continue
            stats = metrics.bias_stats(subset)
            pe = metrics.mean_order_profit_efficiency(subset)
            cells[margin] = [
                _fmt(stats.mean_order, 2), str(stats.optimal), _fmt(stats.order_bias, 2),
                _fmt(stats.normalized_bias, 2), _fmt(pe, 2),
            ]
        rows.append([experiment, dist, agent, *cells[model.HIGH], *cells[model.LOW], "this run"])
        if compare_humans and experiment == model.E1 and dist not in seen_human:
            human_row = _human_bias_row(dist)
            if human_row:
                seen_human.add(dist)
                rows.append(human_row)
    return header, rows


def _human_bias_row(dist: str) -> list | None:
    high = humans.bias_row(dist, model.HIGH)
    low = humans.bias_row(dist, model.LOW)
    if not high or not low:
        return None
    cells = []
    for ref in (high, low):
        deviation = ref["mean_order"] - ref["optimal"]
        cells += [
            _fmt(ref["mean_order"], 2), str(ref["optimal"]), _fmt(deviation, 2),
            _fmt(deviation / ref["optimal"] * 100.0, 2), "",
        ]
    return [model.E1, dist, humans.HUMAN_LABEL, *cells, humans.source()]


def mas_rows(trajectories, compare_humans=False) -> tuple[list[str], list[list]]:
    header = [
        "order_condition", "experiment", "distribution", "agent",
        "mas_high", "mas_low", "anchor", "source",
    ]
    rows = []
    seen_human = set()
    key_fn = lambda t: (t.order_condition, *_condition_key(t))
    for key in sorted(_group(trajectories, key_fn)):
        order_condition, experiment, _, dist, agent = key
        group = [t for t in trajectories if key_fn(t) == key]
        cells = {}
        anchor_value = ""
        for margin in (model.HIGH, model.LOW):
            subset = [t for t in group if t.scenario.margin == margin]
            if not subset:
                cells[margin] = ""
                continue
            stats = metrics.anchor_stats(subset)
            cells[margin] = "undefined" if stats.undefined else _fmt(stats.mas, 3)
            anchor_value = _fmt(stats.anchor, 1)
        rows.append(
            [order_condition, experiment, dist, agent,
             cells[model.HIGH], cells[model.LOW], anchor_value, "this run"]
        )
        if compare_humans and experiment == model.E1 and (order_condition, dist) not in seen_human:
            high = humans.adjustment_score(order_condition, dist, model.HIGH)
            low = humans.adjustment_score(order_condition, dist, model.LOW)
            if high is not None and low is not None:
                seen_human.add((order_condition, dist))
                rows.append(
                    [order_condition, experiment, dist, humans.HUMAN_LABEL,
                     _fmt(high, 3), _fmt(low, 3), "", humans.source()]
                )
    return header, rows


def risk_neutral_rows(trajectories) -> tuple[list[str], list[list]]:
    header = [
        "distribution", "agent", "margin", "mean_order", "optimal", "nb_pct", "source",
    ]
    rows = []
    subset = [t for t in trajectories if t.scenario.experiment == model.E3]
    key_fn = lambda t: (_dist_rank(t.scenario.demand.kind), t.scenario.demand.kind,
                        t.agent, 0 if t.scenario.margin == model.HIGH else 1,
                        t.scenario.margin)
    for key in sorted(_group(subset, key_fn)):
        _, dist, agent, _, margin = key
        group = [t for t in subset if key_fn(t) == key]
        stats = metrics.bias_stats(group)
        rows.append([
            dist, agent, margin, _fmt(stats.mean_order, 2), str(stats.optimal),
            _fmt(stats.normalized_bias, 2), "this run",
        ])
    return header, rows


def learning_rows(trajectories) -> tuple[list[str], list[list]]:
    header = [
        "experiment", "distribution", "agent", "margin",
        "convergence_slope", "efficiency_slope", "delta_r2", "n_trajectories",
    ]
    rows = []
    key_fn = lambda t: (*_condition_key(t), 0 if t.scenario.margin == model.HIGH else 1,
                        t.scenario.margin)
    for key in sorted(_group(trajectories, key_fn)):
        experiment, _, dist, agent, _, margin = key
        group = [t for t in trajectories if key_fn(t) == key]
        try:
            stats = metrics.average_learning_stats(group)
        except metrics.MetricsError:
            # blocks too short for the early/late split
            rows.append([experiment, dist, agent, margin, "", "", "", str(len(group))])
            continue
        rows.append([
            experiment, dist, agent, margin,
            _fmt(stats["convergence_slope"], 3), _fmt(stats["efficiency_slope"], 3),
            _fmt(stats["delta_r2"], 3), str(stats["n_trajectories"]),
        ])
    return header, rows


def _pooled_events(trajectories) -> dict[tuple, list]:
    """Quartile-tagged adjustment events pooled per (experiment, dist, agent, order)."""
    pools: dict[tuple, list] = {}
    for t in trajectories:
        key = (t.scenario.experiment, _dist_rank(t.scenario.demand.kind),
               t.scenario.demand.kind, t.agent, t.order_condition)
        pools.setdefault(key, []).extend(metrics.classify_adjustments(t))
    out = {}
    for key, events in pools.items():
        try:
            cuts = metrics.quartile_thresholds([abs(e.prior_error) for e in events])
        except metrics.MetricsError:
            continue  # pool too small to cut into quartiles
        out[key] = metrics.assign_quartiles(events, cuts)
    return out


def quartile_rows(trajectories, compare_humans=False) -> tuple[list[str], list[list]]:
    header = [
        "experiment", "distribution", "agent", "order_condition", "error_quartile",
        "no_change_pct", "toward_pct", "away_pct", "n_events", "source",
    ]
    rows = []
    seen_human = set()
    pools = _pooled_events(trajectories)
    for key in sorted(pools):
        experiment, _, dist, agent, order_condition = key
        events = pools[key]
        for quartile in metrics.QUARTILES:
            bucket = [e for e in events if e.quartile == quartile]
            if not bucket:
                rows.append([experiment, dist, agent, order_condition, quartile,
                             "", "", "", "0", "this run"])
                continue
            shares = metrics.direction_shares(bucket)
            rows.append([
                experiment, dist, agent, order_condition, quartile,
                _fmt(shares[metrics.NO_CHANGE], 1), _fmt(shares[metrics.TOWARD], 1),
                _fmt(shares[metrics.AWAY], 1), str(len(bucket)), "this run",
            ])
        if compare_humans and experiment == model.E1 and (dist, order_condition) not in seen_human:
            seen_human.add((dist, order_condition))
            for quartile in ("Q1", "Q4"):
                ref = humans.adjustment_shares(dist, order_condition, quartile)
                if ref:
                    rows.append([
                        experiment, dist, humans.HUMAN_LABEL, order_condition, quartile,
                        _fmt(ref["no-change"], 1), _fmt(ref["toward"], 1),
                        _fmt(ref["away"], 1), "", humans.source(),
                    ])
    return header, rows


# ---------------------------------------------------------------------------
# figure data


def round_trajectory_rows(trajectories) -> tuple[list[str], list[list]]:
    header = [
        "experiment", "distribution", "agent", "order_condition", "block_index",
        "margin", "round", "mean_order", "optimal", "anchor", "n_repetitions",
    ]
    rows = []
    key_fn = lambda t: (*_condition_key(t), t.order_condition, t.block_index)
    for key in sorted(_group(trajectories, key_fn)):
        experiment, _, dist, agent, order_condition, block_index = key
        group = [t for t in trajectories if key_fn(t) == key]
        sc = group[0].scenario
        q_star = model.optimal_quantity(sc)
        anchor_value = model.anchor(sc)
        n_rounds = max(len(t.orders) for t in group)
        for r in range(n_rounds):
            orders = [t.orders[r] for t in group if len(t.orders) > r]
            rows.append([
                experiment, dist, agent, order_condition, str(block_index), sc.margin,
                str(r + 1), _fmt(sum(orders) / len(orders), 2), str(q_star),
                _fmt(anchor_value, 1), str(len(orders)),
            ])
    return header, rows


def adjustment_share_rows(trajectories) -> tuple[list[str], list[list]]:
    header = [
        "experiment", "distribution", "agent", "order_condition", "block_index",
        "margin", "round", "no_change_pct", "toward_pct", "away_pct", "n_repetitions",
    ]
    rows = []
    key_fn = lambda t: (*_condition_key(t), t.order_condition, t.block_index)
    for key in sorted(_group(trajectories, key_fn)):
        experiment, _, dist, agent, order_condition, block_index = key
        group = [t for t in trajectories if key_fn(t) == key]
        margin = group[0].scenario.margin
        by_round: dict[int, list] = {}
        for t in group:
            for event in metrics.classify_adjustments(t):
                by_round.setdefault(event.round_index, []).append(event)
        for round_index in sorted(by_round):
            shares = metrics.direction_shares(by_round[round_index])
            rows.append([
                experiment, dist, agent, order_condition, str(block_index), margin,
                str(round_index), _fmt(shares[metrics.NO_CHANGE], 1),
                _fmt(shares[metrics.TOWARD], 1), _fmt(shares[metrics.AWAY], 1),
                str(len(by_round[round_index])),
            ])
    return header, rows


def word_frequency_rows(trajectories, top=TOP_WORDS) -> tuple[list[str], list[list]]:
    texts = [text for t in trajectories for text in t.rationales]
    ranked = metrics.word_frequencies(texts)[:top]
    return ["term", "count"], [[term, str(count)] for term, count in ranked]


# ---------------------------------------------------------------------------
# bundle


def _markdown_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(lines)


def build_report(run_dirs, output_dir, compare_humans: bool = False) -> ReportBundle:
    """Compute all tables and figure data; write them under ``output_dir``."""
    trajectories = load_trajectories(run_dirs)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    sections = {
        "bias_table.csv": ("Ordering bias", bias_rows(trajectories, compare_humans)),
        "mas_table.csv": ("Adjustment scores", mas_rows(trajectories, compare_humans)),
        "risk_neutral_table.csv": ("Risk-neutral variant", risk_neutral_rows(trajectories)),
        "learning_table.csv": ("Learning over rounds", learning_rows(trajectories)),
        "quartile_table.csv": (
            "Adjustment direction by prior-error quartile",
            quartile_rows(trajectories, compare_humans),
        ),
        "round_trajectories.csv": ("Per-round mean orders", round_trajectory_rows(trajectories)),
        "adjustment_shares_by_round.csv": (
            "Per-round adjustment shares", adjustment_share_rows(trajectories)),
        "word_frequencies.csv": ("Rationale word frequencies", word_frequency_rows(trajectories)),
    }

    files = {}
    md = ["# Experiment report", ""]
    md.append(f"Complete trajectories: {len(trajectories)}")
    md.append(f"Profit-efficiency columns use the optimal-over-actual orientation ({PE_LABEL}).")
    if compare_humans:
        md.append(f"Human reference rows: {humans.source()}.")
    md.append("")
    for filename, (title, (header, rows)) in sections.items():
        path = output_dir / filename
        _write_csv(path, header, rows)
        files[filename] = path
        md.append(f"## {title}")
        md.append("")
        md.append(_markdown_table(header, rows))
        md.append("")
    report_path = output_dir / "report.md"
    report_path.write_text("\n".join(md), encoding="utf-8")
    files["report.md"] = report_path
    return ReportBundle(output_dir, files)
