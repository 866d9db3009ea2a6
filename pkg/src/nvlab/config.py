"""Run configuration: a single JSON file, env-var override for the secret.

The defaults reproduce the full condition grid -- every experiment variant
crossed with the uniform and truncated-normal demand models, both
presentation orders, 10 repetitions of two 15-round blocks. The lognormal
model is opt-in (its baseline-range calibration does not extend to the
risk-neutral range). The credential itself never lives in the config file,
only the name of the environment variable that holds it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import model
from .agents import AgentSpec
from .runner import ORDER_CONDITIONS, ExperimentPlan, PlanCondition

EXPERIMENT_ALIASES = {
    "E1": model.E1, "E2": model.E2, "E3": model.E3,
    model.E1: model.E1, model.E2: model.E2, model.E3: model.E3,
}
DIST_ALIASES = {
    "uniform": model.UNIFORM,
    "normal": model.TRUNCATED_NORMAL,
    "truncated-normal": model.TRUNCATED_NORMAL,
    "lognormal": model.LOGNORMAL,
}

DEFAULT_EXPERIMENTS = (model.E1, model.E2, model.E3)
DEFAULT_DISTRIBUTIONS = (model.UNIFORM, model.TRUNCATED_NORMAL)


class ConfigError(ValueError):
    """A configuration field is missing or invalid; the message names it."""


@dataclass
class RunConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    models: tuple[str, ...] = ("gpt-4",)
    credential_env: str = "OPENAI_API_KEY"
    experiments: tuple[str, ...] = DEFAULT_EXPERIMENTS
    distributions: tuple[str, ...] = DEFAULT_DISTRIBUTIONS
    order_conditions: tuple[str, ...] = ORDER_CONDITIONS
    repetitions: int = 10
    rounds: int = 15
    base_seed: int = 0
    output_dir: str = "runs"
    temperature: float = 1.0
    transcript_continuity: bool = True
    max_retries: int = 3
    backoff_base: float = 0.5
    request_budget: int | None = None
    rate_limit_per_minute: float | None = None

    def __post_init__(self):
        self.models = tuple(self.models)
        self.experiments = tuple(EXPERIMENT_ALIASES.get(e, e) for e in self.experiments)
        self.distributions = tuple(DIST_ALIASES.get(d, d) for d in self.distributions)
        self.order_conditions = tuple(self.order_conditions)
        self.validate()

    def validate(self):
        for exp in self.experiments:
            if exp not in model.EXPERIMENTS:
                raise ConfigError(f"experiments: unknown experiment {exp!r}")
        for dist in self.distributions:
            if dist not in model.DIST_KINDS:
                raise ConfigError(f"distributions: unknown distribution {dist!r}")
        for order in self.order_conditions:
            if order not in ORDER_CONDITIONS:
                raise ConfigError(f"order_conditions: unknown order condition {order!r}")
        if not self.experiments:
            raise ConfigError("experiments: must not be empty")
        if not self.distributions:
            raise ConfigError("distributions: must not be empty")
        if not self.order_conditions:
            raise ConfigError("order_conditions: must not be empty")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions: must be >= 1, got {self.repetitions}")
        if self.rounds < 1:
            raise ConfigError(f"rounds: must be >= 1, got {self.rounds}")
        if self.temperature < 0:
            raise ConfigError(f"temperature: must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries: must be >= 0, got {self.max_retries}")
        if self.request_budget is not None and self.request_budget < 1:
            raise ConfigError(f"request_budget: must be >= 1, got {self.request_budget}")
        if not self.endpoint:
            raise ConfigError("endpoint: must not be empty")
        if not self.credential_env:
            raise ConfigError("credential_env: must not be empty")

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("models", "experiments", "distributions", "order_conditions"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_file(self, path: Path | str):
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def skip_condition(experiment: str, dist: str) -> bool:
    """Conditions with no defined scenario (lognormal has no risk-neutral fit)."""
    return experiment == model.E3 and dist == model.LOGNORMAL


def build_plan(config: RunConfig, agents: list[AgentSpec]) -> ExperimentPlan:
    """Expand the config grid for the given agents into an executable plan."""
    if not agents:
        raise ConfigError("agents: at least one agent is required")
    conditions = []
    for agent in agents:
        for experiment in config.experiments:
            for dist in config.distributions:
                if skip_condition(experiment, dist):
                    continue
                for order_condition in config.order_conditions:
                    conditions.append(
                        PlanCondition(
                            experiment=experiment,
                            dist_kind=dist,
                            agent=agent,
                            order_condition=order_condition,
                            repetitions=config.repetitions,
                            rounds_per_block=config.rounds,
                            base_seed=config.base_seed,
                        )
                    )
    if not conditions:
        raise ConfigError("experiments/distributions: the grid is empty")
    return ExperimentPlan(tuple(conditions), config.transcript_continuity)
