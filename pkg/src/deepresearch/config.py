"""Run configuration and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

WEIGHT_SUM_TOL = 1e-9

# A workspace must at least fit the question plus the section skeleton.
MIN_WORKSPACE_BUDGET = 512


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class RankWeights:
    """Weights for the four evidence-ranking criteria (must sum to 1)."""

    relevance: float = 0.4
    quality: float = 0.3
    timeliness: float = 0.15
    consistency: float = 0.15

    def validate(self) -> None:
        values = (self.relevance, self.quality, self.timeliness, self.consistency)
        if any(w < 0 for w in values):
            raise ConfigError("rank weights must be non-negative")
        if abs(sum(values) - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"rank weights must sum to 1, got {sum(values)}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.relevance, self.quality, self.timeliness, self.consistency)


@dataclass
class RunConfig:
    """Everything that parametrizes one research run."""

    max_steps: int = 40
    retention: int = 5
    workspace_budget: int = 32_000
    critic_mode: str = "none"  # human | llm | none
    vcm_enabled: bool = True
    eam_enabled: bool = True
    min_evidence_per_leaf: int = 1
    rank_weights: RankWeights = field(default_factory=RankWeights)
    audit_threshold: float = 0.25
    fanout: int = 4
    unsupported_policy: str = "hedge"  # hedge | drop

    # Checklist refinement
    max_critic_rounds: int = 3
    review_timeout_s: float = 1800.0
    review_fallback: str = "abort"  # llm-fallback | abort
    max_active_subgoals: int = 8
    max_outline_depth: int = 4

    # Evidence audit
    source_priors: dict[str, float] = field(default_factory=dict)
    default_source_prior: float = 0.5
    timeliness_half_life_days: float = 180.0
    include_descendants: bool = True
    bind_threshold: float = 0.0
    compose_top_k: int = 3
    summary_sentences: int = 2

    # Loop shape
    tasks_per_step: int = 1
    digest_max_chars: int = 400
    max_policy_calls: int = 0  # 0 = unlimited
    step_delay_ms: int = 0

    # Providers
    mock: bool = True
    fixtures_path: str = ""
    policy_endpoint: str = ""
    search_endpoint: str = ""

    def validate(self) -> None:
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.retention < 0:
            raise ConfigError("retention must be >= 0")
        if self.workspace_budget < MIN_WORKSPACE_BUDGET:
            raise ConfigError(
                f"workspace_budget must be >= {MIN_WORKSPACE_BUDGET} chars"
            )
        if self.critic_mode not in ("human", "llm", "none"):
            raise ConfigError(f"unknown critic_mode {self.critic_mode!r}")
        if self.unsupported_policy not in ("hedge", "drop"):
            raise ConfigError(f"unknown unsupported_policy {self.unsupported_policy!r}")
        if self.review_fallback not in ("llm-fallback", "abort"):
            raise ConfigError(f"unknown review_fallback {self.review_fallback!r}")
        if self.min_evidence_per_leaf < 0:
            raise ConfigError("min_evidence_per_leaf must be >= 0")
        if self.fanout < 1:
            raise ConfigError("fanout must be >= 1")
        if self.tasks_per_step < 1:
            raise ConfigError("tasks_per_step must be >= 1")
        if not 0.0 <= self.audit_threshold <= 1.0:
            raise ConfigError("audit_threshold must be in [0, 1]")
        if self.mock and not self.fixtures_path:
            raise ConfigError("mock mode requires fixtures_path")
        self.rank_weights.validate()

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        payload = dict(data)
        if "rank_weights" in payload and isinstance(payload["rank_weights"], dict):
            payload["rank_weights"] = RankWeights(**payload["rank_weights"])
        return cls(**payload)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        return cls.from_dict(data)
