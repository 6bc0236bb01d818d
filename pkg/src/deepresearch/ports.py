"""Provider ports.

The engine talks to the outside world through three narrow interfaces:
a completion policy, a search/scrape environment, and a checklist
critic. Implementations must be safe for concurrent calls up to the
configured fanout; the bundled offline implementations are stateless.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Protocol, runtime_checkable

if TYPE_CHECKING:
    from .checklist import Checklist, PlanIntent, ReviewDecision
    from .evidence import RawResult
    from .providers import PromptTemplate, SearchTask


class ProviderError(Exception):
    """Base class for provider-side failures."""


class TransientProviderError(ProviderError):
    """Retryable failure (timeout, 5xx, rate limit)."""


class FixtureMissError(ProviderError):
    """Offline provider has no entry for the requested key."""


class CriticTimeout(ProviderError):
    """Critic did not answer within the configured review window."""


@runtime_checkable
class PolicyPort(Protocol):
    def complete(self, template: "PromptTemplate", bindings: dict[str, str]) -> str:
        """Return the completion for a rendered prompt."""
        ...


@runtime_checkable
class EnvironmentPort(Protocol):
    def search(self, task: "SearchTask", step_index: int) -> list["RawResult"]:
        """Execute one search task; errors come back as error-status results."""
        ...


@runtime_checkable
class CriticPort(Protocol):
    def review(
        self,
        checklist: "Checklist",
        intents: list["PlanIntent"],
        round_index: int,
    ) -> "ReviewDecision":
        """Produce one round of per-item verdicts. May raise CriticTimeout."""
        ...
