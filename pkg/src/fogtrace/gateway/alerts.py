"""Threshold alert rules over the live row stream.

Each rule watches one channel and fires once per sustained episode: the
condition must hold continuously for the rule's sustain window, measured
from the first satisfying sample; any sample that breaks the condition
resets the episode. Defaults: heart rate above 120 bpm for 10 s, tension
respiration state for 30 s, and overspeed (immediate, once per episode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .records import TraceRow, scalar_of, state_of


@dataclass(frozen=True)
class AlertEvent:
    at: int
    rule: str
    detail: str


@dataclass(frozen=True)
class AlertRule:
    name: str
    channel: str
    test: Callable[[object], bool]
    sustain_ms: float
    numeric: bool = True


def default_rules(
    hr_limit_bpm: float = 120.0,
    hr_sustain_ms: float = 10_000.0,
    stress_sustain_ms: float = 30_000.0,
    overspeed_kmh: float = 120.0,
) -> list[AlertRule]:
    return [
        AlertRule("hr-high", "bpm", lambda v: v > hr_limit_bpm, hr_sustain_ms),
        AlertRule("stress", "resp_state", lambda v: v == "tension", stress_sustain_ms, numeric=False),
        AlertRule("overspeed", "speed_kmh", lambda v: v > overspeed_kmh, 0.0),
    ]


@dataclass
class _EpisodeState:
    started_at: int | None = None
    fired: bool = False


class AlertEngine:
    def __init__(self, rules: list[AlertRule] | None = None):
        self.rules = list(rules) if rules is not None else default_rules()
        self._episodes: dict[str, _EpisodeState] = {r.name: _EpisodeState() for r in self.rules}

    def reset(self) -> None:
        self._episodes = {r.name: _EpisodeState() for r in self.rules}

    def observe(self, row: TraceRow) -> list[AlertEvent]:
        events = []
        for rule in self.rules:
            if rule.channel != row.channel or row.interpolated:
                continue
            value: object
            if rule.numeric:
                value = scalar_of(row.value)
                if value is None:
                    continue
            else:
                value = state_of(row.value)
            episode = self._episodes[rule.name]
            if rule.test(value):
                if episode.started_at is None:
                    episode.started_at = row.timestamp_ms
                held_ms = row.timestamp_ms - episode.started_at
                if not episode.fired and held_ms >= rule.sustain_ms:
                    episode.fired = True
                    events.append(
                        AlertEvent(
                            at=row.timestamp_ms,
                            rule=rule.name,
                            detail=f"{rule.channel}={row.value} held {held_ms / 1000.0:.1f}s",
                        )
                    )
            else:
                episode.started_at = None
                episode.fired = False
        return events
