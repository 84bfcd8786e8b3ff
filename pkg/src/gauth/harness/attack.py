"""Replay experiment: run a scenario with and without its adversary."""

from __future__ import annotations

from dataclasses import dataclass

from ..simnet.runner import RunResult, run
from .scenario import ScenarioConfig, ScenarioError


@dataclass
class ReplayVerdict:
    presented: int
    accepted: int
    legit_unaffected: bool
    attacked: RunResult
    baseline: RunResult

    @property
    def passed(self) -> bool:
        return self.presented > 0 and self.accepted == 0 and self.legit_unaffected

    def format(self) -> str:
        lines = [f"{name}: {p} presented, {a} accepted" for name, (p, a) in sorted(self.attacked.adversary.items())]
        lines.append(f"legitimate session unaffected: {'yes' if self.legit_unaffected else 'no'}")
        lines.append(f"verdict: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def attack_replay(cfg: ScenarioConfig, seed: int | None = None) -> ReplayVerdict:
    """PASS iff every adversarial presentation is rejected and the victim sees no difference."""
    if not any(a.name in ("replay", "guess") for a in cfg.timeline):
        raise ScenarioError(cfg.source, None, "scenario has no replay or guess action")
    attacked = run(cfg, seed)
    baseline = run(cfg.without_adversary(), seed)
    presented = sum(p for p, _ in attacked.adversary.values())
    accepted = sum(a for _, a in attacked.adversary.values())
    same = attacked.legit_outcome() == baseline.legit_outcome()
    return ReplayVerdict(presented, accepted, same, attacked, baseline)
