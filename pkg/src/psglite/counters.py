"""Deterministic work counters.

Latency on a shared desktop is noisy, so every claim about relative cost is
backed by counters that do not depend on the clock: number of pooling calls,
number of mask upsamples, number of relation-head passes, and multiply
-accumulate tallies for the dense math. Counters are process-global and reset
explicitly by the harness around each measured region.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Counters:
    pool_calls: int = 0
    upsample_calls: int = 0
    head_passes: int = 0
    macs: int = 0
    attn_macs: int = 0
    extra: dict = field(default_factory=dict)

    def reset(self) -> None:
        self.pool_calls = 0
        self.upsample_calls = 0
        self.head_passes = 0
        self.macs = 0
        self.attn_macs = 0
        self.extra.clear()

    def snapshot(self) -> dict:
        d = {
            "pool_calls": self.pool_calls,
            "upsample_calls": self.upsample_calls,
            "head_passes": self.head_passes,
            "macs": self.macs,
            "attn_macs": self.attn_macs,
        }
        d.update(self.extra)
        return d

    def bump(self, key: str, n: int = 1) -> None:
        self.extra[key] = self.extra.get(key, 0) + n


COUNTERS = Counters()
