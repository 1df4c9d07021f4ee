"""Logit trajectory diagnostics on the first session's test instances.

After every learning session the tracker measures, over a fixed probe set
(test instances whose gold class was learned first), the mean logit of the
gold class (series ``gold``) and the mean of the newest block's maximum
logit (series ``ncp``). Collectively-trained baselines show the newest
block's scores climbing past the gold scores; individually-trained blocks
keep the gold series exactly flat.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureStore, SessionPlan
from .strategies import EnsembleClassifier

GOLD = "gold"
NCP = "ncp"


class DriftError(ValueError):
    pass


@dataclass(frozen=True)
class DriftProbe:
    """Frozen evaluation set: features and gold rows within the first block."""

    features: np.ndarray
    gold_rows: np.ndarray

    @property
    def size(self) -> int:
        return int(self.features.shape[0])


def make_probe(store: FeatureStore, plan: SessionPlan) -> DriftProbe:
    """Collect the test instances of the plan's first session, once."""
    first = plan.sessions[0]
    test_idx = store.indices("test")
    codes = store.label_codes[test_idx]
    first_codes = np.array([store.classes.index(c) for c in first], dtype=np.int32)
    mask = np.isin(codes, first_codes)
    rows = test_idx[mask]
    if rows.size == 0:
        raise DriftError("no test instances carry a first-session gold class")
    row_of = {store.classes.index(c): i for i, c in enumerate(first)}
    gold_rows = np.array([row_of[int(c)] for c in codes[mask]], dtype=np.int64)
    return DriftProbe(features=store.features[rows], gold_rows=gold_rows)


def track(ensemble: EnsembleClassifier, probe: DriftProbe) -> tuple[float, float | None]:
    """Mean gold logit (via the first block) and mean NCP (via the newest).

    NCP is None while only one session has been learned.
    """
    if probe.size == 0:
        raise DriftError("empty probe")
    if ensemble.num_blocks == 0:
        raise DriftError("ensemble has no trained blocks")
    first_logits = probe.features @ ensemble.blocks[0].weights.T
    gold_mean = float(first_logits[np.arange(probe.size), probe.gold_rows].mean())
    if ensemble.num_blocks < 2:
        return gold_mean, None
    newest = probe.features @ ensemble.blocks[-1].weights.T
    return gold_mean, float(newest.max(axis=1).mean())


@dataclass
class LogitTrace:
    """Accumulated (session, gold, ncp) rows for one strategy run."""

    rows: list[tuple[int, float, float | None]] = field(default_factory=list)

    def append(self, session: int, gold_mean: float, ncp_mean: float | None) -> None:
        if self.rows and session <= self.rows[-1][0]:
            raise DriftError("sessions must be strictly increasing")
        self.rows.append((session, gold_mean, ncp_mean))

    def series(self, name: str) -> list[tuple[int, float]]:
        if name == GOLD:
            return [(s, g) for s, g, _ in self.rows]
        if name == NCP:
            return [(s, n) for s, _, n in self.rows if n is not None]
        raise DriftError(f"unknown series {name!r}")
