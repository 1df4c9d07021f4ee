"""Experiment orchestration: splits, permutations, training loops, reports.

All randomness fans out from a single master seed through
``SeedSequence(master, spawn_key=(permutation, session))``, so adding
permutations or resuming from a checkpoint never perturbs earlier results,
and a rerun with the same config is bit-identical.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data_io
from .core import FeatureStore, Ontology, SessionPlan, relabel_for_session
from .drift import LogitTrace, make_probe, track
from .evaluation import SessionMetrics, evaluate_session
from .strategies import (
    EnsembleClassifier,
    ReplayMemory,
    StrategyConfig,
    deserialize_ensemble,
    serialize_ensemble,
    train_session,
)

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: StrategyConfig
    num_sessions: int
    permutations: int = 5
    master_seed: int = 0
    feature_file: str | None = None
    synthetic: data_io.SyntheticSpec | None = None
    out_dir: str | None = None
    negative_cap: int | None = None

    def __post_init__(self):
        if self.permutations < 1:
            raise RunError("need at least one permutation")
        if self.num_sessions < 1:
            raise RunError("need at least one session")
        if (self.feature_file is None) == (self.synthetic is None):
            raise RunError("configure exactly one of feature_file or synthetic")


# ---------------------------------------------------------------------------
# Ontology splitting and ordering
# ---------------------------------------------------------------------------


def split_ontology_greedy(class_counts: dict[str, int], num_sessions: int) -> SessionPlan:
    """Balance train-instance totals across sessions.

    Classes are taken in descending count order (ties by identifier) and
    each goes to the session with the smallest running total (ties to the
    lowest session index).
    """
    if num_sessions < 1:
        raise RunError("num_sessions must be >= 1")
    if num_sessions > len(class_counts):
        raise RunError(
            f"cannot split {len(class_counts)} classes into {num_sessions} sessions"
        )
    order = sorted(class_counts, key=lambda c: (-class_counts[c], c))
    totals = [0] * num_sessions
    members: list[list[str]] = [[] for _ in range(num_sessions)]
    for cls in order:
        k = min(range(num_sessions), key=lambda i: totals[i])
        members[k].append(cls)
        totals[k] += class_counts[cls]
    return SessionPlan(tuple(tuple(sorted(m)) for m in members))


def permute_plan(plan: SessionPlan, seed) -> SessionPlan:
    """Reorder sessions by a seeded uniform permutation; membership unchanged."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(plan.num_sessions)
    return SessionPlan(tuple(plan.sessions[i] for i in order))


# ---------------------------------------------------------------------------
# Report containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    permutation: int
    metrics: SessionMetrics


@dataclass(frozen=True)
class TraceRow:
    permutation: int
    session: int
    series: str
    value: float


@dataclass
class RunReport:
    strategy_kind: str
    task_mode: str
    master_seed: int
    config_digest: str
    session_orders: list[list[list[str]]] = field(default_factory=list)
    rows: list[MetricsRow] = field(default_factory=list)
    traces: list[TraceRow] = field(default_factory=list)
    averaged: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def final_micro_mean(self) -> float:
        last = max(r.metrics.session for r in self.rows)
        vals = [r.metrics.micro for r in self.rows if r.metrics.session == last]
        return sum(vals) / len(vals)

    def to_json(self) -> str:
        payload = {
            "strategy": self.strategy_kind,
            "task_mode": self.task_mode,
            "master_seed": self.master_seed,
            "config_digest": self.config_digest,
            "session_orders": self.session_orders,
            "rows": [
                {
                    "permutation": r.permutation,
                    "session": r.metrics.session,
                    "micro": r.metrics.micro,
                    "macro": r.metrics.macro,
                    "new": r.metrics.new,
                    "acc_old": r.metrics.acc_old,
                    "prev_old": r.metrics.prev_old,
                }
                for r in self.rows
            ],
            "traces": [
                {
                    "permutation": t.permutation,
                    "session": t.session,
                    "series": t.series,
                    "value": t.value,
                }
                for t in self.traces
            ],
            "averaged": self.averaged,
            "warnings": self.warnings,
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def _average_rows(rows: list[MetricsRow], num_sessions: int) -> list[dict]:
    out = []
    for t in range(1, num_sessions + 1):
        per = [r.metrics for r in rows if r.metrics.session == t]
        if not per:
            continue

        def mean_of(attr):
            vals = [getattr(m, attr) for m in per if getattr(m, attr) is not None]
            return sum(vals) / len(vals) if vals else None

        out.append(
            {
                "session": t,
                "micro": mean_of("micro"),
                "macro": mean_of("macro"),
                "new": mean_of("new"),
                "acc_old": mean_of("acc_old"),
                "prev_old": mean_of("prev_old"),
            }
        )
    return out


# ---------------------------------------------------------------------------
# Checkpoint state
# ---------------------------------------------------------------------------


class _RunState:
    """Mutable progress record persisted after every session for --resume."""

    def __init__(self, digest: str):
        self.digest = digest
        self.completed: dict[int, int] = {}
        self.rows: list[MetricsRow] = []
        self.traces: list[TraceRow] = []
        self.memory: dict[int, dict[str, list[str]]] = {}
        self.warnings: list[str] = []

    def to_json(self) -> str:
        return json.dumps(
            {
                "digest": self.digest,
                "completed": {str(k): v for k, v in self.completed.items()},
                "rows": [
                    {
                        "permutation": r.permutation,
                        "session": r.metrics.session,
                        "micro": r.metrics.micro,
                        "macro": r.metrics.macro,
                        "new": r.metrics.new,
                        "acc_old": r.metrics.acc_old,
                        "prev_old": r.metrics.prev_old,
                    }
                    for r in self.rows
                ],
                "traces": [
                    {"permutation": t.permutation, "session": t.session, "series": t.series, "value": t.value}
                    for t in self.traces
                ],
                "memory": {str(k): v for k, v in self.memory.items()},
                "warnings": self.warnings,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, raw: str) -> "_RunState":
        data = json.loads(raw)
        state = cls(data["digest"])
        state.completed = {int(k): v for k, v in data["completed"].items()}
        state.rows = [
            MetricsRow(
                r["permutation"],
                SessionMetrics(r["session"], r["micro"], r["macro"], r["new"], r["acc_old"], r["prev_old"]),
            )
            for r in data["rows"]
        ]
        state.traces = [
            TraceRow(t["permutation"], t["session"], t["series"], t["value"]) for t in data["traces"]
        ]
        state.memory = {int(k): {c: list(ids) for c, ids in v.items()} for k, v in data["memory"].items()}
        state.warnings = list(data["warnings"])
        return state


def _ckpt_path(out: Path, perm: int, session: int) -> Path:
    return out / "checkpoints" / f"perm{perm:02d}_s{session:02d}.ckpt"


def _save_state(out: Path, state: _RunState) -> None:
    tmp = out / "state.json.tmp"
    tmp.write_text(state.to_json())
    tmp.replace(out / "state.json")


# ---------------------------------------------------------------------------
# The experiment loop
# ---------------------------------------------------------------------------


def _load_dataset(cfg: ExperimentConfig) -> tuple[FeatureStore, Ontology]:
    if cfg.feature_file is not None:
        return data_io.load_features(cfg.feature_file)
    return data_io.generate_synthetic(cfg.synthetic)


def _session_seed(master: int, perm: int, session: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(perm, session))


def run_experiment(cfg: ExperimentConfig, resume: bool = False) -> RunReport:
    """Train/evaluate every (permutation, session) pair and assemble the report.

    With ``resume`` and an ``out_dir`` holding earlier state, completed
    sessions are skipped and training restarts mid-permutation from the last
    checkpoint; results are identical to an uninterrupted run.
    """
    store, ontology = _load_dataset(cfg)
    mode = ontology.task_mode
    cfg.strategy.check_mode(mode)
    if cfg.num_sessions > len(ontology.classes):
        raise RunError(
            f"{cfg.num_sessions} sessions exceed {len(ontology.classes)} classes"
        )

    plan = split_ontology_greedy(store.class_counts, cfg.num_sessions)
    plan.validate_against(ontology)
    digest = data_io.config_digest(cfg)

    out = Path(cfg.out_dir) if cfg.out_dir else None
    state = _RunState(digest)
    if resume:
        if out is None:
            raise RunError("--resume needs an output directory")
        state_path = out / "state.json"
        if state_path.exists():
            state = _RunState.from_json(state_path.read_text())
            if state.digest != digest:
                raise RunError("resume state belongs to a different configuration")
            log.info("resuming: %s", {p: s for p, s in sorted(state.completed.items())})
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    use_other = cfg.strategy.uses_other(mode)
    report = RunReport(
        strategy_kind=cfg.strategy.kind,
        task_mode=mode,
        master_seed=cfg.master_seed,
        config_digest=digest,
    )

    for perm in range(cfg.permutations):
        permuted = permute_plan(plan, _session_seed(cfg.master_seed, perm, 0))
        report.session_orders.append([list(s) for s in permuted.sessions])
        probe = make_probe(store, permuted)
        trace = LogitTrace()

        done = state.completed.get(perm, 0)
        if done:
            ensemble, _ = deserialize_ensemble(_ckpt_path(out, perm, done).read_bytes())
            for row in state.traces:
                if row.permutation == perm and row.series == "gold":
                    ncp = next(
                        (t.value for t in state.traces
                         if t.permutation == perm and t.session == row.session and t.series == "ncp"),
                        None,
                    )
                    trace.append(row.session, row.value, ncp)
        else:
            ensemble = EnsembleClassifier()

        memory = None
        if cfg.strategy.kind == "er":
            memory = ReplayMemory(cfg.strategy.exemplars_per_class)
            if perm in state.memory:
                memory.exemplars = {c: tuple(v) for c, v in state.memory[perm].items()}

        for t in range(done + 1, cfg.num_sessions + 1):
            seed = _session_seed(cfg.master_seed, perm, t)
            cap_rng = np.random.default_rng(_session_seed(cfg.master_seed, perm, t).spawn(1)[0])
            try:
                view = relabel_for_session(
                    store, permuted, t, mode,
                    use_other=use_other,
                    negative_cap=cfg.negative_cap,
                    rng=cap_rng,
                )
                ensemble, tlog = train_session(cfg.strategy, view, ensemble, seed, mode, memory)
                metrics = evaluate_session(ensemble, store, permuted, t, mode)
            except Exception as e:
                raise RunError(f"permutation {perm}, session {t}: {e}") from e

            gold_mean, ncp_mean = track(ensemble, probe)
            trace.append(t, gold_mean, ncp_mean)
            state.rows.append(MetricsRow(perm, metrics))
            state.traces.append(TraceRow(perm, t, "gold", gold_mean))
            if ncp_mean is not None:
                state.traces.append(TraceRow(perm, t, "ncp", ncp_mean))
            if tlog.fixed_epoch_fallback:
                state.warnings.append(f"perm {perm} session {t}: empty dev view, fixed-epoch training")
            if memory is not None:
                memory.update_from_view(view)
                state.memory[perm] = {c: list(v) for c, v in memory.exemplars.items()}
            state.completed[perm] = t
            log.info(
                "perm %d session %d: micro=%.4f epochs=%d%s",
                perm, t, metrics.micro, tlog.epochs_run,
                " (early stop)" if tlog.early_stopped else "",
            )
            if out is not None:
                _ckpt_path(out, perm, t).write_bytes(serialize_ensemble(ensemble, cfg.strategy.kind))
                _save_state(out, state)

    state.rows.sort(key=lambda r: (r.permutation, r.metrics.session))
    state.traces.sort(key=lambda t: (t.permutation, t.session, t.series))
    report.rows = state.rows
    report.traces = state.traces
    report.warnings = state.warnings
    report.averaged = _average_rows(report.rows, cfg.num_sessions)
    if out is not None:
        data_io.write_report(report, out)
    return report
