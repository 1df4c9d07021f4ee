"""Scoring: micro/macro F1 over positive classes and session metric rows.

OTHER is the negative background class. It never earns true positives; a
correct OTHER prediction simply leaves the counts untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OTHER, FeatureStore, SessionPlan


class EvaluationError(ValueError):
    pass


class ConfusionAccumulator:
    """Per-class TP/FP/FN counts from (gold, predicted) label pairs."""

    def __init__(self):
        self.tp: dict[str, int] = {}
        self.fp: dict[str, int] = {}
        self.fn: dict[str, int] = {}

    def add(self, gold: str, predicted: str) -> None:
        if gold == predicted:
            if gold != OTHER:
                self.tp[gold] = self.tp.get(gold, 0) + 1
            return
        if predicted != OTHER:
            self.fp[predicted] = self.fp.get(predicted, 0) + 1
        if gold != OTHER:
            self.fn[gold] = self.fn.get(gold, 0) + 1

    def add_many(self, gold_labels, predicted_labels) -> None:
        for g, p in zip(gold_labels, predicted_labels, strict=True):
            self.add(g, p)

    def seen_classes(self) -> set[str]:
        """Classes appearing in gold or predictions (OTHER excluded)."""
        return set(self.tp) | set(self.fp) | set(self.fn)

    def class_f1(self, cls: str) -> float:
        tp = self.tp.get(cls, 0)
        if tp == 0:
            return 0.0
        precision = tp / (tp + self.fp.get(cls, 0))
        recall = tp / (tp + self.fn.get(cls, 0))
        return 2.0 * precision * recall / (precision + recall)


def micro_f1(acc: ConfusionAccumulator) -> float:
    """Pooled F1 over positive classes: P+R from summed TP/FP/FN."""
    tp = sum(acc.tp.values())
    fp = sum(acc.fp.values())
    fn = sum(acc.fn.values())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(acc: ConfusionAccumulator, subset) -> float:
    """Unweighted mean of per-class F1 over ``subset``.

    A class the accumulator never saw contributes 0; callers decide whether
    such classes belong in the subset at all.
    """
    subset = list(subset)
    if not subset:
        raise EvaluationError("macro_f1 over an empty class subset")
    return sum(acc.class_f1(c) for c in subset) / len(subset)


@dataclass(frozen=True)
class SessionMetrics:
    """Headline and decomposed scores after learning session t."""

    session: int
    micro: float
    macro: float
    new: float | None
    acc_old: float | None
    prev_old: float | None


def _pruned_macro(acc: ConfusionAccumulator, classes) -> float | None:
    """Macro over the classes actually present in this evaluation."""
    seen = acc.seen_classes()
    subset = [c for c in classes if c in seen]
    if not subset:
        return None
    return macro_f1(acc, subset)


def evaluate_session(ensemble, store: FeatureStore, plan: SessionPlan, t: int, mode: str) -> SessionMetrics:
    """Score the ensemble after session t over the protocol's test slice.

    Classification mode scores test instances of the learned classes
    C_{1:t}; detection mode scores the entire test split with unlearned
    classes' gold relabeled OTHER.
    """
    from .strategies import predict_labels  # cycle guard

    if not 1 <= t <= plan.num_sessions:
        raise EvaluationError(f"session {t} outside plan of {plan.num_sessions}")
    learned = [c for sess in plan.sessions[:t] for c in sess]
    if set(learned) != set(ensemble.all_classes()):
        raise EvaluationError("ensemble blocks do not match sessions 1..t of the plan")

    test_idx = store.indices("test")
    codes = store.label_codes[test_idx]
    learned_codes = np.array([store.classes.index(c) for c in learned], dtype=np.int32)
    in_learned = np.isin(codes, learned_codes)

    if mode == "classification":
        test_idx = test_idx[in_learned]
        gold = [store.classes[c] for c in codes[in_learned]]
    else:
        gold = [store.classes[c] if ok else OTHER for c, ok in zip(codes, in_learned)]

    predicted = predict_labels(ensemble, store.features[test_idx], mode)
    acc = ConfusionAccumulator()
    acc.add_many(gold, predicted)

    new_classes = plan.sessions[t - 1]
    metrics = SessionMetrics(
        session=t,
        micro=micro_f1(acc),
        macro=_pruned_macro(acc, learned) or 0.0,
        new=_pruned_macro(acc, new_classes),
        acc_old=_pruned_macro(acc, learned[: len(learned) - len(new_classes)]) if t > 1 else None,
        prev_old=_pruned_macro(acc, plan.sessions[t - 2]) if t > 1 else None,
    )
    return metrics
