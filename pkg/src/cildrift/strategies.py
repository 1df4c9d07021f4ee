"""Training and inference strategies over an ensemble of per-session blocks.

Each strategy is defined by three choices: which weight blocks receive
gradients, which logits enter the training softmax, and how inference
combines the blocks. The ``drifted`` baseline trains the whole stack of
blocks collectively; the ``ice`` family trains only the newest block, with
optional frozen previous logits (``_pl``) and/or a constant OTHER logit slot
(``_o``). ``er`` is the drifted baseline plus exemplar replay.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import OTHER, SessionView
from .evaluation import ConfusionAccumulator, micro_f1
from .numerics import (
    AdamWState,
    SessionClassifier,
    LogitVector,
    adamw_step,
    init_weights,
    softmax_ce_batch,
)

log = logging.getLogger(__name__)

STRATEGY_KINDS = ("drifted", "ice", "ice_pl", "ice_o", "ice_pl_o", "er")
_COLLECTIVE = ("drifted", "er")

DETECTION_LR = 1e-4
CLASSIFICATION_LR = 5e-4


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    """Which variant to run and every training hyperparameter it needs."""

    kind: str
    delta: float = 0.0
    lr: float | None = None  # None: 1e-4 detection, 5e-4 classification
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    microbatch_size: int = 32
    accum_steps: int = 8
    max_epochs: int = 15
    patience: int = 3
    exemplars_per_class: int = 20
    replayed_per_batch: int = 1

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise StrategyError(f"unknown strategy kind {self.kind!r}")
        if not np.isfinite(self.delta):
            raise StrategyError("delta must be finite")
        if self.microbatch_size < 1 or self.accum_steps < 1:
            raise StrategyError("batch settings must be positive")

    def resolved_lr(self, mode: str) -> float:
        if self.lr is not None:
            return self.lr
        return DETECTION_LR if mode == "detection" else CLASSIFICATION_LR

    def check_mode(self, mode: str) -> None:
        if mode == "detection" and self.kind in ("ice", "ice_pl"):
            raise StrategyError(
                f"{self.kind} has no OTHER slot and cannot run detection tasks"
            )

    def uses_other(self, mode: str) -> bool:
        """Whether views/ensembles for this run carry the OTHER machinery."""
        return mode == "detection" or self.kind in ("ice_o", "ice_pl_o")

    def trains_all_blocks(self) -> bool:
        return self.kind in _COLLECTIVE

    def delta_in_training(self, mode: str) -> bool:
        if self.kind in ("ice_o", "ice_pl_o"):
            return True
        return self.kind in _COLLECTIVE and mode == "detection"

    def old_logits_in_training(self) -> bool:
        return self.kind in ("ice_pl", "ice_pl_o") or self.kind in _COLLECTIVE


@dataclass(frozen=True)
class EnsembleClassifier:
    """Concatenation of all per-session blocks learned so far."""

    blocks: tuple[SessionClassifier, ...] = ()
    delta: float | None = None

    def __post_init__(self):
        seen: set[str] = set()
        for b in self.blocks:
            dup = seen.intersection(b.class_order)
            if dup:
                raise StrategyError(f"duplicate classes across blocks: {sorted(dup)}")
            seen.update(b.class_order)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def all_classes(self) -> tuple[str, ...]:
        return tuple(c for b in self.blocks for c in b.class_order)


def concat_logits(blocks, features: np.ndarray) -> np.ndarray:
    """(b, h) features -> (b, sum n_k) logits across the given blocks."""
    return np.concatenate([features @ b.weights.T for b in blocks], axis=1)


def predict_labels(ensemble: EnsembleClassifier, features: np.ndarray, mode: str) -> list[str]:
    """Batched inference over the full ensemble.

    Detection returns OTHER exactly when every positive logit is strictly
    below delta; classification ignores delta and returns the positive
    argmax. Ties go to the lowest concatenation index.
    """
    if not ensemble.blocks:
        raise StrategyError("cannot predict with an empty ensemble")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    logits = concat_logits(ensemble.blocks, features)
    classes = ensemble.all_classes()
    best = np.argmax(logits, axis=1)
    out = [classes[i] for i in best]
    if mode == "detection":
        if ensemble.delta is None:
            raise StrategyError("detection inference requires a delta")
        below = logits[np.arange(len(out)), best] < ensemble.delta
        out = [OTHER if b else lbl for lbl, b in zip(out, below)]
    return out


def predict(ensemble: EnsembleClassifier, feature: np.ndarray, mode: str) -> str:
    return predict_labels(ensemble, np.asarray(feature)[None, :], mode)[0]


# ---------------------------------------------------------------------------
# Training-softmax assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _TrainingLayout:
    """How one session's training softmax is put together."""

    has_delta: bool
    delta: float
    included: tuple[int, ...]  # positions into blocks list entering the softmax
    trainable: tuple[int, ...]  # positions receiving gradients
    labels: tuple[str, ...]
    gold_index: dict[str, int]
    col_slices: dict[int, slice]  # block position -> its logit columns


def _layout(cfg: StrategyConfig, blocks, mode: str) -> _TrainingLayout:
    new_pos = len(blocks) - 1
    included = tuple(range(len(blocks))) if cfg.old_logits_in_training() else (new_pos,)
    trainable = tuple(range(len(blocks))) if cfg.trains_all_blocks() else (new_pos,)
    has_delta = cfg.delta_in_training(mode)
    labels: list[str] = [OTHER] if has_delta else []
    col_slices: dict[int, slice] = {}
    for pos in included:
        start = len(labels)
        labels.extend(blocks[pos].class_order)
        col_slices[pos] = slice(start, len(labels))
    return _TrainingLayout(
        has_delta=has_delta,
        delta=cfg.delta,
        included=included,
        trainable=trainable,
        labels=tuple(labels),
        gold_index={lbl: i for i, lbl in enumerate(labels)},
        col_slices=col_slices,
    )


def training_logits(
    cfg: StrategyConfig,
    ensemble: EnsembleClassifier,
    new_block: SessionClassifier,
    feature: np.ndarray,
    mode: str,
) -> tuple[LogitVector, dict[str, int]]:
    """Assemble the exact logit set this variant trains on for one instance.

    Returns the logits (with OTHER at slot 0 when the variant has a delta
    slot) and the label -> softmax-index mapping used to place gold labels.
    """
    blocks = list(ensemble.blocks) + [new_block]
    lay = _layout(cfg, blocks, mode)
    feature = np.asarray(feature, dtype=np.float64)
    parts = [np.array([lay.delta])] if lay.has_delta else []
    parts.extend(blocks[pos].weights @ feature for pos in lay.included)
    return LogitVector(np.concatenate(parts), lay.labels), dict(lay.gold_index)


def _batch_logits(lay: _TrainingLayout, weights: dict[int, np.ndarray], X: np.ndarray) -> np.ndarray:
    parts = [np.full((X.shape[0], 1), lay.delta)] if lay.has_delta else []
    parts.extend(X @ weights[pos].T for pos in lay.included)
    return np.concatenate(parts, axis=1)


# ---------------------------------------------------------------------------
# Replay memory
# ---------------------------------------------------------------------------


def herding_select(features: np.ndarray, capacity: int) -> list[int]:
    """Greedy mean-matching exemplar selection.

    At each step pick the not-yet-selected point that brings the running
    mean of the selected set closest (Euclidean) to the full class mean.
    Ties break to the lowest index. Returns min(capacity, n) indices in
    selection order.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise StrategyError("herding needs at least one feature vector")
    if capacity < 1:
        raise StrategyError("capacity must be >= 1")
    n = features.shape[0]
    target = features.mean(axis=0)
    chosen: list[int] = []
    running = np.zeros_like(target)
    available = np.ones(n, dtype=bool)
    for step in range(1, min(capacity, n) + 1):
        cand_means = (running + features) / step
        dist = np.linalg.norm(cand_means - target, axis=1)
        dist[~available] = np.inf
        pick = int(np.argmin(dist))  # argmin ties -> lowest index
        chosen.append(pick)
        available[pick] = False
        running = running + features[pick]
    return chosen


@dataclass
class ReplayMemory:
    """Herding-selected exemplar ids, at most ``capacity`` per class."""

    capacity: int
    exemplars: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def update_from_view(self, view: SessionView) -> None:
        store = view.store
        for cls in view.positive_classes:
            code = store.classes.index(cls)
            rows = view.train_indices[view.train_codes == code]
            if rows.size == 0:
                continue
            picks = herding_select(store.features[rows], self.capacity)
            self.exemplars[cls] = tuple(store.ids[rows[p]] for p in picks)

    def all_ids(self) -> list[str]:
        return [iid for cls in sorted(self.exemplars) for iid in self.exemplars[cls]]

    def size(self) -> int:
        return sum(len(v) for v in self.exemplars.values())


# ---------------------------------------------------------------------------
# Session training
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    """What happened while fitting one session."""

    session_index: int
    epochs_run: int = 0
    best_epoch: int = 0
    best_metric: float = float("-inf")
    dev_curve: list[float] = field(default_factory=list)
    early_stopped: bool = False
    fixed_epoch_fallback: bool = False
    skipped_other: int = 0
    optimizer_steps: int = 0


def _decode(codes: np.ndarray, classes: tuple[str, ...]) -> list[str]:
    return [OTHER if c < 0 else classes[c] for c in codes]


def _dev_micro_f1(ensemble: EnsembleClassifier, view: SessionView, mode: str) -> float:
    gold = _decode(view.dev_codes, view.store.classes)
    # Score with the delta rule whenever this run trains with an OTHER slot;
    # otherwise plain positive argmax.
    rule = "detection" if ensemble.delta is not None else "classification"
    predicted = predict_labels(ensemble, view.dev_features(), rule)
    acc = ConfusionAccumulator()
    acc.add_many(gold, predicted)
    return micro_f1(acc)


def train_session(
    cfg: StrategyConfig,
    view: SessionView,
    ensemble: EnsembleClassifier,
    seed,
    mode: str,
    memory: ReplayMemory | None = None,
) -> tuple[EnsembleClassifier, TrainLog]:
    """Fit session ``view.session_index`` and append its block to the ensemble.

    For the ice family every prior block comes back bitwise unchanged; for
    drifted/er the prior blocks are updated by gradient flow. Early stopping
    watches dev micro-F1 with the configured patience and restores the
    best-epoch weights.
    """
    cfg.check_mode(mode)
    if view.session_index != ensemble.num_blocks + 1:
        raise StrategyError(
            f"view is session {view.session_index} but ensemble holds {ensemble.num_blocks} blocks"
        )
    store = view.store
    rng = np.random.default_rng(seed)
    log_row = TrainLog(session_index=view.session_index)

    new_block = SessionClassifier(
        session_index=view.session_index,
        class_order=view.positive_classes,
        weights=init_weights(len(view.positive_classes), store.dim, rng),
    )
    blocks = list(ensemble.blocks) + [new_block]
    lay = _layout(cfg, blocks, mode)

    codes = view.train_codes
    keep = np.ones(codes.shape[0], dtype=bool)
    if not lay.has_delta:
        keep = codes >= 0
        log_row.skipped_other = int(codes.shape[0] - keep.sum())
        if log_row.skipped_other:
            log.debug(
                "session %d: dropped %d OTHER instances (no delta slot in %s)",
                view.session_index, log_row.skipped_other, cfg.kind,
            )
    train_rows = view.train_indices[keep]
    if train_rows.size == 0:
        raise StrategyError(f"session {view.session_index}: empty training view")
    X = store.features[train_rows]
    gold_labels = _decode(codes[keep], store.classes)
    try:
        gold = np.array([lay.gold_index[lbl] for lbl in gold_labels], dtype=np.int64)
    except KeyError as e:
        raise StrategyError(f"gold label {e} has no slot in the {cfg.kind} training softmax") from None

    # Mutable copies for trainable blocks; frozen blocks are referenced as-is.
    weights = {pos: blocks[pos].weights for pos in lay.included}
    opt: dict[int, AdamWState] = {}
    lr = cfg.resolved_lr(mode)
    for pos in lay.trainable:
        weights[pos] = np.array(blocks[pos].weights)
        opt[pos] = AdamWState(
            lr=lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
            weight_decay=cfg.weight_decay,
        )

    replay_rows = np.array([], dtype=np.int64)
    replay_gold = np.array([], dtype=np.int64)
    if cfg.kind == "er" and memory is not None and memory.size():
        ids = memory.all_ids()
        replay_rows = np.array([store.index_of_id(i) for i in ids], dtype=np.int64)
        replay_gold = np.array(
            [lay.gold_index[store.gold_label(int(r))] for r in replay_rows], dtype=np.int64
        )

    def current_ensemble() -> EnsembleClassifier:
        built = [
            replace(blocks[pos], weights=weights[pos]) if pos in opt else blocks[pos]
            for pos in range(len(blocks))
        ]
        return EnsembleClassifier(
            tuple(built), delta=cfg.delta if cfg.uses_other(mode) else None
        )

    have_dev = view.n_dev > 0
    if not have_dev:
        log_row.fixed_epoch_fallback = True
        log.warning("session %d: empty dev view, training for the full %d epochs",
                    view.session_index, cfg.max_epochs)

    best_weights = {pos: weights[pos].copy() for pos in opt}
    stale = 0
    n = X.shape[0]
    mb = cfg.microbatch_size
    span = mb * cfg.accum_steps  # instances per optimizer step

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, span):
            idx = order[lo:lo + span]
            # Microbatch boundaries within this accumulation window. The
            # update uses the mean of per-microbatch mean gradients, so each
            # instance is weighted by 1 / (n_microbatches * microbatch_size).
            sizes = [min(mb, idx.size - s) for s in range(0, idx.size, mb)]
            bx, bg = X[idx], gold[idx]
            if replay_rows.size:
                pick = rng.integers(0, replay_rows.size, size=len(sizes) * cfg.replayed_per_batch)
                bx = np.concatenate([bx, store.features[replay_rows[pick]]])
                bg = np.concatenate([bg, replay_gold[pick]])
                sizes = [s + cfg.replayed_per_batch for s in sizes]
                w_main = np.concatenate(
                    [np.full(s - cfg.replayed_per_batch, 1.0 / s) for s in sizes]
                )
                w_rep = np.repeat([1.0 / s for s in sizes], cfg.replayed_per_batch)
                inst_w = np.concatenate([w_main, w_rep]) / len(sizes)
            else:
                inst_w = np.concatenate([np.full(s, 1.0 / s) for s in sizes]) / len(sizes)
            logits = _batch_logits(lay, weights, bx)
            _, grad_logits = softmax_ce_batch(logits, bg)
            grad_logits *= inst_w[:, None]
            for pos in opt:
                grad = grad_logits[:, lay.col_slices[pos]].T @ bx
                weights[pos], opt[pos] = adamw_step(opt[pos], weights[pos], grad)
            log_row.optimizer_steps += 1

        log_row.epochs_run = epoch
        if have_dev:
            metric = _dev_micro_f1(current_ensemble(), view, mode)
            log_row.dev_curve.append(metric)
            if metric >= log_row.best_metric:
                # Ties keep the most recent weights; only strict gains reset
                # the patience counter.
                log_row.best_epoch = epoch
                best_weights = {pos: weights[pos].copy() for pos in opt}
            if metric > log_row.best_metric:
                log_row.best_metric = metric
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log_row.early_stopped = True
                    break

    if have_dev:
        weights.update(best_weights)
    else:
        log_row.best_epoch = log_row.epochs_run

    final_blocks = tuple(
        replace(blocks[pos], weights=weights[pos]).frozen() if pos in opt else blocks[pos]
        for pos in range(len(blocks))
    )
    out = EnsembleClassifier(final_blocks, delta=cfg.delta if cfg.uses_other(mode) else None)
    return out, log_row


# ---------------------------------------------------------------------------
# Byte-stable checkpoint format
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"CILE1"


def serialize_block(block: SessionClassifier) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<III", block.session_index, block.n_classes, block.dim))
    for name in block.class_order:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    w = np.ascontiguousarray(block.weights, dtype="<f8")
    buf.write(w.tobytes())
    return buf.getvalue()


def serialize_ensemble(ensemble: EnsembleClassifier, kind: str) -> bytes:
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    raw_kind = kind.encode("utf-8")
    buf.write(struct.pack("<B", len(raw_kind)))
    buf.write(raw_kind)
    if ensemble.delta is None:
        buf.write(struct.pack("<B", 0))
        buf.write(struct.pack("<d", 0.0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<d", float(ensemble.delta)))
    buf.write(struct.pack("<I", ensemble.num_blocks))
    for block in ensemble.blocks:
        buf.write(serialize_block(block))
    return buf.getvalue()


def deserialize_ensemble(data: bytes) -> tuple[EnsembleClassifier, str]:
    buf = io.BytesIO(data)

    def take(n: int) -> bytes:
        raw = buf.read(n)
        if len(raw) != n:
            raise StrategyError("truncated ensemble checkpoint")
        return raw

    if take(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
        raise StrategyError("bad checkpoint magic")
    (kind_len,) = struct.unpack("<B", take(1))
    kind = take(kind_len).decode("utf-8")
    (has_delta,) = struct.unpack("<B", take(1))
    (delta,) = struct.unpack("<d", take(8))
    (n_blocks,) = struct.unpack("<I", take(4))
    blocks = []
    for _ in range(n_blocks):
        session_index, n, h = struct.unpack("<III", take(12))
        names = []
        for _ in range(n):
            (ln,) = struct.unpack("<H", take(2))
            names.append(take(ln).decode("utf-8"))
        w = np.frombuffer(take(n * h * 8), dtype="<f8").reshape(n, h).copy()
        w.setflags(write=False)
        blocks.append(SessionClassifier(session_index, tuple(names), w))
    if buf.read(1):
        raise StrategyError("trailing bytes in ensemble checkpoint")
    return (
        EnsembleClassifier(tuple(blocks), delta=delta if has_delta else None),
        kind,
    )
