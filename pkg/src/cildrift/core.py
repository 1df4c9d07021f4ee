"""Domain model: instances, frozen feature store, ontology, session plans and views.

The feature store stands in for a frozen feature extractor: once built, every
read of an instance's vector returns byte-identical data. All downstream
training and evaluation operates on views into a single shared store.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Reserved none-of-the-above label. Never a member of an ontology; encoded as
# label code -1 everywhere.
OTHER = "Other"

SPLITS = ("train", "dev", "test")
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}

TASK_MODES = ("detection", "classification")


class DataModelError(ValueError):
    """Inconsistent store/ontology/plan construction or lookup."""


@dataclass(frozen=True)
class Instance:
    """One pre-featurized candidate (mention, token span, or entity pair)."""

    id: str
    feature: np.ndarray
    gold_label: str
    split: str


@dataclass(frozen=True)
class Ontology:
    """Ordered inventory of positive classes plus the task setting."""

    classes: tuple[str, ...]
    task_mode: str

    def __post_init__(self):
        if self.task_mode not in TASK_MODES:
            raise DataModelError(f"unknown task_mode {self.task_mode!r}")
        if len(set(self.classes)) != len(self.classes):
            raise DataModelError("duplicate class identifiers in ontology")
        if OTHER in self.classes:
            raise DataModelError(f"{OTHER!r} is reserved and cannot be an ontology class")

    def index_of(self, label: str) -> int:
        return self.classes.index(label)


class FeatureStore:
    """Immutable bank of frozen per-instance feature vectors.

    Features are held as one (n, dim) float64 matrix marked read-only. Values
    are narrowed through float32 at construction so that the on-disk format
    (32-bit floats) round-trips bitwise. Labels are stored as integer codes
    into ``classes``; code -1 means OTHER.
    """

    def __init__(
        self,
        dim: int,
        ids: list[str] | tuple[str, ...],
        features: np.ndarray,
        label_codes: np.ndarray,
        split_codes: np.ndarray,
        classes: tuple[str, ...],
    ):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != dim:
            raise DataModelError(
                f"feature matrix shape {features.shape} does not match dim={dim}"
            )
        n = features.shape[0]
        if len(ids) != n:
            raise DataModelError("ids/features length mismatch")
        label_codes = np.asarray(label_codes, dtype=np.int32)
        split_codes = np.asarray(split_codes, dtype=np.uint8)
        if label_codes.shape != (n,) or split_codes.shape != (n,):
            raise DataModelError("label/split arrays must be 1-d of length n")
        if not np.all(np.isfinite(features)):
            bad = int(np.argwhere(~np.isfinite(features).all(axis=1))[0][0])
            raise DataModelError(f"non-finite feature values at record {bad}")
        if label_codes.size and (label_codes.max(initial=-1) >= len(classes) or label_codes.min(initial=0) < -1):
            raise DataModelError("label code out of ontology range")
        if split_codes.size and split_codes.max(initial=0) >= len(SPLITS):
            raise DataModelError("split code out of range")

        # Narrow to the on-disk width, then freeze.
        features = features.astype(np.float32).astype(np.float64)
        features.setflags(write=False)
        label_codes.setflags(write=False)
        split_codes.setflags(write=False)

        self.dim = int(dim)
        self.ids = tuple(ids)
        self.features = features
        self.label_codes = label_codes
        self.split_codes = split_codes
        self.classes = tuple(classes)
        self._id_index = {iid: i for i, iid in enumerate(self.ids)}
        if len(self._id_index) != n:
            raise DataModelError("duplicate instance ids")

    def __len__(self) -> int:
        return len(self.ids)

    def gold_label(self, i: int) -> str:
        code = int(self.label_codes[i])
        return OTHER if code < 0 else self.classes[code]

    def split(self, i: int) -> str:
        return SPLITS[int(self.split_codes[i])]

    def instance(self, i: int) -> Instance:
        return Instance(self.ids[i], self.features[i], self.gold_label(i), self.split(i))

    def index_of_id(self, instance_id: str) -> int:
        try:
            return self._id_index[instance_id]
        except KeyError:
            raise DataModelError(f"unknown instance id {instance_id!r}") from None

    def indices(self, split: str) -> np.ndarray:
        if split not in _SPLIT_CODE:
            raise DataModelError(f"unknown split {split!r}")
        return np.flatnonzero(self.split_codes == _SPLIT_CODE[split])

    @property
    def class_counts(self) -> dict[str, int]:
        """Number of train instances per positive class."""
        train = self.label_codes[self.split_codes == _SPLIT_CODE["train"]]
        counts = {c: 0 for c in self.classes}
        codes, freq = np.unique(train[train >= 0], return_counts=True)
        for code, f in zip(codes, freq):
            counts[self.classes[int(code)]] = int(f)
        return counts


@dataclass(frozen=True)
class SessionPlan:
    """Ordered partition of the ontology into disjoint class sets C_1..C_T."""

    sessions: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        seen: set[str] = set()
        for k, sess in enumerate(self.sessions, start=1):
            overlap = seen.intersection(sess)
            if overlap:
                raise DataModelError(f"session {k} overlaps earlier sessions: {sorted(overlap)}")
            if len(set(sess)) != len(sess):
                raise DataModelError(f"session {k} repeats a class")
            seen.update(sess)

    @property
    def num_sessions(self) -> int:
        return len(self.sessions)

    def all_classes(self) -> set[str]:
        return {c for sess in self.sessions for c in sess}

    def validate_against(self, ontology: Ontology) -> None:
        if self.all_classes() != set(ontology.classes):
            raise DataModelError("session plan does not cover exactly the ontology classes")


@dataclass(frozen=True)
class SessionView:
    """Train/dev slices of the store as seen while learning session k.

    Holds index arrays plus relabeled gold codes; feature data stays in the
    store. Relabeling is lossless: the original label is recoverable from the
    store by index or id.
    """

    session_index: int
    positive_classes: tuple[str, ...]
    store: FeatureStore = field(repr=False)
    train_indices: np.ndarray = field(repr=False)
    train_codes: np.ndarray = field(repr=False)
    dev_indices: np.ndarray = field(repr=False)
    dev_codes: np.ndarray = field(repr=False)

    @property
    def n_train(self) -> int:
        return int(self.train_indices.size)

    @property
    def n_dev(self) -> int:
        return int(self.dev_indices.size)

    def train_features(self) -> np.ndarray:
        return self.store.features[self.train_indices]

    def dev_features(self) -> np.ndarray:
        return self.store.features[self.dev_indices]


def _view_split(
    store: FeatureStore,
    split: str,
    class_codes: np.ndarray,
    mode: str,
    use_other: bool,
    negative_cap: int | None,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    idx = store.indices(split)
    codes = store.label_codes[idx]
    in_session = np.isin(codes, class_codes)
    if mode == "detection":
        # Everything stays in the view; anything outside C_k becomes OTHER.
        kept = idx
        relabeled = np.where(in_session, codes, np.int32(-1))
    elif use_other:
        # Session positives keep labels; unlabeled candidates are the negatives.
        keep_mask = in_session | (codes < 0)
        kept = idx[keep_mask]
        relabeled = codes[keep_mask]
        if negative_cap is not None:
            neg_pos = np.flatnonzero(relabeled < 0)
            if neg_pos.size > negative_cap:
                if rng is None:
                    raise DataModelError("negative_cap requires an rng for deterministic sampling")
                drop = rng.choice(neg_pos, size=neg_pos.size - negative_cap, replace=False)
                keep = np.ones(kept.size, dtype=bool)
                keep[np.sort(drop)] = False
                kept = kept[keep]
                relabeled = relabeled[keep]
    else:
        kept = idx[in_session]
        relabeled = codes[in_session]
    relabeled = relabeled.astype(np.int32)
    relabeled.setflags(write=False)
    kept.setflags(write=False)
    return kept, relabeled


def relabel_for_session(
    store: FeatureStore,
    plan: SessionPlan,
    k: int,
    mode: str,
    use_other: bool = False,
    negative_cap: int | None = None,
    rng: np.random.Generator | None = None,
) -> SessionView:
    """Build session k's training/dev view of the store.

    ``k`` is 1-based. In detection mode the view holds every instance of the
    split, with gold labels outside C_k masked to OTHER. In classification
    mode it holds only C_k instances, plus every OTHER-labeled negative
    candidate when ``use_other`` is set (optionally down-sampled to
    ``negative_cap`` with the supplied rng).
    """
    if mode not in TASK_MODES:
        raise DataModelError(f"unknown task_mode {mode!r}")
    if not 1 <= k <= plan.num_sessions:
        raise DataModelError(f"session index {k} outside 1..{plan.num_sessions}")
    unknown = plan.all_classes().difference(store.classes)
    if unknown:
        raise DataModelError(f"plan classes missing from store ontology: {sorted(unknown)}")

    session_classes = plan.sessions[k - 1]
    class_codes = np.array([store.classes.index(c) for c in session_classes], dtype=np.int32)

    train_idx, train_codes = _view_split(store, "train", class_codes, mode, use_other, negative_cap, rng)
    dev_idx, dev_codes = _view_split(store, "dev", class_codes, mode, use_other, negative_cap, rng)
    return SessionView(
        session_index=k,
        positive_classes=tuple(session_classes),
        store=store,
        train_indices=train_idx,
        train_codes=train_codes,
        dev_indices=dev_idx,
        dev_codes=dev_codes,
    )
