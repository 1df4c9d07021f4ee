"""File boundary of the engine: feature files, configs, synthetic data, reports.

The feature-file format is the contract with whatever produced the frozen
vectors. Binary, little-endian:

    magic   5 bytes  b"CILF1"
    mode    u8       0 = detection, 1 = classification
    dim     u32      feature width h
    nclass  u32      ontology size, then per class: u16 name length + utf-8
    ninst   u32      instance count, then per instance:
                       u16 id length + utf-8 id
                       u8  split (0 train, 1 dev, 2 test)
                       i32 gold label index, -1 = OTHER
                       h * f32 feature values

Features are 32-bit on disk and widened to float64 in memory; the store
narrows back through float32 at construction, so load/write round-trips are
bitwise.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .core import SPLITS, TASK_MODES, FeatureStore, Ontology

if TYPE_CHECKING:
    from .runner import ExperimentConfig, RunReport

MAGIC = b"CILF1"
_MODE_CODE = {"detection": 0, "classification": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


class FeatureFileError(ValueError):
    """Malformed or truncated feature file."""


def write_features(store: FeatureStore, ontology: Ontology, path: str | Path) -> None:
    if tuple(store.classes) != tuple(ontology.classes):
        raise FeatureFileError("store and ontology class listings disagree")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", _MODE_CODE[ontology.task_mode]))
    buf.write(struct.pack("<I", store.dim))
    buf.write(struct.pack("<I", len(ontology.classes)))
    for name in ontology.classes:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    buf.write(struct.pack("<I", len(store)))
    feats32 = store.features.astype("<f4")
    for i in range(len(store)):
        raw = store.ids[i].encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", int(store.split_codes[i])))
        buf.write(struct.pack("<i", int(store.label_codes[i])))
        buf.write(feats32[i].tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_features(path: str | Path) -> tuple[FeatureStore, Ontology]:
    """Read and validate a feature file; any malformed record aborts the load."""
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)
    where = "header"

    def take(n: int) -> bytes:
        raw = buf.read(n)
        if len(raw) != n:
            raise FeatureFileError(f"truncated file while reading {where}")
        return raw

    if take(len(MAGIC)) != MAGIC:
        raise FeatureFileError("bad magic: not a CILF1 feature file")
    (mode_code,) = struct.unpack("<B", take(1))
    if mode_code not in _MODE_NAME:
        raise FeatureFileError(f"unknown task mode code {mode_code}")
    (dim,) = struct.unpack("<I", take(4))
    (n_classes,) = struct.unpack("<I", take(4))
    classes = []
    for _ in range(n_classes):
        (ln,) = struct.unpack("<H", take(2))
        classes.append(take(ln).decode("utf-8"))
    ontology = Ontology(tuple(classes), _MODE_NAME[mode_code])
    (n_inst,) = struct.unpack("<I", take(4))

    ids = []
    feats = np.empty((n_inst, dim), dtype=np.float32)
    labels = np.empty(n_inst, dtype=np.int32)
    splits = np.empty(n_inst, dtype=np.uint8)
    for i in range(n_inst):
        where = f"record {i}"
        (ln,) = struct.unpack("<H", take(2))
        ids.append(take(ln).decode("utf-8"))
        (split_code,) = struct.unpack("<B", take(1))
        if split_code >= len(SPLITS):
            raise FeatureFileError(f"record {i}: split code {split_code} out of range")
        (label,) = struct.unpack("<i", take(4))
        if label < -1 or label >= n_classes:
            raise FeatureFileError(f"record {i}: label index {label} out of ontology range")
        vec = np.frombuffer(take(dim * 4), dtype="<f4")
        if not np.all(np.isfinite(vec)):
            raise FeatureFileError(f"record {i}: non-finite feature values")
        feats[i] = vec
        labels[i] = label
        splits[i] = split_code
    if buf.read(1):
        raise FeatureFileError("trailing bytes after declared instance count")

    store = FeatureStore(dim, ids, feats.astype(np.float64), labels, splits, tuple(classes))
    return store, ontology


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian cluster benchmark generator settings.

    Every feature vector lives in a cone around one seeded common direction
    (``anisotropy`` scales it), the way frozen transformer features share a
    dominant mean direction. Each class adds its own seeded random offset
    (scaled by ``mean_scale``) plus isotropic noise (``cov_scale``).
    Negatives come from one broad background cluster inside the same cone;
    anchoring the background off the origin keeps every fixed OTHER logit
    value satisfiable by a bias-free linear layer.
    """

    num_classes: int
    train_per_class: int
    dev_per_class: int
    test_per_class: int
    dim: int = 16
    mean_scale: float = 10.0
    cov_scale: float = 1.0
    task_mode: str = "classification"
    negatives_train: int = 0
    negatives_dev: int = 0
    negatives_test: int = 0
    background_spread: float = 3.0
    anisotropy: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("train and test counts must be >= 1")
        if self.dev_per_class < 0 or min(self.negatives_train, self.negatives_dev, self.negatives_test) < 0:
            raise ValueError("counts cannot be negative")
        if self.dim < 2:
            raise ValueError("feature dim must be >= 2")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"unknown task_mode {self.task_mode!r}")


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureStore, Ontology]:
    """Deterministic store from a spec; same seed gives bitwise-equal stores."""
    rng = np.random.default_rng(spec.seed)
    width = max(2, len(str(max(spec.num_classes - 1, 1))))
    classes = tuple(f"c{i:0{width}d}" for i in range(spec.num_classes))
    cone = rng.normal(0.0, spec.mean_scale * spec.anisotropy, size=spec.dim)
    means = cone + rng.normal(0.0, spec.mean_scale, size=(spec.num_classes, spec.dim))
    # The background sits at the cone direction itself: a generic none-of-
    # the-above region, which also pins down the shared-direction component
    # of any classifier row trained against it.
    bg_mean = cone

    ids: list[str] = []
    rows: list[np.ndarray] = []
    labels: list[int] = []
    splits: list[int] = []

    per_split = (("train", spec.train_per_class), ("dev", spec.dev_per_class), ("test", spec.test_per_class))
    for c in range(spec.num_classes):
        for s, (split, count) in enumerate(per_split):
            pts = means[c] + rng.normal(0.0, spec.cov_scale, size=(count, spec.dim))
            for j in range(count):
                ids.append(f"{classes[c]}-{split}-{j:04d}")
                rows.append(pts[j])
                labels.append(c)
                splits.append(s)

    neg_counts = (spec.negatives_train, spec.negatives_dev, spec.negatives_test)
    for s, (split, count) in enumerate(zip(("train", "dev", "test"), neg_counts)):
        pts = bg_mean + rng.normal(0.0, spec.background_spread, size=(count, spec.dim))
        for j in range(count):
            ids.append(f"neg-{split}-{j:05d}")
            rows.append(pts[j])
            labels.append(-1)
            splits.append(s)

    store = FeatureStore(
        spec.dim,
        ids,
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.int32),
        np.array(splits, dtype=np.uint8),
        classes,
    )
    return store, Ontology(classes, spec.task_mode)


def standard_strategy(kind: str, delta: float = 0.0):
    """Benchmark-tuned strategy settings.

    Microbatch 1 (with the usual 8-step accumulation) keeps the optimizer
    step count per epoch high enough at desk scale for the logit dynamics to
    reach their saturation regime within the 15-epoch budget.
    """
    from .strategies import StrategyConfig

    return StrategyConfig(kind=kind, delta=delta, microbatch_size=1)


def standard_benchmark(task_mode: str = "classification", seed: int = 7) -> SyntheticSpec:
    """The fixed desk-scale benchmark: 5 sessions x 4 classes, h=16.

    Anisotropy and the negative-candidate counts are pinned here so the
    drift signatures (collective-baseline collapse, new-block logit takeover,
    strategy ordering) reproduce deterministically at this scale.
    """
    return SyntheticSpec(
        num_classes=20,
        train_per_class=200,
        dev_per_class=50,
        test_per_class=100,
        dim=16,
        mean_scale=10.0,
        cov_scale=1.0,
        task_mode=task_mode,
        negatives_train=200,
        negatives_dev=50,
        negatives_test=100,
        anisotropy=2.5,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


class ConfigError(ValueError):
    pass


_REQUIRED = object()


def _get(section, key, conv, default=_REQUIRED):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing key {key!r} in [{section.name}]")
        return default
    try:
        return conv(section[key])
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r} in [{section.name}]: {e}") from None


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_config(path: str | Path) -> "ExperimentConfig":
    """Read a sectioned key=value experiment config into an ExperimentConfig."""
    from .runner import ExperimentConfig
    from .strategies import StrategyConfig

    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for required in ("strategy", "dataset", "run"):
        if required not in parser:
            raise ConfigError(f"config is missing the [{required}] section")

    strat_sec = parser["strategy"]
    opt_sec = parser["optimizer"] if "optimizer" in parser else parser["strategy"]
    strategy = StrategyConfig(
        kind=_get(strat_sec, "kind", str),
        delta=_get(strat_sec, "delta", float, 0.0),
        exemplars_per_class=_get(strat_sec, "exemplars_per_class", int, 20),
        replayed_per_batch=_get(strat_sec, "replayed_per_batch", int, 1),
        lr=_get(opt_sec, "lr", float, None),
        beta1=_get(opt_sec, "beta1", float, 0.9),
        beta2=_get(opt_sec, "beta2", float, 0.999),
        eps=_get(opt_sec, "eps", float, 1e-8),
        weight_decay=_get(opt_sec, "weight_decay", float, 1e-2),
        microbatch_size=_get(opt_sec, "microbatch_size", int, 32),
        accum_steps=_get(opt_sec, "accum_steps", int, 8),
        max_epochs=_get(opt_sec, "max_epochs", int, 15),
        patience=_get(opt_sec, "patience", int, 3),
    )

    data_sec = parser["dataset"]
    feature_file = data_sec.get("file")
    synthetic = None
    if _get(data_sec, "synthetic", _bool, False):
        synthetic = SyntheticSpec(
            num_classes=_get(data_sec, "classes", int),
            train_per_class=_get(data_sec, "train_per_class", int),
            dev_per_class=_get(data_sec, "dev_per_class", int, 0),
            test_per_class=_get(data_sec, "test_per_class", int),
            dim=_get(data_sec, "dim", int, 16),
            mean_scale=_get(data_sec, "mean_scale", float, 10.0),
            cov_scale=_get(data_sec, "cov_scale", float, 1.0),
            task_mode=_get(data_sec, "mode", str, "classification"),
            negatives_train=_get(data_sec, "negatives_train", int, 0),
            negatives_dev=_get(data_sec, "negatives_dev", int, 0),
            negatives_test=_get(data_sec, "negatives_test", int, 0),
            background_spread=_get(data_sec, "background_spread", float, 3.0),
            anisotropy=_get(data_sec, "anisotropy", float, 1.0),
            seed=_get(data_sec, "data_seed", int, 0),
        )
    if (feature_file is None) == (synthetic is None):
        raise ConfigError("dataset must give exactly one of file= or synthetic=true")

    run_sec = parser["run"]
    cap = _get(run_sec, "negative_cap", int, 0)
    return ExperimentConfig(
        strategy=strategy,
        num_sessions=_get(run_sec, "sessions", int),
        permutations=_get(run_sec, "permutations", int, 5),
        master_seed=_get(run_sec, "seed", int, 0),
        feature_file=feature_file,
        synthetic=synthetic,
        out_dir=run_sec.get("output"),
        negative_cap=cap or None,
    )


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def config_digest(cfg: "ExperimentConfig") -> str:
    """Hash of the result-determining configuration fields."""
    from dataclasses import asdict

    payload = asdict(cfg)
    payload.pop("out_dir", None)
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _fmt(x) -> str:
    return "-" if x is None else repr(float(x))


def write_report(report: "RunReport", out_dir: str | Path) -> dict[str, Path]:
    """Emit metrics, summary, traces, manifest, and the full report JSON.

    All outputs are pure functions of the report, so identical reports give
    byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.tsv",
        "summary": out / "summary.tsv",
        "traces": out / "traces.tsv",
        "manifest": out / "manifest.json",
        "report": out / "report.json",
    }

    lines = ["strategy\tpermutation\tsession\tmicro_f1\tmacro_f1\tnew_f1\tacc_old_f1\tprev_old_f1"]
    for row in report.rows:
        lines.append(
            "\t".join(
                [
                    report.strategy_kind,
                    str(row.permutation),
                    str(row.metrics.session),
                    _fmt(row.metrics.micro),
                    _fmt(row.metrics.macro),
                    _fmt(row.metrics.new),
                    _fmt(row.metrics.acc_old),
                    _fmt(row.metrics.prev_old),
                ]
            )
        )
    paths["metrics"].write_text("\n".join(lines) + "\n")

    lines = ["strategy\tsession\tmicro_f1\tmacro_f1\tnew_f1\tacc_old_f1\tprev_old_f1"]
    for row in report.averaged:
        lines.append(
            "\t".join(
                [
                    report.strategy_kind,
                    str(row["session"]),
                    _fmt(row["micro"]),
                    _fmt(row["macro"]),
                    _fmt(row["new"]),
                    _fmt(row["acc_old"]),
                    _fmt(row["prev_old"]),
                ]
            )
        )
    paths["summary"].write_text("\n".join(lines) + "\n")

    lines = ["strategy\tpermutation\tsession\tseries\tmean_logit"]
    for tr in report.traces:
        lines.append(
            f"{report.strategy_kind}\t{tr.permutation}\t{tr.session}\t{tr.series}\t{_fmt(tr.value)}"
        )
    paths["traces"].write_text("\n".join(lines) + "\n")

    manifest = {
        "format": 1,
        "config_digest": report.config_digest,
        "strategy": report.strategy_kind,
        "task_mode": report.task_mode,
        "master_seed": report.master_seed,
        "seed_scheme": "SeedSequence(master, spawn_key=(permutation, session))",
        "session_orders": report.session_orders,
    }
    paths["manifest"].write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    paths["report"].write_text(report.to_json() + "\n")
    return paths
