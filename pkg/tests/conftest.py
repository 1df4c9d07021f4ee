import numpy as np
import pytest

from cildrift.core import FeatureStore, Ontology, SessionPlan


def build_store(records, dim, classes):
    """records: list of (id, feature, label_code, split_code)."""
    ids = [r[0] for r in records]
    feats = np.array([r[1] for r in records], dtype=np.float64)
    labels = np.array([r[2] for r in records], dtype=np.int32)
    splits = np.array([r[3] for r in records], dtype=np.uint8)
    return FeatureStore(dim, ids, feats, labels, splits, classes)


@pytest.fixture
def two_class_store():
    """Classes A, B plus OTHER negatives across train/dev/test."""
    records = []
    rng = np.random.default_rng(0)
    i = 0
    for code, base in ((0, [5.0, 0.0]), (1, [0.0, 5.0]), (-1, [-5.0, -5.0])):
        for split in (0, 0, 0, 1, 2):
            records.append((f"x{i:03d}", base + rng.normal(0, 0.1, 2), code, split))
            i += 1
    return build_store(records, 2, ("A", "B"))


@pytest.fixture
def two_session_plan():
    return SessionPlan((("A",), ("B",)))


@pytest.fixture
def detection_ontology():
    return Ontology(("A", "B"), "detection")
