import dataclasses
import struct

import numpy as np
import pytest

from cildrift.core import OTHER
from cildrift.data_io import (
    ConfigError,
    FeatureFileError,
    SyntheticSpec,
    config_digest,
    generate_synthetic,
    load_features,
    parse_config,
    standard_benchmark,
    write_features,
)

from oracles import batch_perceptron_separable


SMALL = SyntheticSpec(
    num_classes=3, train_per_class=10, dev_per_class=4, test_per_class=5,
    dim=4, task_mode="detection", negatives_train=6, negatives_dev=2,
    negatives_test=3, seed=42,
)


class TestRoundTrip:
    def test_bitwise_identity(self, tmp_path):
        store, onto = generate_synthetic(SMALL)
        path = tmp_path / "f.cilf"
        write_features(store, onto, path)
        back, onto2 = load_features(path)
        assert onto2 == onto
        assert back.ids == store.ids
        assert back.features.tobytes() == store.features.tobytes()
        assert np.array_equal(back.label_codes, store.label_codes)
        assert np.array_equal(back.split_codes, store.split_codes)

    def test_write_load_write_stable(self, tmp_path):
        store, onto = generate_synthetic(SMALL)
        p1, p2 = tmp_path / "a.cilf", tmp_path / "b.cilf"
        write_features(store, onto, p1)
        back, onto2 = load_features(p1)
        write_features(back, onto2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_instances_file(self, tmp_path):
        spec = dataclasses.replace(SMALL, negatives_train=0, negatives_dev=0, negatives_test=0)
        store, onto = generate_synthetic(spec)
        # build an empty store by filtering everything out through the format
        path = tmp_path / "e.cilf"
        write_features(store, onto, path)
        raw = bytearray(path.read_bytes())
        # patch instance count to zero and drop the body
        header_end = raw.index(struct.pack("<I", len(store)), 10)
        raw = raw[: header_end] + struct.pack("<I", 0)
        path.write_bytes(bytes(raw))
        empty, _ = load_features(path)
        assert len(empty) == 0


class TestLoaderValidation:
    def write_small(self, tmp_path):
        store, onto = generate_synthetic(SMALL)
        path = tmp_path / "f.cilf"
        write_features(store, onto, path)
        return path

    def test_bad_magic(self, tmp_path):
        path = self.write_small(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[0:5] = b"WRONG"
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileError, match="magic"):
            load_features(path)

    def test_truncation_names_record(self, tmp_path):
        path = self.write_small(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FeatureFileError, match="record"):
            load_features(path)

    def test_trailing_bytes(self, tmp_path):
        path = self.write_small(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FeatureFileError, match="trailing"):
            load_features(path)

    def test_label_out_of_range(self, tmp_path):
        path = self.write_small(tmp_path)
        raw = bytearray(path.read_bytes())
        # first record: skip header, id length prefix, id, split byte
        store, onto = generate_synthetic(SMALL)
        header = 5 + 1 + 4 + 4 + sum(2 + len(c) for c in onto.classes) + 4
        idlen = struct.unpack_from("<H", raw, header)[0]
        label_at = header + 2 + idlen + 1
        struct.pack_into("<i", raw, label_at, 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileError, match="record 0"):
            load_features(path)

    def test_nan_feature_rejected(self, tmp_path):
        path = self.write_small(tmp_path)
        raw = bytearray(path.read_bytes())
        store, onto = generate_synthetic(SMALL)
        header = 5 + 1 + 4 + 4 + sum(2 + len(c) for c in onto.classes) + 4
        idlen = struct.unpack_from("<H", raw, header)[0]
        feat_at = header + 2 + idlen + 1 + 4
        struct.pack_into("<f", raw, feat_at, float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFileError, match="record 0"):
            load_features(path)


class TestSynthetic:
    def test_same_seed_bitwise_identical(self):
        a, _ = generate_synthetic(SMALL)
        b, _ = generate_synthetic(SMALL)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.ids == b.ids

    def test_different_seed_differs(self):
        a, _ = generate_synthetic(SMALL)
        b, _ = generate_synthetic(dataclasses.replace(SMALL, seed=43))
        assert a.features.tobytes() != b.features.tobytes()

    def test_no_negatives_in_pure_classification(self):
        spec = dataclasses.replace(
            SMALL, task_mode="classification",
            negatives_train=0, negatives_dev=0, negatives_test=0,
        )
        store, _ = generate_synthetic(spec)
        assert int((store.label_codes < 0).sum()) == 0

    def test_linear_probe_separability(self):
        spec = SyntheticSpec(
            num_classes=5, train_per_class=60, dev_per_class=0, test_per_class=30,
            dim=16, mean_scale=10.0, cov_scale=1.0, task_mode="classification", seed=3,
        )
        store, _ = generate_synthetic(spec)
        test = store.indices("test")
        # perceptron trained on one split certifies geometric separability
        acc = batch_perceptron_separable(
            store.features[test], [store.gold_label(int(i)) for i in test]
        )
        assert acc >= 0.99

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(num_classes=0, train_per_class=1, dev_per_class=0, test_per_class=1)
        with pytest.raises(ValueError):
            SyntheticSpec(num_classes=1, train_per_class=0, dev_per_class=0, test_per_class=1)
        with pytest.raises(ValueError):
            SyntheticSpec(num_classes=1, train_per_class=1, dev_per_class=0, test_per_class=1, dim=1)

    def test_standard_benchmark_shape(self):
        store, onto = generate_synthetic(standard_benchmark("classification"))
        assert len(onto.classes) == 20
        assert store.dim == 16
        assert store.class_counts[onto.classes[0]] == 200


CONFIG = """
[strategy]
kind = ice_o
delta = 0.5

[optimizer]
lr = 2e-4
microbatch_size = 4

[dataset]
synthetic = true
classes = 4
train_per_class = 20
dev_per_class = 5
test_per_class = 10
dim = 8
mode = detection
negatives_train = 10
data_seed = 3

[run]
sessions = 2
permutations = 2
seed = 9
"""


class TestConfig:
    def test_parse_full(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(CONFIG)
        cfg = parse_config(path)
        assert cfg.strategy.kind == "ice_o"
        assert cfg.strategy.delta == 0.5
        assert cfg.strategy.lr == 2e-4
        assert cfg.strategy.microbatch_size == 4
        assert cfg.strategy.max_epochs == 15 and cfg.strategy.patience == 3
        assert cfg.synthetic.num_classes == 4
        assert cfg.num_sessions == 2 and cfg.permutations == 2 and cfg.master_seed == 9

    def test_missing_section(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[strategy]\nkind = ice\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_needs_exactly_one_source(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[strategy]\nkind = ice\n[dataset]\n[run]\nsessions = 2\n")
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(CONFIG.replace("sessions = 2", "sessions = two"))
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "missing.ini")

    def test_digest_changes_iff_config_changes(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text(CONFIG)
        a = parse_config(path)
        assert config_digest(a) == config_digest(parse_config(path))
        b = dataclasses.replace(a, strategy=dataclasses.replace(a.strategy, delta=1.0))
        assert config_digest(a) != config_digest(b)
        # output location does not change experiment identity
        c = dataclasses.replace(a, out_dir="elsewhere")
        assert config_digest(a) == config_digest(c)
