"""Feature stores, session plans, and what each learning session gets to see.

Generates a small synthetic dataset, saves it in the binary feature-file
format, loads it back, and walks through the train views that the detection
and classification settings produce for each session.
"""

from pathlib import Path

from cildrift import (
    OTHER,
    generate_synthetic,
    load_features,
    relabel_for_session,
    split_ontology_greedy,
    write_features,
)
from cildrift.data_io import SyntheticSpec

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

spec = SyntheticSpec(
    num_classes=6,
    train_per_class=40,
    dev_per_class=10,
    test_per_class=20,
    dim=8,
    task_mode="detection",
    negatives_train=60,
    negatives_dev=15,
    negatives_test=30,
    anisotropy=2.0,
    seed=1,
)
store, ontology = generate_synthetic(spec)
print(f"generated {len(store)} instances, {len(ontology.classes)} classes, dim {store.dim}")

# Round-trip through the on-disk format. The loader validates the header,
# record layout, and label ranges; the store narrows features through
# float32 so this round trip is bitwise.
path = out_dir / "toy.cilf"
write_features(store, ontology, path)
reloaded, _ = load_features(path)
assert reloaded.features.tobytes() == store.features.tobytes()
print(f"wrote and reloaded {path} ({path.stat().st_size} bytes, bitwise identical)")

# Split classes into 3 sessions with balanced train counts, then look at
# what session 2 actually trains on.
plan = split_ontology_greedy(store.class_counts, 3)
print("\nsession plan:")
for k, classes in enumerate(plan.sessions, start=1):
    total = sum(store.class_counts[c] for c in classes)
    print(f"  session {k}: {classes} ({total} train instances)")

view = relabel_for_session(store, plan, 2, "detection")
labels = [OTHER if c < 0 else store.classes[c] for c in view.train_codes]
print("\ndetection view of session 2 (everything stays, non-session gold masked):")
for name in sorted(set(labels)):
    print(f"  {name}: {labels.count(name)} train instances")

view_cls = relabel_for_session(store, plan, 2, "classification")
print(f"classification view of session 2: {view_cls.n_train} instances, "
      f"classes {sorted(set(store.classes[c] for c in view_cls.train_codes))}")

view_neg = relabel_for_session(store, plan, 2, "classification", use_other=True)
n_neg = int((view_neg.train_codes < 0).sum())
print(f"classification-with-OTHER view: {view_neg.n_train} instances "
      f"({n_neg} constructed negatives)")
