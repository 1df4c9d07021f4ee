"""Head-to-head run of every training strategy on a reduced benchmark.

Session-by-session micro-F1 for the collectively trained baseline, the
individually trained variants, and experience replay, averaged over 3
session-order permutations. The drifted baseline ends up near the share of
test data belonging to the last session; the OTHER-anchored variant stays
close to its session-1 score throughout.
"""

import time

from cildrift import ExperimentConfig, run_experiment
from cildrift.data_io import standard_strategy, SyntheticSpec

spec = SyntheticSpec(
    num_classes=12,
    train_per_class=100,
    dev_per_class=25,
    test_per_class=50,
    dim=16,
    task_mode="classification",
    negatives_train=120,
    negatives_dev=30,
    negatives_test=60,
    anisotropy=2.5,
    seed=7,
)
SESSIONS = 4
PERMS = 3

rows = {}
for kind in ("drifted", "ice", "ice_pl", "ice_o", "ice_pl_o", "er"):
    t0 = time.time()
    cfg = ExperimentConfig(
        strategy=standard_strategy(kind),
        num_sessions=SESSIONS,
        permutations=PERMS,
        master_seed=11,
        synthetic=spec,
    )
    report = run_experiment(cfg)
    rows[kind] = [r["micro"] for r in report.averaged]
    print(f"ran {kind:9s} in {time.time() - t0:.1f}s")

print(f"\nmicro-F1 by session (mean over {PERMS} permutations):")
header = "strategy   " + "".join(f"   S{t}" for t in range(1, SESSIONS + 1))
print(header)
print("-" * len(header))
for kind, vals in rows.items():
    print(f"{kind:9s}  " + "".join(f" {v:.3f}" for v in vals))

final = {k: v[-1] for k, v in rows.items()}
print("\nfinal-session ranking:")
for kind in sorted(final, key=final.get, reverse=True):
    print(f"  {kind:9s} {final[kind]:.3f}")
