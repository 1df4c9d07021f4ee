"""Two ablations: the OTHER-logit constant, and exemplar replay.

First reruns the anchored variant across several fixed OTHER logits on a
reduced detection benchmark; the final score barely moves. Then compares
the drifted baseline with and without replay to show that rehearsal also
mitigates the collapse, at the cost of storing exemplars.
"""

import dataclasses

from cildrift import ExperimentConfig, run_experiment
from cildrift.data_io import standard_benchmark, standard_strategy

# The full detection benchmark with a single session order; detection
# training at the default learning rate needs the benchmark-scale views.
spec = standard_benchmark("detection")
SESSIONS = 5
PERMS = 1


def final_micro(kind, delta=0.0):
    cfg = ExperimentConfig(
        strategy=dataclasses.replace(standard_strategy(kind), delta=delta),
        num_sessions=SESSIONS,
        permutations=PERMS,
        master_seed=11,
        synthetic=spec,
    )
    return run_experiment(cfg).final_micro_mean()


print("fixed OTHER logit sweep (ice_o, detection):")
results = {d: final_micro("ice_o", d) for d in (-5.0, -1.0, 0.0, 1.0, 5.0)}
for d, v in results.items():
    print(f"  delta {d:+.0f}: final micro-F1 {v:.3f}")
print(f"  spread: {max(results.values()) - min(results.values()):.3f}")

print("\nreplay ablation (detection):")
for kind in ("drifted", "er", "ice_o"):
    print(f"  {kind:8s} final micro-F1 {final_micro(kind):.3f}")
