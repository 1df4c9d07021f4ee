"""Why the collectively trained classifier forgets: logit trajectories.

Tracks, on the first session's test instances, the mean gold-class logit
and the mean of the newest block's top logit (NCP) after each session. For
the drifted baseline the gold series sinks while NCP climbs past it; for
the individually trained variants the gold series is exactly flat. Writes a
plot alongside the printed table if matplotlib is importable.
"""

from pathlib import Path

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

series = {}
for kind in ("drifted", "ice", "ice_pl", "ice_o"):
    cfg = ExperimentConfig(
        strategy=standard_strategy(kind),
        num_sessions=SESSIONS,
        permutations=1,
        master_seed=11,
        synthetic=spec,
    )
    report = run_experiment(cfg)
    gold = {t.session: t.value for t in report.traces if t.series == "gold"}
    ncp = {t.session: t.value for t in report.traces if t.series == "ncp"}
    series[kind] = (gold, ncp)

print("mean logits on session-1 test instances")
print(f"{'':10s}" + "".join(f"        S{t}" for t in range(1, SESSIONS + 1)))
for kind, (gold, ncp) in series.items():
    g = "".join(f"  {gold[t]:+8.3f}" for t in sorted(gold))
    n = "      -- " + "".join(f"  {ncp[t]:+8.3f}" for t in sorted(ncp))
    print(f"{kind:10s}{g}   (gold)")
    print(f"{'':10s}{n}  (ncp)")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("\nmatplotlib not available; skipping the figure")
else:
    fig, axes = plt.subplots(1, len(series), figsize=(4 * len(series), 3.2), sharey=True)
    for ax, (kind, (gold, ncp)) in zip(axes, series.items()):
        xs = sorted(gold)
        ax.plot(xs, [gold[t] for t in xs], "o--", label="gold")
        if ncp:
            xs_n = sorted(ncp)
            ax.plot(xs_n, [ncp[t] for t in xs_n], "s-", label="ncp")
        ax.set_title(kind)
        ax.set_xlabel("session")
        ax.axhline(0.0, lw=0.5, color="gray")
    axes[0].set_ylabel("mean logit on first-session test set")
    axes[0].legend()
    out = Path(__file__).parent / "out"
    out.mkdir(exist_ok=True)
    fig.tight_layout()
    fig.savefig(out / "drift_traces.png", dpi=120)
    print(f"\nfigure saved to {out / 'drift_traces.png'}")
