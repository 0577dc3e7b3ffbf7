"""How each estimator reacts when the propensity or the outcome model is wrong (synth-graph, H1)."""
import warnings

from topocause.harness import ExperimentConfig, build_pool, run_experiment

warnings.filterwarnings("ignore", message=".*separable", category=RuntimeWarning)

base = dict(dataset="synth-graph", n=1000, J=10, mis_J=2, degrees=(1,), replicates=20, seed=0)
pool = build_pool(ExperimentConfig(**base))
rows = {}
for scenario in ("none", "mis-pi", "mis-mu"):
    rep = run_experiment(ExperimentConfig(**base, scenario=scenario), pool=pool)
    rows[scenario] = {k: rep.l1(k, 1) for k in ("PI", "IPW", "AIPW")}

print(f"{'scenario':8s} " + " ".join(f"{k:>10s}" for k in ("PI", "IPW", "AIPW")))
for scenario, l1 in rows.items():
    print(f"{scenario:8s} " + " ".join(f"{v:10.4f}" for v in l1.values()))
