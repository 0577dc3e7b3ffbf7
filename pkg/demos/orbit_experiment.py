"""A reduced ORBIT experiment: PI, IPW and AIPW against the true effect curve.

Writes table.csv, report.json and band CSVs under ``results/orbit_demo``.
"""
import sys

from topocause.harness import ExperimentConfig, emit_report, run_experiment, run_test

n = int(sys.argv[1]) if len(sys.argv) > 1 else 120
cfg = ExperimentConfig(dataset="orbit", n=n, n_points=200, replicates=5, seed=1)
report = run_experiment(cfg)
for row in report.summary:
    print(f"H{row['degree']} {row['estimator']:4s}  L1={row['l1_dist']:.3e}  std={row['std']:.3e}")
emit_report(report, "results/orbit_demo")

for d, test in run_test(cfg).items():
    verdict = "reject" if test.reject else "fail to reject"
    print(f"H{d}: T_n={test.T_n:.4f}  critical value={test.critical_value:.4f}  -> {verdict}")
