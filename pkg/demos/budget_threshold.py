"""Success rate of online SGD against the step budget N^alpha.

A small version of the sample-complexity experiment: one order-3 spike,
three sizes, budgets N^0.5, N^1, N^1.5, twenty seeds per cell. Prints the
success table and the fitted 50% crossing for each N.
"""

from spikedpca.harness import SweepConfig, TrialConfig, run_sweep

base = TrialConfig(N=16, r=1, p=3, lambdas=(3.0,))
sweep = SweepConfig(base, N_values=(16, 24, 32), budget_values=(0.5, 1.0, 1.5), trials=20)
summary = run_sweep(sweep)

for c in summary.cells:
    print(f"N={c.N:3d} alpha={c.budget_value:.1f} steps={c.steps:4d} "
          f"success {c.successes:2d}/{c.trials} [{c.ci_low:.2f}, {c.ci_high:.2f}]")
for N, est in summary.threshold["per_N"].items():
    a = "n/a" if est["alpha"] is None else f"{est['alpha']:.2f}"
    print(f"N={N}: crossing alpha {a} ({est['flag']})")
