"""Online SGD on two order-3 spikes: who gets found first?

Runs 40 seeds at a few sizes, with starts drawn inside the correlation band,
and compares the order in which the estimators lock on with the greedy
prediction from the starting overlaps. At small N the per-step noise is of
the same 1/sqrt(N) order as the starting overlaps, so near-ties in the
greedy scores are often decided the other way.
"""

from spikedpca.harness import SweepConfig, TrialConfig, run_sweep

base = TrialConfig(N=32, r=2, p=3, lambdas=(3.0, 1.0), init="condition1", record_every=1,
                   noise_backend="gaussian_law")

for N in (32, 64, 128):
    sweep = SweepConfig(base, N_values=(N,), budget_values=(1.0,), coeff=8.0, trials=40)
    (c,) = run_sweep(sweep).cells
    print(f"N={N:4d} steps={c.steps:5d} recovered {c.successes}/{c.trials}, "
          f"greedy order held in {c.greedy_matches}/{c.greedy_evaluated}")
