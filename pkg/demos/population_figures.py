"""Integrate every population preset and print how each one ends.

Writes one CSV per preset (time, correlations, Gram eigenvalues) to the
directory given on the command line, default ``out/figures``.
"""

import sys
from pathlib import Path

import numpy as np

from spikedpca.analysis import greedy_max_selection, init_matrix_I0, permutation_recovery, recovery_order
from spikedpca.population import PRESETS, eigen_track, preset, run_preset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "out/figures")
out.mkdir(parents=True, exist_ok=True)

for name in PRESETS:
    cfg = preset(name)
    traj = run_preset(name, record_every=10)
    C = traj.corr_array()
    tracks = eigen_track([M.T @ M for M in C])
    r = C.shape[1]
    table = np.column_stack([traj.times_array(), C.reshape(len(C), -1), tracks])
    cols = ["t"] + [f"m_{i + 1}{j + 1}" for i in range(r) for j in range(r)] + [f"theta_{k + 1}" for k in range(r)]
    np.savetxt(out / f"{name}.csv", table, delimiter=",", header=",".join(cols), comments="")

    F = traj.final_corr
    sigma = permutation_recovery(F, 0.01)
    print(f"{name}: p={cfg['p']} lambdas={cfg['lambdas']}")
    print(f"  final eigenvalues {np.round(tracks[-1], 4)}")
    if cfg["p"] >= 3 and sigma is not None:
        greedy = greedy_max_selection(init_matrix_I0(cfg["M0"], cfg["lambdas"], cfg["p"])).pairs
        print(f"  recovery order {recovery_order(traj, sigma, 0.9)}")
        print(f"  greedy order   {greedy}")
