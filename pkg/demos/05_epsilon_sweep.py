"""Sweep the perturbation radius and tabulate accuracy against it.

Radius 0 is dispatched to the perturbation-free trainer, so the first row is
a true baseline rather than a degenerate adversarial run. Each row retrains
from the same seed, so rows differ only in the radius.

Run:  python3 demos/05_epsilon_sweep.py   (about a minute)
"""

from srapf.adversarial import format_sweep_table, sweep_epsilon
from srapf.data import generate_shift_benchmark

bench = generate_shift_benchmark(seed=0)
rows = sweep_epsilon(bench, [0.0, 0.005, 0.01, 0.02, 0.05], shots=16, seed=0)
print(format_sweep_table(rows))

baseline = rows[0][1]
best_eps, best = max(rows[1:], key=lambda r: r[1].per_dataset_top1["id_test"])
gain = best.per_dataset_top1["id_test"] - baseline.per_dataset_top1["id_test"]
print(f"\nbest radius {best_eps} lifts id_test by {gain:+.4f} over radius 0")
