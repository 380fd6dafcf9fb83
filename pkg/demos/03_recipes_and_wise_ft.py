"""Compare adaptation recipes on one task, then trace a WiSE-FT curve.

Each recipe starts from the same contrastively pretrained dual encoder and the
same 16-shot split, so differences come from what the recipe trains (nothing
but the classifier, the top blocks, everything) and what it trains on
(ID shots alone, plus retrieved captions, plus feature-space perturbation).

Run:  python3 demos/03_recipes_and_wise_ft.py   (about a minute)
"""

from srapf.data import generate_shift_benchmark
from srapf.evaluation import ScatterPoint, evaluate, format_scatter
from srapf.model import wise_ft_interpolate
from srapf.pipeline import run_recipe

bench = generate_shift_benchmark(seed=0)

points = []
results = {}
for name in ("LP", "PFT", "PFT+RA", "PFT+AP", "SRAPF"):
    res = run_recipe(name, bench, shots=16, seed=0)
    results[name] = res
    rep = res.report
    points.append(ScatterPoint(name, res.params_trained,
                               rep.per_dataset_top1["id_test"], rep.ood_mean))
    print(f"{name:8s} trained {res.params_trained:6d} params  "
          f"id {rep.per_dataset_top1['id_test']:.4f}  ood {rep.ood_mean:.4f}")

print("\naccuracy vs trained-parameter budget:")
print(format_scatter(points))

# -- WiSE-FT: interpolate pretrained and finetuned weights ----------------------
# Averaging toward the pretrained encoder trades ID accuracy for robustness;
# the sweep below walks alpha from pure pretrained (0) to pure finetuned (1).

res = results["PFT"]
pre = res.pretrained
ft = res.checkpoint.model
print("\nWiSE-FT along the PFT direction:")
print("alpha\tid_test\tood_mean")
for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
    merged = wise_ft_interpolate(ft, pre, alpha)
    rep = evaluate(merged, bench.eval_sets())
    print(f"{alpha:.2f}\t{rep.per_dataset_top1['id_test']:.4f}\t{rep.ood_mean:.4f}")
