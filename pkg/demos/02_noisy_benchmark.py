"""Train on a small noisy Gaussian-cluster set with and without anchors.

Run with ``python3 demos/02_noisy_benchmark.py`` (about 15 seconds). It prints
held-out accuracy and the spread of the primary vs final distributions for
K=0 (plain classifier) and K=8.
"""
from relbal import LossWeights, evaluate, train
from relbal.data import SyntheticSpec, generate_split, inject_label_noise
from relbal.experiments import benchmark_config
from relbal.numerics import make_rng

spec = SyntheticSpec(num_classes=8, dim=64, per_class=200, spread=1.0, separation=2.5, seed=3)
train_ds, test_ds = generate_split(spec, test_per_class=100)
train_ds = inject_label_noise(train_ds, 0.2, make_rng(11))

for anchors, weights in ((0, LossWeights(1.0, 0.0, 0.0)), (8, LossWeights())):
    cfg = benchmark_config(epochs=60, anchors=anchors, weights=weights, per_class=200, eval_every=60)
    result = train(train_ds, None, cfg)
    report, _ = evaluate(result.params, test_ds.embeddings, test_ds.labels)
    print(f"K={anchors}: accuracy {report.accuracy:.3f}  primary std {report.primary_std:.4f}  "
          f"final std {report.corrected_std:.4f}  DB {report.davies_bouldin:.2f}")
