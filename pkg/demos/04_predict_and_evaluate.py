"""Multi-scale inference and contest-style scoring: tile a labeled scene
at several block sizes, average the per-scale probability votes, fill
never-sampled points from their nearest covered neighbor, and print the
confusion-matrix report.

Run:  python demos/04_predict_and_evaluate.py      (about two minutes)
"""

import numpy as np

from pointlabel import blocks as blk
from pointlabel import infer
from pointlabel import training as tr
from pointlabel.io import PointCloud

rng = np.random.default_rng(3)

parts = []
for cls, (z0, tone) in enumerate([(0.0, 45.0), (4.0, 135.0), (9.0, 225.0)]):
    m = 500
    xy = rng.uniform(0.0, 12.0, (m, 2))
    z = rng.uniform(z0, z0 + 1.0, (m, 1))
    spectral = np.clip(tone + rng.normal(0, 10, (m, 3)), 0, 255)
    parts.append((np.concatenate([xy, z], 1), spectral,
                  np.full(m, cls, dtype=np.int32)))
cloud = PointCloud(np.concatenate([p[0] for p in parts]),
                   np.concatenate([p[1] for p in parts]),
                   np.concatenate([p[2] for p in parts]))

# train and predict at the same two scales
predict_scales = (infer.ScaleConfig(6.0, 2.0, 256),
                  infer.ScaleConfig(12.0, 2.0, 512))
all_blocks = blk.build_blocks(cloud, predict_scales, seed=0, training=True)
train_set, val_set = tr.stratified_split(all_blocks, 0.25, seed=0)
config = tr.TrainConfig(epoch_total=40, patience=40, batch_size=8, seed=0)
result = tr.fit(tr.balance_classes(train_set), val_set, config, n_classes=3)
print(f"trained to epoch {result.history[-1].epoch}, "
      f"val acc {result.history[-1].val_acc:.3f}")
fields = [infer.predict_scale(cloud, result.params, sc, scale_id=i, seed=1)
          for i, sc in enumerate(predict_scales)]
for sc, f in zip(predict_scales, fields):
    print(f"scale {sc.size:g} m: covered {f.covered.mean() * 100:.1f}% of "
          f"points, max votes per point {f.counts.max()}")

merged = infer.average_scales(fields)
labels, probs = infer.interpolate_labels(merged, cloud)
print(f"after averaging + nearest-neighbor fill: all {len(labels)} points "
      f"labeled")

report = infer.evaluate(labels, cloud.labels, n_classes=3,
                        class_names=("ground", "veg", "roof"))
print()
print(report.render())
