"""Walk one embedding through the head and print every intermediate distribution.

Run with ``python3 demos/01_single_prediction.py``. Nothing is trained here;
the point is to see how confidence decides how much each correction counts.
"""
import numpy as np

from relbal import HeadConfig, forward, init_params, make_rng
from relbal.head import confidence

cfg = HeadConfig(num_classes=4, dim=16, hidden=8, anchors_per_class=2, tokens=4, n_heads=2, delta=0.5)
params = init_params(cfg, make_rng(0))

# Place one anchor of class 2 right on top of the embedding, so the anchor
# correction should point at class 2 with fair confidence.
e = make_rng(1).standard_normal((1, 16))
params.params["anchors"][2, 0] = e[0]

out = forward(e, params)
np.set_printoptions(precision=3, suppress=True)
for key, label in (("l", "primary"), ("t_g", "anchor"), ("t_a", "attentive"), ("t", "fused correction"),
                   ("final", "final")):
    p = out[key][0]
    print(f"{label:>17}: {p}  confidence {float(confidence(p)):.3f}")

print("\npredicted class:", int(np.argmax(out["final"][0])))
