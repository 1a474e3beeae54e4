"""Regenerates softmax_oracle.json: 1,000 logit pairs with the positive-tag
probability 1 / (1 + exp(z_neg - z_pos)) evaluated at 60 significant digits."""

import json
import random

import mpmath

mpmath.mp.dps = 60
rng = random.Random(20240611)
scales = [1.0, 10.0, 100.0, 1e3, 1e4]
pairs = []
for i in range(1000):
    scale = scales[i % len(scales)]
    a = rng.uniform(-scale, scale)
    b = rng.uniform(-scale, scale)
    if i % 50 == 0:
        a, b = (1e4, -1e4) if i % 100 == 0 else (-1e4, 1e4)
    p = 1 / (1 + mpmath.exp(mpmath.mpf(b) - mpmath.mpf(a)))
    pairs.append({"z_pos": a, "z_neg": b, "p": float(p), "p_str": mpmath.nstr(p, 30)})

with open("softmax_oracle.json", "w") as f:
    json.dump(pairs, f, indent=0)
    f.write("\n")
