"""Draw location and pair pretext samples and check labels with the brute-force oracle.

Run: python demos/03_pretext_samples.py
"""

import numpy as np

from pyramidssl.pretext import (SamplerConfig, augment, locate_oracle, location_distances,
                                sample_location, sample_pair)
from pyramidssl.synth import SynthSpec, generate_pyramid

imgs = [generate_pyramid(SynthSpec(seed=s, levels=4, base_size=32)) for s in range(2)]
cfg = SamplerConfig(n=2, patch_size=16, input_size=16, seed=0)
rng = np.random.default_rng(0)

s = sample_location(imgs[0], cfg, rng, keep_raw=True)
print("location sample:", s.source[1:], "label", s.label)
d = location_distances(s.parent_raw, s.child_raw, cfg.n)
print("distance of the pooled child to each of the 16 parent blocks:")
print(np.round(d.reshape(4, 4), 4))
print("oracle says", locate_oracle(s.parent_raw, s.child_raw, cfg.n))

a = augment(s, rng)
print("\naugmented child shape", a.child.shape, "label kept:", a.label == s.label)

labels = []
for _ in range(500):
    x, y = sample_pair(imgs[0], cfg, rng, imgs[1])
    labels += [x.label, y.label]
print(f"\npair task: {np.mean(labels):.3f} of 1000 pairs are positives")
