"""Walk through pyramid coordinates: where a patch's children live and how levels relate.

Run: python demos/01_pyramid_geometry.py
"""

import numpy as np

from pyramidssl.pretext import block_pool
from pyramidssl.pyramid import PatchRef, child_region, children_set, extract
from pyramidssl.synth import SynthSpec, generate_pyramid

img = generate_pyramid(SynthSpec(seed=3, levels=4, base_size=32))
print("level sizes (coarsest first):", [a.shape[:2] for a in img.levels])

# A 16x16 patch at level 1. Two levels up, the same tissue is covered by a
# 4x4 grid of 16x16 patches, numbered row-major.
parent = PatchRef(level=1, row=16, col=8, height=16, width=16)
kids = children_set(parent, 2)
print(f"\nparent {parent}")
print(f"covers {child_region(parent, 2)} at level 3")
print(f"{len(kids)} children, first three: {kids[:3]}")

# Each level is an exact 2x2 average of the level above, so pooling any child
# by 4 reproduces the matching block of the parent pixel for pixel.
p = extract(img, parent)
k = 6
child = extract(img, kids[k])
i, j = divmod(k, 4)
block = p[i * 4:(i + 1) * 4, j * 4:(j + 1) * 4]
print(f"\nchild {k} pooled by 4 equals parent block ({i}, {j}):",
      np.allclose(block_pool(child, 4), block))
