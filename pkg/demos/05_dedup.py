"""
Near-duplicate clip removal
===========================

Census descriptors, 64-bit hyperplane hashes and the mean frame-pair
Hamming distance between clips.
"""

import numpy as np

from bical.dedup import (Clip, census_transform, clip_distance, dedup_filter, descriptor_dim,
                         frame_hash, make_planes)

rng = np.random.default_rng(0)
y, x = np.mgrid[:24, :24]
texture = ((17 * x - 29 * y) % 200 + 28).astype(np.uint8)


def jitter(frame, sigma):
    return np.clip(frame + np.rint(rng.normal(0, sigma, frame.shape)), 0, 255).astype(np.uint8)


# %%
# One census mask per interior pixel: bit set where the neighbor is darker.
print("census masks of the top-left interior pixels:", census_transform(texture)[:4])

# %%
planes = make_planes(descriptor_dim(texture.shape), seed=0)
print(f"frame hash: {int(frame_hash(texture, planes)):016x}")

# %%
# A downstream clip, a noisy re-encode of it, and an unrelated clip.
down = Clip("downstream", [jitter(texture, 1) for _ in range(4)])
copy = Clip("reupload", [jitter(f, 2) for f in down.frames])
other = Clip("unrelated", [rng.integers(0, 256, (24, 24)).astype(np.uint8) for _ in range(4)])
print(f"distance to noisy copy: {clip_distance(copy, down, planes):.2f}")
print(f"distance to unrelated:  {clip_distance(other, down, planes):.2f}")

# %%
res = dedup_filter([copy, other], [down], threshold=2.0, planes=planes)
print("dropped:", res.dropped, " kept:", res.retained)
