# %% [markdown]
# Synthetic actions and their frame-by-frame self-similarity matrices.

# %%
from pathlib import Path

import numpy as np

from skelgcn.skeleton import DEFAULT_TOPOLOGY, to_bone_stream
from skelgcn.ssm import compute_ssm, export_ssm, validate_ssm
from skelgcn.synth import SynthConfig, generate

manifest, seqs = generate(SynthConfig(reps=1, frames=48))
print(len(seqs), "sequences,", seqs[0].data.shape, "(joints, frames, xyz)")

# %% [markdown]
# One sequence per class.  Periodic motions show off-diagonal stripes at their period,
# the still class is nearly flat apart from noise.

# %%
out = Path("ssm_out")
out.mkdir(exist_ok=True)
names = SynthConfig().class_names
for label, name in enumerate(names):
    seq = next(s for s in seqs if s.label == label)
    ssm = compute_ssm(seq)
    export_ssm(ssm, out / f"{name}.pgm", "pgm")
    print(f"{name:6s} mean distance {ssm.values.mean():.3f}  problems: {validate_ssm(ssm) or 'none'}")

# %% [markdown]
# l1 distances dominate l2 ones entry by entry; both are symmetric and hollow.

# %%
seq = seqs[len(seqs) // 2]
l1, l2 = compute_ssm(seq, "l1").values, compute_ssm(seq, "l2").values
print("l1 >= l2 everywhere:", bool(np.all(l1 >= l2)))

# %% [markdown]
# The bone stream replaces every joint by the vector from its parent; the pelvis gets a zero bone.

# %%
bones = to_bone_stream(seq, DEFAULT_TOPOLOGY)
print("pelvis bone all zero:", not bones.data[DEFAULT_TOPOLOGY.center_joint].any())
print("bone-stream SSM mean", compute_ssm(bones).values.mean().round(4))
