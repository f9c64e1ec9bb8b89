# %% [markdown]
# Reverse-mode differentiation on plain numpy arrays.
# Every op records its inputs and a backward closure; `backward` walks them in reverse.

# %%
import numpy as np

from skelgcn import autodiff as ad
from skelgcn.autodiff import Tensor

x = Tensor(np.array([[1.0, -2.0], [3.0, 0.5]]), requires_grad=True)
w = Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)

y = ad.relu(x @ w)          # [2, 1]
loss = ad.sum(ad.hadamard(y, y))
loss.backward()

print("loss", loss.item())
print("dL/dw", w.grad.ravel())

# %% [markdown]
# Check the hand-written backward rules against central differences.

# %%
rng = np.random.default_rng(0)
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
err = ad.grad_check(lambda a, b: ad.mean(ad.relu(a @ b)), [a, b])
print(f"worst relative error {err:.2e}")

# %% [markdown]
# Same-size 2-D correlation, the op that smooths a self-similarity matrix.

# %%
img = Tensor(np.ones((3, 3)))
box = Tensor(np.ones((3, 3)))
print(ad.conv2d(img, box).data)   # corners see 4 cells, the centre sees 9
