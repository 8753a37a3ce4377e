"""Pooling over persons: order never matters, duplicates only matter for sum and average."""
# %%
import numpy as np

from grouplstm import model as M
from grouplstm.data import Scene
from grouplstm.pipeline import randomize, random_scene

# %%
scene = random_scene(M.ModelConfig.tiny(), 4, seed=0)
order = np.array([2, 0, 3, 1])
shuffled = Scene(scene.persons[order], None, 0, "demo/0")
doubled = Scene(np.concatenate([scene.persons, scene.persons[:1]]), None, 0, "demo/0")

# %% [markdown]
# Sum and average add sorted values, so reordering the persons leaves the
# group logits identical down to the last bit. Max pooling is also blind to
# an exact duplicate, while sum and average count it twice.

# %%
for pool in M.POOL_MODES:
    m = randomize(M.init_model(M.ModelConfig.tiny(pool=pool), 0), 0)
    base = M.group_forward(m, scene)[0]
    same_order = base.tobytes() == M.group_forward(m, shuffled)[0].tobytes()
    shift = np.abs(base - M.group_forward(m, doubled)[0]).max()
    print(f"{pool:<8} permutation bitwise equal: {same_order}   change from a duplicate: {shift:.3g}")
