"""Checking every hand-written backward pass against finite differences."""
# %%
from grouplstm import pipeline as P
from grouplstm.model import VARIANTS

# %% [markdown]
# The tiny configuration is small enough to perturb every weight. The
# numeric side is evaluated in long double so its roundoff sits far below
# the analytic error being measured.

# %%
res = P.gradcheck_tiny(seed=1)
for name, err in res.per_tensor.items():
    print(f"{name:<20} {err:.2e}")
print(f"two_stage: max relative error {res.max_rel_error:.2e} over {res.probes} coordinates")

# %%
for variant in VARIANTS[1:]:
    print(f"{variant:<26} {P.gradcheck_tiny(seed=1, variant=variant, probe_count=6).max_rel_error:.2e}")
