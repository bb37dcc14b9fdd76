"""
Failure probability of a series system
--------------------------------------

Directional sampling and crude Monte Carlo on two limit states of a
standard normal pair, checked against the exact value.
"""

# %%
import numpy as np
from scipy import special

from lolhr import Marginal, RandomVector, ds_pf, mc_pf

rv = RandomVector((Marginal.normal(0.0, 1.0), Marginal.normal(0.0, 1.0)))

# %%
# Two half-planes at distance 2.5 and 3 from the origin; the system fails
# as soon as one of them is crossed.


def limit_states(X):
    return np.column_stack([2.5 - X[:, 0], 3.0 + X[:, 1]])


exact = 1 - (1 - special.ndtr(-2.5)) * (1 - special.ndtr(-3.0))
print(f"exact       {exact:.3e}")

# %%
# Directional sampling needs far fewer limit state calls at this level.
ds = ds_pf(limit_states, rv, m_directions=160, n_bracket=20, target_pf=1e-3, rng=np.random.default_rng(0))
print(f"DS          {ds.pf_estimate:.3e}  ({ds.n_evals} calls)")

mc = mc_pf(limit_states, rv, 10 ** 6, np.random.default_rng(0))
se = np.sqrt(exact * (1 - exact) / 10 ** 6)
print(f"MC          {mc.pf_estimate:.3e}  ({mc.n_evals} calls, {abs(mc.pf_estimate - exact) / se:.1f} SE off)")

# %%
# The points nearest to the limit state are what the refinement loop uses
# to decide where new samples go.
print("failure points nearest the limit state:\n", np.round(ds.failure_points[:5], 3))
