"""
Sequential refinement on a two-input benchmark
----------------------------------------------

One seed of the local Latin hypercube refinement loop on ``ex1`` (linear
and quartic objectives, P(F) <= 1e-6), compared with a one-shot design of
the same size.  Takes about a minute.
"""

# %%
from lolhr.bench import get_problem, run_strategy

problem = get_problem("ex1")
p = problem.protocol
print(f"budget {p.budget} = {p.m0} initial + {p.n_steps} x {p.m_s} refinement samples")

# %%
# Every step retrains the GP, solves the robust/reliable problem on it and
# places new points in the clusters of the predicted Pareto region.


def show(state, info):
    c = info.get("clusters", {})
    print(f"step {info['step']}: {info['dataset_size']:3d} samples, front {info['front_size']:3d}, "
          f"clusters {c.get('sizes')} budgets {c.get('budgets')}")


refined = run_strategy(problem, "lolhr", "gp", seed=0, progress=show)

# %%
# A stationary design spends the whole budget at once.
stationary = run_strategy(problem, "stationary", "gp", seed=0)

for name, rec in (("LoLHR", refined), ("stationary", stationary)):
    c = rec["counts"]
    print(f"{name:10s} HVI {rec['hvi']:.4f}  reliable {c['p']:3d}  unreliable {c['m_F']:2d}  "
          f"true evaluations {c['m']}")

# %%
# Records are plain JSON, the same files ``lolhr run`` writes.  The full
# dataset keeps the step at which each sample was added.
steps = refined["dataset"]["step"]
print("samples per step", [steps.count(k) for k in range(p.n_steps + 1)])
print("record keys", sorted(refined))
