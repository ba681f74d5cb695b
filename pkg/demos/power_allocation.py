# %% [markdown]
# Two interfering links: block coordinate ascent against an exhaustive grid.

# %%
import numpy as np

from clca.power import PowerProblem, bcd_objective, bcd_solve, decoupled_solution

problem = PowerProblem(
    weights=np.array([30.0, 20.0]),
    gain=np.array([1.0, 0.8]),
    cross=np.array([[0.0, 0.3], [0.5, 0.0]]),
    battery=np.array([-20.0, -15.0]),
    owner=np.array([0, 1]),
    p_max=np.array([2.0, 2.0]),
    N0=1.0,
)

# %%
start = decoupled_solution(problem)
res = bcd_solve(problem)
print("interference-free start", start, bcd_objective(np.log(start), problem))
print("solver powers", res.power, "sweeps", res.sweeps)
print("objective per sweep", np.round(res.history, 6))

# %% [markdown]
# Brute force over a 2-D power grid (step 1e-3).

# %%
ps = np.linspace(0.0, 2.0, 2001)[1:]
P1, P2 = np.meshgrid(ps, ps, indexing="ij")
val = (
    30 * np.log(1.0 * P1 / (1.0 + 0.3 * P2)) + 20 * np.log(0.8 * P2 / (1.0 + 0.5 * P1))
    - 20 * P1 - 15 * P2
)
i, j = np.unravel_index(np.argmax(val), val.shape)
print("grid best", ps[i], ps[j], val[i, j], "gap", abs(val[i, j] - res.history[-1]))
