# %% [markdown]
# # Sweeping alpha
#
# Cycles are born at alpha = xi, where the reduced flow is Hamiltonian and
# the origin changes stability.  Beyond alpha = 1 the amplitude grows much
# faster with alpha because the cycle's lowest point moves onto a line
# through the origin whose slope depends on alpha.

# %%
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from relaxcycle.experiments import bifurcation, slope

out = Path(sys.argv[1] if len(sys.argv) > 1 else "script_output")
out.mkdir(parents=True, exist_ok=True)

# %%
xi = 0.5
alphas = np.round(np.concatenate([np.arange(0.4, 1.0, 0.05), np.arange(1.0, 2.01, 0.2)]), 3)
res = bifurcation(xi, [1e-2, 1e-3], alphas)
print(f"Hopf point of the reduced flow: alpha = {res['hopf_alpha']:.10f}")
for eps, a in res["onset"].items():
    print(f"eps={eps:g}: first grid point with a cycle alpha = {a}")

# %%
fig, ax = plt.subplots(figsize=(6, 4))
for eps in (1e-2, 1e-3):
    recs = [r for r in res["records"] if r.eps == eps]
    a = np.array([r.alpha for r in recs])
    z = np.array([r.min_z if r.has_cycle else 0.0 for r in recs])
    ax.plot(a, z, "o-", ms=3, label=f"eps = {eps:g}")
    if eps == 1e-3:
        print(f"slope on [0.6, 0.9]: {slope(a, z, 0.6, 0.9):.3f}")
        print(f"slope on [1.2, 2.0]: {slope(a, z, 1.2, 2.0):.3f}")
ax.axvline(xi, color="k", lw=0.5)
ax.set_xlabel("alpha")
ax.set_ylabel("min z")
ax.legend()
fig.tight_layout()
fig.savefig(out / "alpha_sweep.png", dpi=120)
