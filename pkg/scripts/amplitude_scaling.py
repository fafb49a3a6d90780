# %% [markdown]
# # Amplitude against eps
#
# The minimum of z on the cycle decreases like log(1/eps), and the cycles
# approach the singular cycle in Hausdorff distance on the sphere.  Each
# eps takes a few seconds; set RELAXCYCLE_THREADS to run them in parallel.

# %%
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from relaxcycle.experiments import convergence

out = Path(sys.argv[1] if len(sys.argv) > 1 else "script_output")
out.mkdir(parents=True, exist_ok=True)

# %%
eps = [1e-2, 1e-3, 1e-4]
res = convergence(0.8, 0.5, eps)
rows = sorted(res["rows"], key=lambda r: -r["eps"])
for r in rows:
    print(f"eps={r['eps']:.0e}  min_z={r['min_z']:8.4f}  period={r['period']:7.3f}  "
          f"hausdorff={r['hausdorff']:.4f}")
print("strictly decreasing distance:", res["strictly_decreasing"])

# %% [markdown]
# A straight-line fit of min z against log(1/eps) gives the growth rate.

# %%
L = np.log(1 / np.array([r["eps"] for r in rows]))
mz = np.array([r["min_z"] for r in rows])
b, a = np.polyfit(L, mz, 1)
print(f"min_z ~ {a:.3f} + {b:.4f} log(1/eps)")

fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
ax[0].plot(L, mz, "o-")
ax[0].plot(L, a + b * L, "k:", lw=1)
ax[0].set_xlabel("log(1/eps)")
ax[0].set_ylabel("min z")
ax[1].semilogx([r["eps"] for r in rows], [r["hausdorff"] for r in rows], "s-")
ax[1].invert_xaxis()
ax[1].set_xlabel("eps")
ax[1].set_ylabel("Hausdorff distance")
fig.tight_layout()
fig.savefig(out / "amplitude_scaling.png", dpi=120)
