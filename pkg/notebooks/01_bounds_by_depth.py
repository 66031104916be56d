# %% [markdown]
# Bounds as a function of depth
# =============================
#
# Every contraction layer multiplies the information term by ``eta`` and the
# bound by ``sqrt(eta)``.  This script tabulates the closed forms for a few
# settings so the decay can be read off directly.

# %%
import math

import numpy as np

from infobound.bounds import BoundInputs, binary_bound, main_bound, noisy_sgd_bound
from infobound.infotheory import sauer_growth_bound
from infobound.optim import Schedule

# %%
# main bound for two values of eta, one nat of information and n = 50
for eta in (0.25, 0.8):
    values = [main_bound(BoundInputs(L, eta, 0.5, 50, 1.0)).value for L in range(0, 9, 2)]
    print(f"eta={eta}:", " ".join(f"{v:.5f}" for v in values))

# %% [markdown]
# Two extra layers shrink the bound by exactly ``eta``, whatever the other inputs.

# %%
a = main_bound(BoundInputs(3, 0.4, 1.3, 777, 2.5)).value
b = main_bound(BoundInputs(5, 0.4, 1.3, 777, 2.5)).value
print("ratio", b / a)

# %%
# noisy SGD with the inverse-square schedule: the finite-horizon bound
# approaches the infinite-horizon cap
sched = Schedule("inverse_square", 0.06)
for T in (1, 10, 100, 1000, math.inf):
    v = noisy_sgd_bound(BoundInputs(0, 1.0, 0.5, 100, M=1.0, schedule=sched, T=T)).value
    print(f"T={T}: {v:.6f}")
print("0.005 * pi =", 0.005 * math.pi)

# %%
# binary classification: the bound through the VC dimension
ns = np.array([5, 10, 50, 100, 1000])
print([round(binary_bound(BoundInputs(0, 1.0, 0.5, int(n), vc_dim=5)).value, 4) for n in ns])
print("Sauer growth bound (10, 3):", sauer_growth_bound(10, 3))
