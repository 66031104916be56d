# %% [markdown]
# Tiny worlds
# ===========
#
# With a handful of instances and hypotheses every expectation can be
# computed exactly.  This makes the bounds testable without sampling error,
# and gives a reference for the Monte Carlo estimators.

# %%
from infobound.cli import shipped_worlds
from infobound.experiments.montecarlo import WorldLearner, WorldSource, gap_estimate, stability_estimate
from infobound.experiments.tinyworld import lemma4_soundness_check, random_world, tiny_world_exact

# %%
for world in shipped_worlds():
    r = tiny_world_exact(world)
    print(f"{world.name:20s} gap={r.exact_gap:.4f} I(S;W)={r.mi_S_W:.4f} eta={r.eta_exact:.3f}")

# %%
# soundness over random worlds: the bound minus the exact gap
slack = [lemma4_soundness_check(random_world(s)).lemma4_slack for s in range(100)]
print("min slack", min(slack), "max slack", max(slack))

# %% [markdown]
# The replace-one stability and the generalization gap agree in expectation.

# %%
world = random_world(5)
exact = tiny_world_exact(world)
gap = gap_estimate(WorldLearner(world), WorldSource(world), world.n, 2000, seed=0, n_test=100)
beta = stability_estimate(WorldLearner(world), WorldSource(world), world.n, 2000, seed=1)
print(f"exact {exact.exact_gap:.4f}  gap {gap.mean_gap:.4f} +- {gap.std_error:.4f}  "
      f"beta {beta.beta_hat:.4f} +- {beta.std_error:.4f}")
