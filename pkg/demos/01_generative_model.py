# %% [markdown]
# # The synthetic confounded model
#
# A hidden confounder C pushes the logged action away from 0 and also raises
# the reward. The action itself only acts through the mediator M, and its
# causal effect is negative. This script looks at those pieces one by one.

# %%
import numpy as np

from pescal import (DeterministicPolicy, RolloutMode, SyntheticM2dpSpec, conditional,
                    marginal_behavior, sample_trajectories, sample_trajectory)

spec = SyntheticM2dpSpec()
print(spec.to_json())
print("fingerprint", spec.fingerprint)

# %% Conditional laws, straight from the logits
print("P(C | s=0)         ", conditional(spec, "confounder", s=0))
print("P(A | s=0, c=+1)   ", conditional(spec, "behavior", s=0, c=1))
print("P(A | s=0, c=-1)   ", conditional(spec, "behavior", s=0, c=-1))
print("P(A | s=0) logged  ", marginal_behavior(spec, 0))
print("P(M | s=1, a=-1)   ", conditional(spec, "mediator", s=1, a=-1))
print("P(R | s=0, c=1, m=1)", conditional(spec, "reward", s=0, c=1, m=1))

# %% One logged trajectory: s, c, a, m, r in draw order
tr = sample_trajectory(spec, RolloutMode.behavior_confounded(), horizon=8, seed=7)
for row in zip(*(x.tolist() for x in (tr.s, tr.c, tr.a, tr.m, tr.r))):
    print(row)

# %% What confounding looks like in the logs
#
# The logged |A| is strongly tied to the reward because C drives both.
# Under intervention with uniform actions that association disappears, and
# the sign of A shows its true (negative) effect.
def pool(mode, n=400):
    trs = sample_trajectories(spec, mode, 500, range(n))
    return {f: np.concatenate([getattr(t, f) for t in trs]) for f in ("s", "a", "r")}

logged = pool(RolloutMode.behavior_confounded())
uniform = pool(RolloutMode.intervention(np.full((2, 3), 1 / 3)))
for name, p in (("logged", logged), ("intervened", uniform)):
    sel = p["s"] == 0
    print(f"{name:>10}: corr(A,R)={np.corrcoef(p['a'][sel], p['r'][sel])[0, 1]:+.3f}  "
          f"corr(|A|,R)={np.corrcoef(np.abs(p['a'][sel]), p['r'][sel])[0, 1]:+.3f}")

# %% Severing the C -> A edge keeps everything else fixed
flat = SyntheticM2dpSpec.from_dict({**spec.to_dict(), "confounded": False})
print("unconfounded P(A | s=0, c=+1)", conditional(flat, "behavior", s=0, c=1))

# %% Intervention rollouts follow the policy and ignore C
pi = DeterministicPolicy.constant(spec, -1)
tr = sample_trajectory(spec, RolloutMode.intervention(pi), 500, seed=1)
print("actions taken:", set(tr.a.tolist()), " discounted return:",
      float(tr.r @ 0.95 ** np.arange(500)))
