# %% [markdown]
# # CAL, PESCAL and the baselines on one dataset
#
# Nuisances first, then a batch CAL fit, then the same data under the
# keep-15 coverage filter where only 15 tuples carry actions other than -1.

# %%
import numpy as np

from pescal import (CoverageFilterSpec, TrainConfig, SyntheticM2dpSpec, cal_fit_batch,
                    cal_policy, coverage_filter, estimate_nuisances, frontdoor_reduce,
                    exact_policy_value, generate_dataset, incremental_train, kl_diagnostics,
                    pescal_policy)

spec = SyntheticM2dpSpec()
S, A = spec.state_values, spec.action_values
mdp = frontdoor_reduce(spec, 0.95)

# %% Full-coverage data
d = generate_dataset(spec, 50_000, seed=3)
n = estimate_nuisances(d, spec)
print("p_b hat\n", n.pb.probs)
print("p_m hat(m=1)\n", n.pm.probs[..., 1])
print("KL(behavior), KL(mediator):", kl_diagnostics(spec, n.pb, n.pm))

Q = cal_fit_batch(d, spec, n.pm, n.pb, TrainConfig())
pi = cal_policy(Q, n.pm, n.pb, S, A)
print("CAL policy", pi.as_dict(), " J =", exact_policy_value(mdp, pi))

# %% Keep-15: one covered action, two barely seen
#
# Cells seen once or twice often have an empirical mediator frequency of 0 or
# 1, and then Delta = z * sqrt(p(1-p)/N) is exactly 0. The well-covered action
# -1 is the one that pays a penalty, so the pessimistic policy can still pick
# a rarely logged action.
d15 = coverage_filter(d, CoverageFilterSpec(15))
n15 = estimate_nuisances(d15, spec)
print("N =", d15.N, " counts N(s,a)\n", n15.pm.counts_sa)
print("Delta(s,a,m=1)\n", n15.delta.delta[..., 1])
Q15 = cal_fit_batch(d15, spec, n15.pm, n15.pb, TrainConfig())
for name, p in (("CAL", cal_policy(Q15, n15.pm, n15.pb, S, A)),
                ("PESCAL", pescal_policy(Q15, n15.pm, n15.pb, n15.delta, states=S, actions=A))):
    print(f"{name:>6} policy {p.as_dict()}  J = {exact_policy_value(mdp, p):.4f}")

# %% Minibatch training with a target table and checkpoints
cfg = TrainConfig(total_steps=2000)
for learner in ("cal", "pescal", "fqi", "cql"):
    res = incremental_train(d, spec, n, cfg, learner, seed=0)
    final = res.final_policy
    print(f"{learner:>6}: {len(res.checkpoints)} checkpoints, final {final.as_dict()}, "
          f"J = {exact_policy_value(mdp, final):.4f}")
