# %% [markdown]
# # Ground truth by dynamic programming
#
# The model is finite, so every quantity the learners estimate can be computed
# exactly. Three independent routes should name the same optimal policy.

# %%
import numpy as np

from pescal import (SyntheticM2dpSpec, all_deterministic_policies, coverage_constants,
                    exact_policy_value, frontdoor_reduce, marginal_behavior,
                    mediated_bellman_residual, mediated_qstar, solve_oracle, value_iteration,
                    weighted_q_table)

spec, gamma = SyntheticM2dpSpec(), 0.95

# %% Front-door reduction: an ordinary MDP over (s, a)
mdp = frontdoor_reduce(spec, gamma)
print("mean reward r(s,a)\n", mdp.rbar)
print("P(s'=1 | s,a)\n", mdp.P[..., 1])

# %% Route 1: value iteration on the reduced MDP
vi = value_iteration(mdp, tol=1e-10)
print("q*\n", vi.table)
print("iterations", len(vi.deltas), " worst delta ratio", vi.ratios().max())

# %% Route 2: every deterministic policy, evaluated exactly
for pi in all_deterministic_policies(spec):
    print(pi.actions, round(exact_policy_value(mdp, pi), 6))

# %% Route 3: the mediated Q* fixed point, averaged over (a~, m)
Q = mediated_qstar(spec, gamma)
pb = np.stack([marginal_behavior(spec, s) for s in spec.state_values])
q_from_Q = weighted_q_table(Q.table, spec.tables.pm, pb)
print("max |weighted Q* - q*|", np.abs(q_from_Q - vi.table).max())
print("mediated Bellman residual", mediated_bellman_residual(spec, Q.table, gamma))

# %% Coverage constants of the logged data
print(coverage_constants(spec, gamma))

# %% Everything bundled
sol = solve_oracle(spec, gamma)
print("pi*", sol.pi_star.as_dict(), " J*", sol.J_star)
