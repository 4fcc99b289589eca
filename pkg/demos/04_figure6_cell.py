# %% [markdown]
# # One cell of the learning-curve grid
#
# Runs the desk preset (10 seeds, 2000 steps) on the full-coverage confounded
# cell and prints the aggregate curves every 250 steps plus the final
# ordering verdicts. The `pescal figure6` command runs all six cells.

# %%
import json

from pescal import ExperimentConfig, aggregate, figure6_configs, final_summary, run_experiment

base = ExperimentConfig.from_dict({}, preset="desk")
cell = figure6_configs(base)["confounded/full"]
runs = run_experiment(cell)

# %% Mean and sd of smoothed return across seeds
for learner in cell.learners:
    steps, mean, sd = aggregate([r.curves[learner] for r in runs])
    pick = steps % 250 == 0
    print(learner.ljust(6), " ".join(f"{m:5.2f}" for m in mean[pick]))

# %% Final-window summary
print(json.dumps(final_summary(runs, cell.learners), indent=1))
