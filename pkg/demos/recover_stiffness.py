"""Recover a linear joint stiffness from simulated trajectories.

Synthetic observations come from a vine with k = 2.0. Fitting starts from
k = 0.5 and only the stiffness is free.
"""
import numpy as np

from vinesim import LinearStiffnessParams, PhysParams, RolloutConfig, VineState, rollout
from vinesim.fit import FitConfig, fit_parameters, trial_from_trajectory
from vinesim.scene import Scene


def params(k):
    return PhysParams(m=0.1, I=0.01, c_damp=0.05, u=0.03, stiffness=LinearStiffnessParams(k), dt=0.01)


scene = Scene()
rng = np.random.default_rng(0)
trials = []
for t in range(4):
    start = VineState.from_angles((0, 0, 0), rng.uniform(-0.4, 0.4, 4), 0.1, tip_length=0.05, capacity=8)
    traj = rollout(start, params(2.0), scene, RolloutConfig(steps=40, max_links=8))
    trials.append(trial_from_trajectory(traj, scene, 0.01, name=f"t{t}"))

report = fit_parameters(trials, params(0.5), FitConfig(iterations=300, fit=("k",)))
print(f"initial loss {report.initial_loss:.3e}  best loss {report.best_loss:.3e} at iteration {report.best_iteration}")
print(f"recovered k = {report.parameters['k']}")
