"""Grow a batch of vines into a cluttered scene and report what happened.

Run from the repository root:  python3 demos/grow_into_clutter.py
"""
from pathlib import Path

from vinesim import RolloutConfig, rollout_batch
from vinesim.cli import load_params
from vinesim.engine import launch_states, penetration  # smallest sphere gap, negative when overlapping
from vinesim.scene import load_scene

HERE = Path(__file__).parent

scene = load_scene(HERE / "scenes" / "clutter.json")
params, d_seg = load_params(HERE / "scenes" / "params_linear.json")

# eight straight 5-link vines with launch angles spread over +-45 degrees
starts = launch_states(scene, count=8, n_links=5, d_segment=d_seg, capacity=12, seed=3)
trajs = rollout_batch(starts, params, scene, RolloutConfig(steps=300, max_links=12, record_every=50))

print(f"{'robot':>5} {'links':>5} {'tip x':>8} {'tip y':>8} {'min gap':>10}")
for i, tr in enumerate(trajs):
    final = tr.final
    tip = final.q[final.n - 1, :2]
    gap = min(penetration(s, scene, d_seg / 2) for s in tr.states)
    print(f"{i:5d} {final.n:5d} {tip[0]:8.3f} {tip[1]:8.3f} {gap:10.2e}")
