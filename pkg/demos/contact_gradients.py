"""Gradients of the tip position through contact, checked against finite differences.

A bent vine grows into a wall. The loss is a weighted tip coordinate after
five steps. Its gradient with respect to growth rate, stiffness and damping
comes from autograd through the differentiable QP layer.
"""
import numpy as np

from vinesim import LinearStiffnessParams, PhysParams, RolloutConfig, VineState, loss_gradient
from vinesim.engine import tip_position
from vinesim.scene import Obstacle, Scene

scene = Scene((Obstacle.box(0.415, -0.6, 0.5, 0.6),))
start = VineState.from_angles((0, 0, 0), [0.3, -0.2, 0.1, 0.0], 0.1, tip_length=0.072, capacity=8)
cfg = RolloutConfig(steps=5, max_links=8)


def make(u=0.03, k=2.0, c_damp=0.05):
    return PhysParams(m=0.1, I=0.01, c_damp=c_damp, u=u, stiffness=LinearStiffnessParams(k), dt=0.01)


def loss(snaps):
    tip = tip_position(snaps)
    return tip[0] + 0.5 * tip[1]


res = loss_gradient(start, make(), scene, cfg, loss, wrt=("u", "k", "c_damp"))
print(f"loss {res.loss:.6f}  topology changed: {res.topology_changed}")
h = 1e-6
for name, grad in res.gradients.items():
    base = dict(u=0.03, k=2.0, c_damp=0.05)
    plus, minus = dict(base), dict(base)
    plus[name] += h
    minus[name] -= h
    fd = (loss_gradient(start, make(**plus), scene, cfg, loss, ()).loss
          - loss_gradient(start, make(**minus), scene, cfg, loss, ()).loss) / (2 * h)
    print(f"d loss / d {name:<6} autograd {float(np.sum(grad)):+.6e}   central difference {fd:+.6e}")
