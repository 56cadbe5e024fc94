"""Differentiable planar simulator for tip-everting soft vine robots."""

from .dynamics import PhysParams, VineState
from .engine import RolloutConfig, Trajectory, loss_gradient, maybe_add_link, rollout, rollout_batch, step
from .scene import Obstacle, Scene, load_scene
from .stiffness import LinearStiffnessParams, NeuralStiffnessParams, WrinklingParams

__all__ = [
    "LinearStiffnessParams", "NeuralStiffnessParams", "Obstacle", "PhysParams", "RolloutConfig",
    "Scene", "Trajectory", "VineState", "WrinklingParams", "load_scene", "loss_gradient",
    "maybe_add_link", "rollout", "rollout_batch", "step",
]
