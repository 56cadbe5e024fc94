"""Joint restoring-moment models for inflated-beam vine robots.

Three interchangeable models map a pin-joint bending angle to a restoring
moment: a damped linear torsional spring, a closed-form wrinkling model for
thin-walled inflated tubes, and a small tanh perceptron. All three share the
same viscous damping term.

The wrinkling model evaluates the bending moment of a pressurised tube as a
function of the wrinkled arc ``gamma0``; the arc follows from the bending
angle through the dimensionless wrinkling criterion ``eps_crit``. Below the
onset angle ``2 * asin(eps_crit)`` the tube is treated as linear-elastic with
the slope that makes the moment continuous at onset.

Numerical work happens in torch (float64) so the simulator can differentiate
through it; the public functions accept and return plain floats / arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
import torch

DTYPE = torch.float64

# below this distance from the fully wrinkled state the closed form is replaced
# by its Taylor series (the direct expression cancels catastrophically)
_SERIES_BELOW = 0.05
_ARG_CLAMP = 1.0 - 1e-12
EPS_BOUNDS = (1e-4, 1.0 - 1e-4)


@dataclass
class LinearStiffnessParams:
    """Torsional spring constant ``k`` in N m / rad (scalar or one per joint)."""

    k: Union[float, np.ndarray] = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.k) < 0):
            raise ValueError("linear stiffness must be non-negative")

    kind = "linear"


@dataclass
class WrinklingParams:
    """Inflated-tube wrinkling model.

    ``eps_poly`` holds the coefficients ``c0..c3`` of the cubic eps_crit(P)
    with P in pascal; ``pressure_range`` is the calibrated range of that fit.
    ``eps_override`` short-circuits the polynomial.
    """

    pressure: float
    tube_radius: float
    eps_poly: tuple = (0.1, 0.0, 0.0, 0.0)
    pressure_range: Optional[tuple] = None
    eps_override: Optional[float] = None

    kind = "wrinkling"

    def __post_init__(self):
        if self.pressure <= 0 or self.tube_radius <= 0:
            raise ValueError("pressure and tube radius must be positive")
        self.eps_poly = tuple(float(c) for c in self.eps_poly)
        if len(self.eps_poly) != 4:
            raise ValueError("eps_poly needs four cubic coefficients")
        eps = self.eps_crit
        if not 0.0 < eps < 1.0:
            raise ValueError(f"eps_crit must lie in (0, 1), got {eps}")

    @property
    def eps_crit(self) -> float:
        if self.eps_override is not None:
            return float(self.eps_override)
        return eps_from_pressure(self.pressure, self.eps_poly, self.pressure_range).value

    @property
    def full_moment(self) -> float:
        """Fully wrinkled moment pi P R^3."""
        return math.pi * self.pressure * self.tube_radius**3


@dataclass
class NeuralStiffnessParams:
    """Two-layer perceptron 1 -> 10 (tanh) -> 1 mapping joint angle to moment."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float = 0.0

    kind = "mlp"
    hidden = 10

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float).reshape(-1)
        self.b1 = np.asarray(self.b1, dtype=float).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=float).reshape(-1)
        self.b2 = float(self.b2)
        if not (len(self.w1) == len(self.b1) == len(self.w2)):
            raise ValueError("perceptron layer sizes disagree")
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2)) or not math.isfinite(self.b2):
            raise ValueError("perceptron parameters must be finite")

    @classmethod
    def initialize(cls, seed: int = 0, hidden: int = 10, scale: float = 0.5) -> "NeuralStiffnessParams":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, 1.0, hidden),
            b1=rng.normal(0.0, 0.1, hidden),
            w2=rng.normal(0.0, scale / np.sqrt(hidden), hidden),
            b2=0.0,
        )


StiffnessModel = Union[LinearStiffnessParams, WrinklingParams, NeuralStiffnessParams]


class EpsEstimate(NamedTuple):
    value: float
    extrapolated: bool


def eps_from_pressure(pressure: float, eps_poly, pressure_range=None) -> EpsEstimate:
    """Evaluate the cubic eps_crit(P) and clamp it into (1e-4, 1 - 1e-4).

    ``extrapolated`` is set when ``pressure`` falls outside ``pressure_range``.
    """
    c0, c1, c2, c3 = (float(c) for c in eps_poly)
    p = float(pressure)
    value = c0 + p * (c1 + p * (c2 + p * c3))
    value = min(max(value, EPS_BOUNDS[0]), EPS_BOUNDS[1])
    extrapolated = False
    if pressure_range is not None:
        lo, hi = pressure_range
        extrapolated = not (lo <= p <= hi)
    return EpsEstimate(value, extrapolated)


def onset_angle(eps_crit: float) -> float:
    """Bending angle at which wrinkling starts, ``2 asin(eps_crit)``."""
    return 2.0 * math.asin(eps_crit)


def _check_angle(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > math.pi) or np.any(~np.isfinite(theta)):
        raise ValueError("bending angle must lie in [0, pi]")
    return theta


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError("eps_crit must lie in (0, 1)")


def wrinkle_angle(theta, eps_crit: float):
    """Wrinkled arc ``gamma0`` (rad) for bending angle ``theta`` in [0, pi].

    Zero below the onset angle; the arccos argument is clamped to [-1, 1].
    """
    _check_eps(eps_crit)
    th = _check_angle(theta)
    scalar = th.ndim == 0
    th = np.atleast_1d(th)
    onset = onset_angle(eps_crit)
    s = np.sin(th / 2.0)
    arg = np.clip(2.0 * eps_crit / np.where(s > 0, s, 1.0) - 1.0, -1.0, 1.0)
    gamma = np.where(th >= onset, np.arccos(arg), 0.0)
    return float(gamma[0]) if scalar else gamma


def _ratio_from_complement(x: torch.Tensor) -> torch.Tensor:
    """Moment over pi P R^3 as a function of ``x = pi - gamma0``."""
    small = x < _SERIES_BELOW
    xe = torch.where(small, torch.full_like(x, _SERIES_BELOW), x)
    num = 2.0 * xe - torch.sin(2.0 * xe)
    den = torch.sin(xe) - xe * torch.cos(xe)
    exact = num / (4.0 * den)
    xs = torch.where(small, x, torch.zeros_like(x))
    x2 = xs * xs
    num_s = 4.0 / 3.0 - x2 * (32.0 / 120.0 - x2 * (128.0 / 5040.0 - x2 * (512.0 / 362880.0)))
    den_s = 1.0 / 3.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 840.0 - x2 * (1.0 / 45360.0)))
    series = num_s / (4.0 * den_s)
    return torch.where(small, series, exact)


def wrinkling_ratio_t(theta_abs: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Differentiable moment ratio M / (pi P R^3) for ``theta_abs`` in [0, pi]."""
    onset = 2.0 * torch.asin(eps)
    wrinkled = theta_abs >= onset
    th_w = torch.where(wrinkled, theta_abs, torch.ones_like(theta_abs) * math.pi)
    s = torch.sin(th_w / 2.0)
    arg = torch.clamp(2.0 * eps / s - 1.0, -_ARG_CLAMP, _ARG_CLAMP)
    x = torch.acos(-arg)
    ratio_w = _ratio_from_complement(x)
    ratio_w = torch.where(x < 1e-6, torch.ones_like(ratio_w), ratio_w)
    ratio_lin = 0.5 * theta_abs / onset
    return torch.where(wrinkled, ratio_w, ratio_lin)


def _as_t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def wrinkling_moment(theta, params: WrinklingParams):
    """Restoring moment (N m) of the wrinkling model at bending angle ``theta``."""
    th = _check_angle(theta)
    eps = params.eps_crit
    _check_eps(eps)
    ratio = wrinkling_ratio_t(_as_t(th), _as_t(eps)).numpy()
    out = params.full_moment * ratio
    return float(out) if np.ndim(out) == 0 else out


def moment_from_wrinkle_angle(gamma0, pressure: float = 1.0, tube_radius: float = 1.0):
    """Closed-form moment for a given wrinkled arc ``gamma0`` in [0, pi]."""
    g = np.asarray(gamma0, dtype=float)
    ratio = _ratio_from_complement(_as_t(math.pi - g)).numpy()
    ratio = np.where(math.pi - g < 1e-6, 1.0, ratio)
    out = math.pi * pressure * tube_radius**3 * ratio
    return float(out) if np.ndim(out) == 0 else out


def wrinkling_moment_derivative(theta, params: WrinklingParams):
    """Analytic dM/dtheta of :func:`wrinkling_moment` (undefined exactly at onset)."""
    th = np.atleast_1d(_check_angle(theta)).astype(float)
    eps = params.eps_crit
    onset = onset_angle(eps)
    full = params.full_moment
    out = np.full_like(th, 0.5 * full / onset)
    w = th > onset
    if np.any(w):
        t = th[w]
        s, c = np.sin(t / 2.0), np.cos(t / 2.0)
        arg = 2.0 * eps / s - 1.0
        dargs = -eps * c / s**2
        x = np.arccos(np.clip(-arg, -1.0, 1.0))
        dx = dargs / np.sqrt(np.maximum(1.0 - arg * arg, 1e-300))
        num = 2.0 * x - np.sin(2.0 * x)
        den = np.sin(x) - x * np.cos(x)
        dnum = 2.0 - 2.0 * np.cos(2.0 * x)
        dden = x * np.sin(x)
        dratio = (dnum * den - num * dden) / (4.0 * den * den)
        out[w] = full * dratio * dx
    return float(out[0]) if np.ndim(theta) == 0 else out


def mlp_forward_t(theta: torch.Tensor, w1, b1, w2, b2) -> torch.Tensor:
    """Perceptron moment for joint angles ``theta``.

    Weight tensors carry the hidden units on their last axis and must
    broadcast against ``theta[..., None]``; ``b2`` broadcasts against ``theta``.
    """
    h = torch.tanh(theta.unsqueeze(-1) * w1 + b1)
    prod = h * w2
    # sequential sum keeps results independent of the batch layout
    out = b2 + prod[..., 0]
    for j in range(1, prod.shape[-1]):
        out = out + prod[..., j]
    return out


def restoring_moment_t(kind: str, theta: torch.Tensor, coeffs: dict) -> torch.Tensor:
    """Signed restoring moment K(theta) for a batch of joint angles.

    ``coeffs`` holds tensors broadcastable against ``theta`` of shape
    ``(batch, joints)``: ``k`` for linear, ``eps``/``full`` for wrinkling,
    ``w1``/``b1``/``w2``/``b2`` for the perceptron.
    """
    if kind == "linear":
        return coeffs["k"] * theta
    if kind == "wrinkling":
        mag = coeffs["full"] * wrinkling_ratio_t(theta.abs(), coeffs["eps"])
        return torch.sign(theta) * mag
    if kind == "mlp":
        return mlp_forward_t(theta, coeffs["w1"], coeffs["b1"], coeffs["w2"], coeffs["b2"])
    raise ValueError(f"unknown stiffness model {kind!r}")


def model_coeffs(model: StiffnessModel) -> dict:
    """Torch coefficient tensors for a single stiffness model."""
    if isinstance(model, LinearStiffnessParams):
        return {"k": _as_t(model.k)}
    if isinstance(model, WrinklingParams):
        return {"eps": _as_t(model.eps_crit), "full": _as_t(model.full_moment)}
    if isinstance(model, NeuralStiffnessParams):
        return {"w1": _as_t(model.w1), "b1": _as_t(model.b1), "w2": _as_t(model.w2), "b2": _as_t(model.b2)}
    raise TypeError(f"not a stiffness model: {model!r}")


def moment(model: StiffnessModel, theta, theta_dot=0.0, damping: float = 0.0):
    """Joint torque ``-K(theta) - c * theta_dot`` (N m).

    Linear and wrinkling moments are odd in ``theta``; the perceptron is
    evaluated on the signed angle as-is.
    """
    th = np.asarray(theta, dtype=float)
    if np.any(np.abs(th) > math.pi):
        raise ValueError("joint angle must lie in [-pi, pi]")
    k = restoring_moment_t(model.kind, _as_t(th), model_coeffs(model)).numpy()
    out = -k - damping * np.asarray(theta_dot, dtype=float)
    return float(out) if np.ndim(out) == 0 else out
