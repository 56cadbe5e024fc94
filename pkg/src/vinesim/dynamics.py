"""Maximal-coordinate vine model: state, constraints, forces and the step QP.

Each virtual link ``k`` carries the pose ``(x, y, theta)`` of its center.
Consecutive full links are pinned at the point half a segment ahead of one
center and half a segment behind the next. The distal (tip) link is attached
to its predecessor only through the growth constraint, which drives the
separation of the two centers at the commanded growth rate. The base link is
pinned to the scene's base pose and is not a decision variable.

One time step solves for the next velocities::

    minimize    1/2 v'Mv - v'(M v_k + F dt)
    subject to  c(q_k)/dt + J v = 0                  (revolute joints)
                (s(q_k) - tip)/dt + D v - u = 0       (growth)
                a(q_k)/dt + T v = 0                   (tip alignment)
                gap(q_k)/dt + L v >= 0                (contacts)

All rows are divided by ``dt`` so the position residuals act as a
full-strength Baumgarte correction.

The public functions below work on one robot with numpy arrays. The engine
uses the batched torch kernels (names ending in ``_t``), which pad every robot
to a fixed link capacity and a fixed number of contact slots per link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import torch

from . import stiffness as stf
from .qpdiff import QPProblem
from .scene import VERTEX, Scene, obstacle_features

DTYPE = torch.float64
MIN_SEPARATION = 1e-9


@dataclass
class VineState:
    """Pose and velocity of every link, padded to a fixed capacity.

    ``q`` and ``v`` have shape ``(capacity, 3)``; rows ``>= n`` are unused.
    ``tip_length`` is the center separation of the distal pair.
    """

    q: np.ndarray
    v: np.ndarray
    n: int
    d_segment: float
    tip_length: float
    flags: dict = field(default_factory=dict)

    @property
    def capacity(self) -> int:
        return len(self.q)

    @property
    def length(self) -> float:
        """Center-to-center length from base to tip."""
        return (self.n - 2) * self.d_segment + float(self.tip_length)

    def positions(self) -> np.ndarray:
        return np.asarray(self.q)[: self.n, :2]

    def copy(self) -> "VineState":
        return VineState(np.array(self.q, dtype=float), np.array(self.v, dtype=float), int(self.n),
                         float(self.d_segment), float(self.tip_length), dict(self.flags))

    def padded(self, capacity: int) -> "VineState":
        if capacity < self.n:
            raise ValueError(f"capacity {capacity} is below the active link count {self.n}")
        q = np.zeros((capacity, 3))
        v = np.zeros((capacity, 3))
        k = min(capacity, self.capacity)
        q[:k] = np.asarray(self.q)[:k]
        v[:k] = np.asarray(self.v)[:k]
        q[self.n:] = 0.0
        v[self.n:] = 0.0
        return VineState(q, v, self.n, self.d_segment, self.tip_length, dict(self.flags))

    @classmethod
    def straight(cls, base_pose, n: int, d_segment: float, tip_length: Optional[float] = None,
                 capacity: Optional[int] = None, angle: Optional[float] = None) -> "VineState":
        """Straight vine at rest leaving ``base_pose`` along ``angle`` (default: base heading)."""
        if n < 2:
            raise ValueError("a vine needs at least two links")
        tip = d_segment / 2.0 if tip_length is None else float(tip_length)
        capacity = n if capacity is None else capacity
        x0, y0, th0 = (float(v) for v in base_pose)
        th = th0 if angle is None else float(angle)
        q = np.zeros((capacity, 3))
        offsets = [k * d_segment for k in range(n - 1)] + [(n - 2) * d_segment + tip]
        for k, s in enumerate(offsets):
            q[k] = (x0 + s * math.cos(th), y0 + s * math.sin(th), th)
        return cls(q, np.zeros((capacity, 3)), n, float(d_segment), tip)

    @classmethod
    def from_angles(cls, base_pose, joint_angles, d_segment: float, tip_length: Optional[float] = None,
                    capacity: Optional[int] = None) -> "VineState":
        """Vine at rest whose joints (base first) bend by ``joint_angles``.

        The chain has ``len(joint_angles) + 1`` links and satisfies every
        revolute and tip alignment constraint exactly.
        """
        angles = [float(a) for a in joint_angles]
        n = len(angles) + 1
        if n < 2:
            raise ValueError("need at least one joint angle")
        tip = d_segment / 2.0 if tip_length is None else float(tip_length)
        capacity = n if capacity is None else capacity
        d = d_segment / 2.0
        q = np.zeros((capacity, 3))
        q[0] = [float(v) for v in base_pose]
        for k in range(1, n):
            th = q[k - 1, 2] + angles[k - 1]
            jx = q[k - 1, 0] + d * math.cos(q[k - 1, 2])
            jy = q[k - 1, 1] + d * math.sin(q[k - 1, 2])
            if k < n - 1:
                arm = d
            else:
                # tip center on its heading line through the joint at the given separation
                c = math.cos(angles[k - 1])
                arm = -d * c + math.sqrt(max(d * d * c * c - d * d + tip * tip, 0.0))
            q[k] = (jx + arm * math.cos(th), jy + arm * math.sin(th), th)
        return cls(q, np.zeros((capacity, 3)), n, float(d_segment), tip)


def check_state(state: VineState, constraint_tol: Optional[float] = None) -> None:
    """Raise ``ValueError`` if ``state`` violates its invariants."""
    if state.n < 2 or state.n > state.capacity:
        raise ValueError(f"link count {state.n} outside [2, {state.capacity}]")
    if not 0.0 < state.tip_length <= state.d_segment * (1.0 + 1e-9):
        raise ValueError("tip length must lie in (0, d_segment]")
    if constraint_tol is not None and state.n >= 3:
        res = revolute_residual(state.q, state.n, state.d_segment)
        if np.max(np.abs(res)) > constraint_tol:
            raise ValueError("revolute constraints violated beyond tolerance")


@dataclass
class PhysParams:
    """Physical parameters shared by every link of one robot."""

    m: float = 0.1
    I: float = 1e-3
    c_damp: float = 0.01
    u: float = 0.1
    stiffness: stf.StiffnessModel = field(default_factory=lambda: stf.LinearStiffnessParams(0.05))
    dt: float = 0.01
    collision_radius: Optional[float] = None

    def __post_init__(self):
        if self.m <= 0 or self.I <= 0:
            raise ValueError("mass and inertia must be positive")
        if self.c_damp < 0:
            raise ValueError("damping must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.collision_radius is not None and self.collision_radius <= 0:
            raise ValueError("collision radius must be positive")

    def radius(self, d_segment: float) -> float:
        return d_segment / 2.0 if self.collision_radius is None else float(self.collision_radius)


# ---------------------------------------------------------------------------
# single-robot reference functions (numpy)


def _joint_half(d_segment: float) -> float:
    return d_segment / 2.0


def revolute_residual(q, n: int, d_segment: float) -> np.ndarray:
    """Stacked pin-joint residuals for the ``n - 2`` full-link pairs.

    The joint between links ``k`` and ``k+1`` sits half a segment ahead of
    center ``k`` and half a segment behind center ``k+1``.
    """
    q = np.asarray(q, dtype=float)
    d = _joint_half(d_segment)
    k = np.arange(max(n - 2, 0))
    x, y, th = q[:, 0], q[:, 1], q[:, 2]
    rx = x[k] + d * np.cos(th[k]) - x[k + 1] + d * np.cos(th[k + 1])
    ry = y[k] + d * np.sin(th[k]) - y[k + 1] + d * np.sin(th[k + 1])
    return np.stack([rx, ry], axis=1).reshape(-1)


def revolute_jacobian(q, n: int, d_segment: float) -> sp.csr_matrix:
    """Jacobian of :func:`revolute_residual` w.r.t. all ``3n`` coordinates."""
    q = np.asarray(q, dtype=float)
    d = _joint_half(d_segment)
    rows, cols, vals = [], [], []
    for k in range(max(n - 2, 0)):
        a, b = 3 * k, 3 * (k + 1)
        sa, ca = math.sin(q[k, 2]), math.cos(q[k, 2])
        sb, cb = math.sin(q[k + 1, 2]), math.cos(q[k + 1, 2])
        rows += [2 * k] * 4 + [2 * k + 1] * 4
        cols += [a, a + 2, b, b + 2, a + 1, a + 2, b + 1, b + 2]
        vals += [1.0, -d * sa, -1.0, -d * sb, 1.0, d * ca, -1.0, d * cb]
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * max(n - 2, 0), 3 * n))


def _distal_pair(q, n):
    q = np.asarray(q, dtype=float)
    diff = q[n - 1, :2] - q[n - 2, :2]
    dist = math.sqrt(diff[0] ** 2 + diff[1] ** 2)
    return diff, dist


def growth_rate(q, v, n: int) -> float:
    """Rate of change of the distal pair's center separation (m/s)."""
    v = np.asarray(v, dtype=float)
    diff, dist = _distal_pair(q, n)
    dv = v[n - 1, :2] - v[n - 2, :2]
    return float((diff[0] * dv[0] + diff[1] * dv[1]) / max(dist, MIN_SEPARATION))


def growth_jacobian(q, n: int) -> np.ndarray:
    """Gradient of the distal separation w.r.t. all ``3n`` coordinates.

    ``growth_jacobian(q, n) @ v.ravel()`` equals :func:`growth_rate`.
    """
    diff, dist = _distal_pair(q, n)
    unit = diff / max(dist, MIN_SEPARATION)
    out = np.zeros(3 * n)
    out[3 * (n - 1): 3 * (n - 1) + 2] = unit
    out[3 * (n - 2): 3 * (n - 2) + 2] = -unit
    return out


def tip_alignment_residual(q, n: int, d_segment: float) -> float:
    """Signed offset of the tip center from its heading line through the
    predecessor's forward joint."""
    q = np.asarray(q, dtype=float)
    d = _joint_half(d_segment)
    xt, yt, tht = q[n - 1]
    xp, yp, thp = q[n - 2]
    rx = xt - xp - d * math.cos(thp)
    ry = yt - yp - d * math.sin(thp)
    return -math.sin(tht) * rx + math.cos(tht) * ry


def tip_alignment_jacobian(q, n: int, d_segment: float) -> np.ndarray:
    """Gradient of :func:`tip_alignment_residual` w.r.t. all ``3n`` coordinates."""
    q = np.asarray(q, dtype=float)
    d = _joint_half(d_segment)
    xt, yt, tht = q[n - 1]
    xp, yp, thp = q[n - 2]
    st, ct = math.sin(tht), math.cos(tht)
    rx = xt - xp - d * math.cos(thp)
    ry = yt - yp - d * math.sin(thp)
    out = np.zeros(3 * n)
    out[3 * (n - 1): 3 * n] = [-st, ct, -(ct * rx + st * ry)]
    out[3 * (n - 2): 3 * (n - 1)] = [st, -ct, -d * math.cos(tht - thp)]
    return out


def joint_angles(q, n: int) -> np.ndarray:
    """Relative angles ``theta[k+1] - theta[k]`` wrapped into [-pi, pi]."""
    th = np.asarray(q, dtype=float)[:n, 2]
    return _wrap(np.diff(th))


def _wrap(a):
    return a - 2.0 * math.pi * np.round(a / (2.0 * math.pi))


def assemble_forces(state: VineState, params: PhysParams) -> np.ndarray:
    """Generalised forces (length ``3n``) from joint stiffness and damping."""
    n = state.n
    q = np.asarray(state.q, dtype=float)[:n]
    v = np.asarray(state.v, dtype=float)[:n]
    dtheta = joint_angles(q, n)
    domega = np.diff(v[:, 2])
    model = params.stiffness
    coeffs = stf.model_coeffs(model)
    if model.kind == "linear" and coeffs["k"].dim() > 0:
        coeffs["k"] = coeffs["k"][: n - 1]
    tau = -stf.restoring_moment_t(model.kind, torch.as_tensor(dtheta, dtype=DTYPE), coeffs).numpy()
    tau = tau - params.c_damp * domega
    f = np.zeros((n, 3))
    f[1:, 2] += tau
    f[:-1, 2] -= tau
    return f.reshape(-1)


@dataclass
class StepProblem:
    """Velocity QP for one step of one robot (base link eliminated).

    ``eq_rows`` labels equality rows as ``("revolute", k)``, ``("growth", n-1)``
    or ``("alignment", n-1)``; ``ineq_rows``
    labels inequality rows as ``("contact", link, obstacle)``.
    """

    qp: QPProblem
    n: int
    dt: float
    eq_rows: list
    ineq_rows: list

    @property
    def Q(self):
        return self.qp.Q

    @property
    def lin(self):
        return self.qp.lin

    def velocities(self, z) -> np.ndarray:
        """Full ``(n, 3)`` velocity array with the pinned base prepended."""
        return np.vstack([np.zeros((1, 3)), np.asarray(z, dtype=float).reshape(self.n - 1, 3)])


def build_step_problem(state: VineState, params: PhysParams, contacts: Sequence, u_k: float) -> StepProblem:
    """Assemble the velocity QP for ``state`` with the given contact list.

    ``contacts`` comes from :func:`vinesim.scene.vine_contacts`; entries on the
    pinned base link are ignored.
    """
    n, dt, d_seg = state.n, params.dt, state.d_segment
    if n < 2:
        raise ValueError("need at least two links")
    q = np.asarray(state.q, dtype=float)[:n]
    v = np.asarray(state.v, dtype=float)[:n]
    nv = 3 * (n - 1)

    mass = np.tile([params.m, params.m, params.I], n - 1)
    force = assemble_forces(state, params)[3:]
    Q = np.diag(mass)
    lin = -(mass * v[1:].reshape(-1) + force * dt)

    J = revolute_jacobian(q, n, d_seg).toarray()[:, 3:]
    c = revolute_residual(q, n, d_seg)
    D = growth_jacobian(q, n)[3:]
    _, sep = _distal_pair(q, n)
    T = tip_alignment_jacobian(q, n, d_seg)[3:]
    A = np.vstack([J.reshape(-1, nv), D[None, :], T[None, :]])
    b = np.concatenate([-c / dt, [u_k - (sep - state.tip_length) / dt,
                                  -tip_alignment_residual(q, n, d_seg) / dt]])
    eq_rows = [("revolute", k) for k in range(n - 2) for _ in (0, 1)] + [("growth", n - 1), ("alignment", n - 1)]

    G_rows, h_rows, ineq_rows = [], [], []
    for con in contacts:
        if con.link == 0 or con.link >= n:
            continue
        row = np.zeros(nv)
        row[3 * (con.link - 1): 3 * (con.link - 1) + 2] = -np.asarray(con.normal)
        G_rows.append(row)
        h_rows.append(con.gap / dt)
        ineq_rows.append(("contact", con.link, con.obstacle))
    G = np.array(G_rows).reshape(-1, nv)
    h = np.array(h_rows)
    if A.shape[1] != nv or G.shape[1] != nv or len(b) != len(A):
        raise ValueError("inconsistent step problem dimensions")
    return StepProblem(QPProblem(Q, lin, A, b, G, h), n, dt, eq_rows, ineq_rows)


# ---------------------------------------------------------------------------
# batched torch kernels used by the engine


class BatchState(NamedTuple):
    q: torch.Tensor  # (B, N, 3)
    v: torch.Tensor  # (B, N, 3)
    n: np.ndarray  # (B,) active link counts
    tip: torch.Tensor  # (B,)
    d_segment: torch.Tensor  # (B,)

    @property
    def batch(self) -> int:
        return self.q.shape[0]

    @property
    def capacity(self) -> int:
        return self.q.shape[1]

    @classmethod
    def from_states(cls, states: Sequence[VineState], capacity: int) -> "BatchState":
        padded = [s.padded(capacity) for s in states]
        return cls(
            torch.as_tensor(np.stack([np.asarray(s.q, dtype=float) for s in padded]), dtype=DTYPE),
            torch.as_tensor(np.stack([np.asarray(s.v, dtype=float) for s in padded]), dtype=DTYPE),
            np.array([s.n for s in padded], dtype=int),
            torch.as_tensor([float(s.tip_length) for s in padded], dtype=DTYPE),
            torch.as_tensor([float(s.d_segment) for s in padded], dtype=DTYPE),
        )

    def element(self, i: int, detach: bool = True) -> VineState:
        conv = (lambda t: t.detach().numpy().copy()) if detach else (lambda t: t)
        tip = float(self.tip[i]) if detach else self.tip[i]
        return VineState(conv(self.q[i]), conv(self.v[i]), int(self.n[i]), float(self.d_segment[i]), tip)


class BatchParams:
    """Per-element physical parameters as torch tensors of shape ``(B,)``.

    A single :class:`PhysParams` is shared by every element; its leaves are
    scalars so gradients accumulate across the batch. Names listed in
    ``grad`` become leaf tensors with ``requires_grad`` (see :attr:`leaves`).
    """

    scalar_names = ("m", "I", "c_damp", "u")

    def __init__(self, params, batch: int, joints: int, grad: Sequence[str] = ()):
        shared = isinstance(params, PhysParams)
        plist = [params] * batch if shared else list(params)
        if len(plist) != batch:
            raise ValueError("need one parameter set per batch element")
        kinds = {p.stiffness.kind for p in plist}
        if len(kinds) != 1:
            raise ValueError("all batch elements must use the same stiffness model")
        dts = {float(p.dt) for p in plist}
        if len(dts) != 1:
            raise ValueError("all batch elements must share dt")
        self.kind = kinds.pop()
        self.dt = dts.pop()
        self.batch = batch
        self.joints = joints
        self.leaves: dict = {}
        grad = set(grad)

        def leaf(name, values):
            arr = np.asarray(values[0] if shared else values, dtype=float)
            t = torch.tensor(arr, dtype=DTYPE, requires_grad=name in grad)
            if name in grad:
                self.leaves[name] = t
            return t

        for name in self.scalar_names:
            t = leaf(name, [float(getattr(p, name)) for p in plist])
            setattr(self, name, t.expand(batch) if shared else t)
        self._radius = [p.collision_radius for p in plist]

        coeffs = {}
        if self.kind == "linear":
            ks = [np.asarray(p.stiffness.k, dtype=float) for p in plist]
            if all(k.ndim == 0 for k in ks):
                k = leaf("k", [float(k) for k in ks])
                coeffs["k"] = (k.expand(batch) if shared else k)[:, None]
            else:
                per = np.stack([np.broadcast_to(k, (joints,)) if k.ndim == 0 else k[:joints] for k in ks])
                if per.shape[1] < joints:
                    raise ValueError("per-joint stiffness vector shorter than the joint count")
                k = leaf("k", per)
                coeffs["k"] = k.expand(batch, joints) if shared else k
        elif self.kind == "wrinkling":
            eps = leaf("eps_crit", [p.stiffness.eps_crit for p in plist])
            coeffs["eps"] = (eps.expand(batch) if shared else eps)[:, None]
            full = torch.as_tensor([p.stiffness.full_moment for p in plist], dtype=DTYPE)
            coeffs["full"] = full[:, None]
        else:
            for name in ("w1", "b1", "w2"):
                t = leaf("mlp_" + name, [getattr(p.stiffness, name) for p in plist])
                coeffs[name] = (t.expand(batch, -1) if shared else t)[:, None, :]
            b2 = leaf("mlp_b2", [p.stiffness.b2 for p in plist])
            coeffs["b2"] = (b2.expand(batch) if shared else b2)[:, None]
        self.coeffs = coeffs

    def radius(self, d_segment: torch.Tensor) -> torch.Tensor:
        r = [d / 2.0 if rad is None else rad for rad, d in zip(self._radius, d_segment.tolist())]
        return torch.as_tensor(r, dtype=DTYPE)


def wrap_t(a: torch.Tensor) -> torch.Tensor:
    return a - 2.0 * math.pi * torch.round(a / (2.0 * math.pi))


def joint_torques_t(bs: BatchState, bp: BatchParams) -> torch.Tensor:
    """Joint torques ``(B, N-1)``; joints beyond the active chain are zero."""
    th = bs.q[:, :, 2]
    om = bs.v[:, :, 2]
    dth = wrap_t(th[:, 1:] - th[:, :-1])
    dom = om[:, 1:] - om[:, :-1]
    k = torch.arange(bs.capacity - 1)
    active = torch.as_tensor(k[None, :].numpy() <= (bs.n[:, None] - 2), dtype=DTYPE)
    tau = -stf.restoring_moment_t(bp.kind, dth, bp.coeffs) - bp.c_damp[:, None] * dom
    return tau * active


def forces_t(bs: BatchState, bp: BatchParams) -> torch.Tensor:
    """Generalised forces ``(B, N, 3)``."""
    tau = joint_torques_t(bs, bp)
    zero = torch.zeros_like(tau[:, :1])
    f_th = torch.cat([zero, tau], dim=1) - torch.cat([tau, zero], dim=1)
    fz = torch.zeros_like(f_th)
    return torch.stack([fz, fz, f_th], dim=2)


def revolute_residual_t(q: torch.Tensor, d_segment: torch.Tensor) -> torch.Tensor:
    """Residuals ``(B, N-2, 2)`` for every padded pair ``(k, k+1)``, k < N-2."""
    d = (d_segment / 2.0)[:, None]
    x, y, th = q[:, :, 0], q[:, :, 1], q[:, :, 2]
    c, s = torch.cos(th), torch.sin(th)
    rx = x[:, :-2] + d * c[:, :-2] - x[:, 1:-1] + d * c[:, 1:-1]
    ry = y[:, :-2] + d * s[:, :-2] - y[:, 1:-1] + d * s[:, 1:-1]
    return torch.stack([rx, ry], dim=2)


def revolute_mask(n: np.ndarray, capacity: int) -> np.ndarray:
    return np.arange(capacity - 2)[None, :] <= (n[:, None] - 3)


class ContactSlots(NamedTuple):
    """Contact candidates in fixed slots ``(B, N-1, K)`` for links 1..N-1."""

    valid: np.ndarray
    obstacle: np.ndarray
    kind: np.ndarray
    anchor: np.ndarray  # (B, N-1, K, 2)
    edge_normal: np.ndarray  # (B, N-1, K, 2)
    overflow: np.ndarray  # (B,) candidates dropped for lack of slots

    @property
    def count(self) -> np.ndarray:
        return self.valid.reshape(len(self.valid), -1).sum(axis=1)


def select_contacts(q: np.ndarray, n: np.ndarray, scene: Scene, radius: np.ndarray,
                    activation: np.ndarray, slots: int) -> ContactSlots:
    """Pick up to ``slots`` closest obstacles per link whose gap is below ``activation``."""
    B, N = q.shape[:2]
    shape = (B, N - 1, slots)
    out = ContactSlots(
        np.zeros(shape, dtype=bool), np.zeros(shape, dtype=int), np.zeros(shape, dtype=int),
        np.zeros(shape + (2,)), np.zeros(shape + (2,)), np.zeros(B, dtype=int),
    )
    if not scene.obstacles or slots == 0:
        return out
    feats = obstacle_features(q[:, 1:, :2], scene.obstacles)  # (B, N-1, O)
    gap = feats.distance - radius[:, None, None]
    link_active = (np.arange(1, N)[None, :] < n[:, None])[:, :, None]
    cand = (gap < activation[:, None, None]) & link_active
    key = np.where(cand, gap, np.inf)
    order = np.argsort(key, axis=2, kind="stable")
    O = key.shape[2]
    take = order[:, :, : min(slots, O)]
    k = take.shape[2]
    bi = np.arange(B)[:, None, None]
    li = np.arange(N - 1)[None, :, None]
    out.valid[:, :, :k] = cand[bi, li, take]
    out.obstacle[:, :, :k] = take
    out.kind[:, :, :k] = feats.kind[bi, li, take]
    out.anchor[:, :, :k] = feats.anchor[bi, li, take]
    out.edge_normal[:, :, :k] = feats.edge_normal[bi, li, take]
    out.overflow[:] = np.maximum(cand.sum(axis=2) - slots, 0).sum(axis=1)
    return out


def contact_geometry_t(q: torch.Tensor, slots: ContactSlots, radius: torch.Tensor):
    """Differentiable gaps ``(B, N-1, K)`` and unit normals ``(..., 2)`` for filled slots."""
    p = q[:, 1:, None, :2]
    anchor = torch.as_tensor(slots.anchor, dtype=DTYPE)
    en = torch.as_tensor(slots.edge_normal, dtype=DTYPE)
    is_v = torch.as_tensor(slots.kind == VERTEX)
    dx = p - anchor
    sq = dx[..., 0] * dx[..., 0] + dx[..., 1] * dx[..., 1]
    vdist = torch.sqrt(torch.where(is_v, sq, torch.ones_like(sq)))
    normal = torch.where(is_v[..., None], dx / vdist[..., None], en)
    face = dx[..., 0] * en[..., 0] + dx[..., 1] * en[..., 1]
    gap = torch.where(is_v, vdist, face) - radius[:, None, None]
    return gap, normal


class _Pattern:
    """Static sparsity pattern of the padded revolute and contact rows."""

    _cache: dict = {}

    @classmethod
    def get(cls, N: int, K: int) -> "_Pattern":
        key = (N, K)
        if key not in cls._cache:
            cls._cache[key] = cls(N, K)
        return cls._cache[key]

    def __init__(self, N: int, K: int):
        J = N - 2
        k = np.arange(J)
        k1 = k[1:]
        # revolute entries; link k columns exist only for k >= 1 (base eliminated)
        self.rev_rows = np.concatenate([
            2 * k1, 2 * k1 + 1, 2 * k1, 2 * k1 + 1,
            2 * k, 2 * k + 1, 2 * k, 2 * k + 1,
            2 * k, 2 * k + 1,
        ])
        self.rev_cols = np.concatenate([
            3 * (k1 - 1), 3 * (k1 - 1) + 1, 3 * (k1 - 1) + 2, 3 * (k1 - 1) + 2,
            3 * k, 3 * k + 1, 3 * k + 2, 3 * k + 2,
            3 * (k + 1), 3 * (k + 1) + 1,
        ])
        j = np.repeat(np.arange(1, N), K)
        slot = np.arange((N - 1) * K)
        self.con_rows = np.concatenate([slot, slot])
        self.con_cols = np.concatenate([3 * (j - 1), 3 * (j - 1) + 1])


class StepData(NamedTuple):
    Q: torch.Tensor
    lin: torch.Tensor
    A: torch.Tensor
    b: torch.Tensor
    G: torch.Tensor
    h: torch.Tensor
    separation: torch.Tensor
    growth_dir: torch.Tensor  # (B, 2) unit vector pred -> tip


def assemble_step_t(bs: BatchState, bp: BatchParams, slots: ContactSlots, u: torch.Tensor,
                    dt: float) -> StepData:
    """Padded step QPs for a batch.

    Sizes depend only on the capacity ``N`` and slots per link ``K``:
    ``3(N-1)`` variables, ``2(N-2) + 2`` equalities, ``(N-1) K`` inequalities.
    Inactive joints pin the x/y velocity of an inactive link; empty contact
    slots become ``0 <= 1``.
    """
    B, N = bs.batch, bs.capacity
    K = slots.valid.shape[2]
    nv = 3 * (N - 1)
    pat = _Pattern.get(N, K)
    bidx = np.arange(B)

    mass = torch.stack([bp.m, bp.m, bp.I], dim=1)  # (B, 3)
    mdiag = mass.repeat(1, N - 1)
    Q = torch.diag_embed(mdiag)
    F = forces_t(bs, bp)
    lin = -(mdiag * bs.v[:, 1:].reshape(B, nv) + F[:, 1:].reshape(B, nv) * dt)

    # revolute rows
    d = (bs.d_segment / 2.0)[:, None]
    th = bs.q[:, :, 2]
    sn, cs = torch.sin(th), torch.cos(th)
    mask = torch.as_tensor(revolute_mask(bs.n, N), dtype=DTYPE)
    m1 = mask[:, 1:]
    vals = torch.cat([
        m1, m1, -d * sn[:, 1:N - 2] * m1, d * cs[:, 1:N - 2] * m1,
        -mask, -mask, -d * sn[:, 1:N - 1] * mask, d * cs[:, 1:N - 1] * mask,
        1.0 - mask, 1.0 - mask,
    ], dim=1)
    A_rev = torch.zeros(B, 2 * (N - 2), nv, dtype=DTYPE)
    A_rev[:, pat.rev_rows, pat.rev_cols] = vals
    res = revolute_residual_t(bs.q, bs.d_segment)
    b_rev = (-(res / dt) * mask[:, :, None]).reshape(B, 2 * (N - 2))

    # growth row
    t = bs.n - 1
    pr = bs.n - 2
    diff = bs.q[bidx, t, :2] - bs.q[bidx, pr, :2]
    sep = torch.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
    unit = diff / torch.clamp(sep, min=MIN_SEPARATION)[:, None]
    has_pred = torch.as_tensor(pr >= 1, dtype=DTYPE)
    pcol = np.where(pr >= 1, 3 * (pr - 1), 3 * (t - 1))
    row = torch.zeros(B, nv, dtype=DTYPE)
    row = row.index_put((torch.as_tensor(bidx), torch.as_tensor(3 * (t - 1))), unit[:, 0])
    row = row.index_put((torch.as_tensor(bidx), torch.as_tensor(3 * (t - 1) + 1)), unit[:, 1])
    row = row.index_put((torch.as_tensor(bidx), torch.as_tensor(pcol)), -unit[:, 0] * has_pred, accumulate=True)
    row = row.index_put((torch.as_tensor(bidx), torch.as_tensor(pcol + 1)), -unit[:, 1] * has_pred, accumulate=True)
    b_grow = u - (sep - bs.tip) / dt

    # tip alignment row: the tip center stays on its own heading line through
    # the predecessor's forward joint
    qt, qp = bs.q[bidx, t], bs.q[bidx, pr]
    dd = d[:, 0]
    st, ct = sn[bidx, t], cs[bidx, t]
    sp_, cp_ = sn[bidx, pr], cs[bidx, pr]
    rel_x = qt[:, 0] - qp[:, 0] - dd * cp_
    rel_y = qt[:, 1] - qp[:, 1] - dd * sp_
    lateral = -st * rel_x + ct * rel_y
    along = ct * rel_x + st * rel_y
    arow = torch.zeros(B, nv, dtype=DTYPE)
    tcol = torch.as_tensor(3 * (t - 1))
    bt = torch.as_tensor(bidx)
    arow = arow.index_put((bt, tcol), -st)
    arow = arow.index_put((bt, tcol + 1), ct)
    arow = arow.index_put((bt, tcol + 2), -along)
    pc = torch.as_tensor(pcol)
    arow = arow.index_put((bt, pc), st * has_pred, accumulate=True)
    arow = arow.index_put((bt, pc + 1), -ct * has_pred, accumulate=True)
    arow = arow.index_put((bt, pc + 2), -dd * (ct * cp_ + st * sp_) * has_pred, accumulate=True)
    b_align = -lateral / dt

    A = torch.cat([A_rev, row[:, None, :], arow[:, None, :]], dim=1)
    b = torch.cat([b_rev, b_grow[:, None], b_align[:, None]], dim=1)

    # contact rows: -n . v <= gap / dt
    radius = bp.radius(bs.d_segment)
    gap, normal = contact_geometry_t(bs.q, slots, radius)
    valid = torch.as_tensor(slots.valid, dtype=DTYPE)
    gvals = torch.cat([(-normal[..., 0] * valid).reshape(B, -1), (-normal[..., 1] * valid).reshape(B, -1)], dim=1)
    G = torch.zeros(B, (N - 1) * K, nv, dtype=DTYPE)
    G[:, pat.con_rows, pat.con_cols] = gvals
    h = torch.where(valid.reshape(B, -1) > 0, (gap / dt).reshape(B, -1), torch.ones(B, (N - 1) * K, dtype=DTYPE))
    return StepData(Q, lin, A, b, G, h, sep, unit)
