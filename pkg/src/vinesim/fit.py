"""Parameter identification: wrinkling criterion fits and trajectory fitting.

Trajectory fitting uses a teacher-forced objective: every observed frame is
turned into a simulator state, stepped once, and compared with the next
observed frame. All frames of all training trials form one batch of one-step
rollouts, so a loss evaluation is a single batched QP solve plus its backward
pass through :func:`vinesim.engine.loss_gradient`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.optimize import minimize_scalar

from . import engine
from . import stiffness as stf
from .dynamics import PhysParams, VineState
from .engine import RolloutConfig
from .scene import Scene, load_scene

log = logging.getLogger(__name__)

EPS_RANGE = (1e-4, 0.999)
MIN_GROUP_SIZE = 10


class FitError(ValueError):
    """Data cannot support the requested fit."""


class FitDivergence(RuntimeError):
    def __init__(self, message: str, report: "FitReport"):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# bending-moment data and the eps_crit fits


@dataclass
class MomentGroup:
    pressure: float
    theta: np.ndarray
    moment: np.ndarray


@dataclass
class MomentDataset:
    groups: list

    @classmethod
    def from_records(cls, pressure, theta, moment, min_samples: int = MIN_GROUP_SIZE) -> "MomentDataset":
        p = np.asarray(pressure, dtype=float)
        th = np.asarray(theta, dtype=float)
        mo = np.asarray(moment, dtype=float)
        if not (p.shape == th.shape == mo.shape):
            raise FitError("pressure, theta and moment columns differ in length")
        if np.any((th < 0) | (th > math.pi)):
            raise FitError("bending angles must lie in [0, pi]")
        if not np.all(np.isfinite(mo)):
            raise FitError("moments must be finite")
        groups = []
        for value in np.unique(p):
            sel = p == value
            if sel.sum() < min_samples:
                raise FitError(f"pressure {value:g} Pa has {sel.sum()} samples, need {min_samples}")
            order = np.argsort(th[sel], kind="stable")
            groups.append(MomentGroup(float(value), th[sel][order], mo[sel][order]))
        return cls(groups)


def load_moments(path, min_samples: int = MIN_GROUP_SIZE) -> MomentDataset:
    """Read a ``pressure_pa, theta_rad, moment_nm`` CSV."""
    cols = {"pressure_pa": [], "theta_rad": [], "moment_nm": []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(cols) - set(reader.fieldnames or ())
        if missing:
            raise FitError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                for key in cols:
                    cols[key].append(float(row[key]))
            except (TypeError, ValueError):
                raise FitError(f"{path}: line {lineno}: non-numeric field") from None
    return MomentDataset.from_records(cols["pressure_pa"], cols["theta_rad"], cols["moment_nm"], min_samples)


def write_moments(path, pressure, theta, moment) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pressure_pa", "theta_rad", "moment_nm"])
        for row in zip(pressure, theta, moment):
            w.writerow([f"{v:.17g}" for v in row])


def _sse_grid(theta: np.ndarray, moment: np.ndarray, full: float, eps: np.ndarray) -> np.ndarray:
    th = torch.as_tensor(theta, dtype=stf.DTYPE)[None, :]
    ep = torch.as_tensor(eps, dtype=stf.DTYPE)[:, None]
    pred = full * stf.wrinkling_ratio_t(th.expand(len(eps), -1), ep.expand(-1, len(theta))).numpy()
    return np.sum((pred - moment[None, :]) ** 2, axis=1)


def lowest_argmin(values) -> int:
    """Index of the smallest value; ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    return int(np.flatnonzero(values == values.min())[0])


@dataclass
class EpsFit:
    pressure: float
    eps_crit: float
    sse: float


def fit_eps_crit(group: MomentGroup, tube_radius: float, grid_size: int = 2001, xtol: float = 1e-9) -> EpsFit:
    """Least-squares eps_crit for one pressure group.

    A log-spaced grid brackets the minimum and a bounded scalar search refines
    it. Among equal residuals the lower eps is kept.
    """
    if tube_radius <= 0:
        raise FitError("tube radius must be positive")
    theta = np.asarray(group.theta, dtype=float)
    moment = np.asarray(group.moment, dtype=float)
    full = math.pi * group.pressure * tube_radius**3
    grid = np.geomspace(EPS_RANGE[0], EPS_RANGE[1], grid_size)
    sse = _sse_grid(theta, moment, full, grid)
    spread = sse.max() - sse.min()
    if not np.isfinite(spread) or spread <= 1e-14 * max(sse.max(), 1e-300):
        raise FitError(f"moment data at {group.pressure:g} Pa does not constrain eps_crit")
    i = lowest_argmin(sse)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]

    def objective(e):
        return float(_sse_grid(theta, moment, full, np.array([e]))[0])

    best_e, best_v = float(grid[i]), float(sse[i])
    if hi > lo:
        res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
        if res.fun < best_v:
            best_e, best_v = float(res.x), float(res.fun)
    return EpsFit(group.pressure, best_e, best_v)


@dataclass
class EpsPolynomial:
    coefficients: np.ndarray  # c0..c3, pressure in Pa
    residuals: np.ndarray
    pressure_range: tuple

    def __call__(self, pressure):
        p = np.asarray(pressure, dtype=float)
        c = self.coefficients
        return c[0] + p * (c[1] + p * (c[2] + p * c[3]))


def fit_eps_polynomial(pairs: Sequence) -> EpsPolynomial:
    """Ordinary least-squares cubic eps_crit(P)."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    p, e = arr[:, 0], arr[:, 1]
    if len(np.unique(p)) < 4:
        raise FitError("a cubic needs at least 4 distinct pressures")
    scale = float(np.max(np.abs(p)))
    s = p / scale
    V = np.stack([np.ones_like(s), s, s**2, s**3], axis=1)
    coef_s, _, rank, _ = np.linalg.lstsq(V, e, rcond=None)
    if rank < 4:
        raise FitError("rank-deficient design matrix")
    coef = coef_s / scale ** np.arange(4)
    resid = e - V @ coef_s
    return EpsPolynomial(coef, resid, (float(p.min()), float(p.max())))


# ---------------------------------------------------------------------------
# trajectory data


@dataclass
class Trial:
    name: str
    scene: Scene
    frame_interval: float
    d_segment: float
    frames: list  # (n, 3) arrays, theta column may be nan
    role: str = "train"


@dataclass
class TrajectoryDataset:
    trials: list

    def training(self) -> list:
        return [t for t in self.trials if t.role == "train"]

    def held_out(self) -> list:
        return [t for t in self.trials if t.role == "test"]


def load_trajectory_dataset(path) -> TrajectoryDataset:
    """Read a manifest JSON listing trajectory CSVs, scenes and frame intervals.

    Manifest layout::

        {"trials": [{"trajectory": "run.csv", "trial_id": 0, "scene": "scene.json",
                     "frame_interval_s": 0.01, "d_segment_m": 0.1, "role": "train"}]}

    Relative paths resolve against the manifest's directory. Top-level
    ``frame_interval_s`` / ``d_segment_m`` act as defaults.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FitError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    root = path.parent
    trials = []
    cache: dict = {}
    for i, entry in enumerate(data.get("trials", [])):
        try:
            csv_path = root / entry["trajectory"]
            scene_path = root / entry["scene"]
            dt = float(entry.get("frame_interval_s", data.get("frame_interval_s")))
            d_seg = float(entry.get("d_segment_m", data.get("d_segment_m")))
        except (KeyError, TypeError) as exc:
            raise FitError(f"{path}: trial {i}: missing or invalid field {exc}") from None
        if dt <= 0 or d_seg <= 0:
            raise FitError(f"{path}: trial {i}: frame interval and segment length must be positive")
        if csv_path not in cache:
            try:
                cache[csv_path] = engine.read_trajectories(csv_path)
            except ValueError as exc:
                raise FitError(str(exc)) from None
        runs = cache[csv_path]
        tid = int(entry.get("trial_id", 0))
        if tid not in runs:
            raise FitError(f"{path}: trial {i}: trial_id {tid} not in {csv_path.name}")
        frames = [arr for _, _, arr in runs[tid]]
        counts = [len(f) for f in frames]
        if any(b < a for a, b in zip(counts, counts[1:])):
            raise FitError(f"{path}: trial {i}: link counts decrease over frames")
        role = entry.get("role", "train")
        if role not in ("train", "test"):
            raise FitError(f"{path}: trial {i}: role must be 'train' or 'test'")
        trials.append(Trial(entry.get("name", f"trial{i}"), load_scene(scene_path), dt, d_seg, frames, role))
    if not trials:
        raise FitError(f"{path}: no trials listed")
    return TrajectoryDataset(trials)


def trial_from_trajectory(traj: engine.Trajectory, scene: Scene, dt: float, name: str = "trial",
                          role: str = "train") -> Trial:
    frames = [np.asarray(s.q, dtype=float)[: s.n].copy() for s in traj.states]
    return Trial(name, scene, dt, traj.states[0].d_segment, frames, role)


def reconstruct_theta(xy: np.ndarray, base_theta: float) -> np.ndarray:
    """Link headings from tracked centers (segment directions)."""
    n = len(xy)
    th = np.empty(n)
    th[0] = base_theta
    for k in range(1, n):
        a = xy[k - 1] if k == n - 1 else xy[k]
        b = xy[k] if k == n - 1 else xy[k + 1]
        th[k] = math.atan2(b[1] - a[1], b[0] - a[0])
    return th


@dataclass
class FramePairs:
    """Teacher-forcing inputs gathered from one or more trials."""

    states: list
    targets: list  # (n, 2) observed next-frame positions
    trial_index: np.ndarray
    scene: Scene
    dt: float
    skipped: int


def frame_pairs(trials: Sequence[Trial]) -> FramePairs:
    """One-step examples ``(frame i, finite-difference velocity) -> frame i+1``.

    Frames adjacent to a change in link count are skipped.
    """
    if not trials:
        raise FitError("no trials")
    scenes = {id(t.scene) for t in trials}
    dts = {t.frame_interval for t in trials}
    if len(dts) != 1:
        raise FitError("all fitted trials must share a frame interval")
    dt = dts.pop()
    scene = trials[0].scene
    if len(scenes) > 1 and any(t.scene.to_dict() != scene.to_dict() for t in trials):
        raise FitError("all fitted trials must share a scene")
    states, targets, owner = [], [], []
    skipped = 0
    for ti, trial in enumerate(trials):
        fr = trial.frames
        for i in range(1, len(fr) - 1):
            prev, cur, nxt = fr[i - 1], fr[i], fr[i + 1]
            if not (len(prev) == len(cur) == len(nxt)):
                skipped += 1
                continue
            n = len(cur)
            q = cur.copy()
            q_prev = prev.copy()
            if np.any(np.isnan(q[:, 2])):
                q[:, 2] = reconstruct_theta(q[:, :2], scene.base_pose[2])
            if np.any(np.isnan(q_prev[:, 2])):
                q_prev[:, 2] = reconstruct_theta(q_prev[:, :2], scene.base_pose[2])
            v = (q - q_prev) / dt
            v[0] = 0.0
            # the simulator advances the tip by the realized growth rate along the
            # previous distal axis; rebuild it the same way from the observations
            axis = q_prev[n - 1, :2] - q_prev[n - 2, :2]
            sep_prev = float(np.sqrt(axis @ axis))
            rate = float(axis @ (v[n - 1, :2] - v[n - 2, :2])) / max(sep_prev, 1e-9)
            tip = min(max(sep_prev + rate * dt, 1e-9), trial.d_segment)
            states.append(VineState(q, v, n, trial.d_segment, tip))
            targets.append(nxt[:, :2].copy())
            owner.append(ti)
    return FramePairs(states, targets, np.asarray(owner, dtype=int), scene, dt, skipped)


def _target_tensor(pairs: FramePairs, capacity: int):
    B = len(pairs.states)
    tgt = np.zeros((B, capacity, 2))
    mask = np.zeros((B, capacity, 1))
    for i, t in enumerate(pairs.targets):
        tgt[i, : len(t)] = t
        mask[i, 1: len(t)] = 1.0  # base link is pinned
    return torch.as_tensor(tgt, dtype=torch.float64), torch.as_tensor(mask, dtype=torch.float64)


def _pair_loss_fn(pairs: FramePairs, capacity: int, per_element: Optional[list] = None):
    tgt, mask = _target_tensor(pairs, capacity)
    expected_n = np.array([len(t) for t in pairs.targets])

    def loss(snaps):
        final = snaps[-1]
        keep = torch.as_tensor((final.n == expected_n).astype(float), dtype=torch.float64)[:, None, None]
        err = (final.q[:, :capacity, :2] - tgt) ** 2 * mask * keep
        per = err.sum(dim=(1, 2))
        if per_element is not None:
            per_element.append(per.detach().numpy().copy())
        total = per[0] if len(per) else torch.zeros((), dtype=torch.float64)
        for j in range(1, len(per)):
            total = total + per[j]
        return total

    return loss


def _one_step_config(pairs: FramePairs, capacity: int) -> RolloutConfig:
    return RolloutConfig(steps=1, dt=pairs.dt, batch=max(len(pairs.states), 1), max_links=capacity)


def _capacity(pairs: FramePairs) -> int:
    return max(s.n for s in pairs.states) + 1


def trajectory_loss(params: PhysParams, trial, *, velocities=None) -> float:
    """Teacher-forced squared position error (m^2) summed over frames and links.

    ``trial`` is a :class:`Trial`, a list of trials or prebuilt
    :class:`FramePairs`. Predictions whose link count differs from the next
    observation are left out with a warning.
    """
    pairs = trial if isinstance(trial, FramePairs) else frame_pairs([trial] if isinstance(trial, Trial) else trial)
    if not pairs.states:
        warnings.warn("trial has no usable frame pairs; loss is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    states = pairs.states if velocities is None else [replace(s, v=v) for s, v in zip(pairs.states, velocities)]
    cap = _capacity(pairs)
    params = replace(params, dt=pairs.dt)
    with torch.no_grad():
        snaps, _, _ = engine.differentiable_rollout(states, params, pairs.scene, _one_step_config(pairs, cap))
        final = snaps[-1]
        bad = int(np.sum(final.n != np.array([len(t) for t in pairs.targets])))
        if bad:
            warnings.warn(f"{bad} predictions changed link count and were skipped", RuntimeWarning, stacklevel=2)
        value = _pair_loss_fn(pairs, cap)(snaps)
    return float(value)


# ---------------------------------------------------------------------------
# gradient-based fitting


PHYSICAL = ("m", "I", "c_damp", "u")


@dataclass
class FitConfig:
    iterations: int = 2000
    lr_physical: float = 1e-2
    lr_neural: float = 1e-3
    weight_decay_neural: float = 1e-4
    fit: Optional[tuple] = None  # parameter names; default: all physical + stiffness
    fit_velocities: bool = False
    lr_velocity: float = 1e-3
    divergence_factor: float = 1e3
    divergence_patience: int = 50
    check_gradient: bool = False
    min_mass: float = 1e-6
    min_inertia: float = 1e-9


def stiffness_names(model) -> tuple:
    if model.kind == "linear":
        return ("k",)
    if model.kind == "wrinkling":
        return ("eps_crit",)
    return ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")


@dataclass
class FitReport:
    parameters: dict
    loss_history: list
    best_loss: float
    best_iteration: int
    initial_loss: float
    held_out_mse: dict
    settings: dict
    skipped_frames: int = 0
    gradient_check: Optional[dict] = None
    diverged: bool = False
    topology_events: int = 0

    def to_dict(self) -> dict:
        return {
            "parameters": self.parameters,
            "loss_history": self.loss_history,
            "best_loss": self.best_loss,
            "best_iteration": self.best_iteration,
            "initial_loss": self.initial_loss,
            "held_out_mse": self.held_out_mse,
            "settings": self.settings,
            "skipped_frames": self.skipped_frames,
            "gradient_check": self.gradient_check,
            "diverged": self.diverged,
            "topology_events": self.topology_events,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _get(params: PhysParams, name: str):
    model = params.stiffness
    if name in PHYSICAL:
        return float(getattr(params, name))
    if name == "k":
        return np.asarray(model.k, dtype=float).copy() if np.ndim(model.k) else float(model.k)
    if name == "eps_crit":
        return float(model.eps_crit)
    return np.asarray(getattr(model, name[4:]), dtype=float).copy() if name != "mlp_b2" else float(model.b2)


def _with(params: PhysParams, values: dict) -> PhysParams:
    phys = {k: float(v) for k, v in values.items() if k in PHYSICAL}
    model = params.stiffness
    if "k" in values:
        model = stf.LinearStiffnessParams(values["k"])
    elif "eps_crit" in values:
        model = replace(model, eps_override=float(values["eps_crit"]))
    elif any(k.startswith("mlp_") for k in values):
        model = stf.NeuralStiffnessParams(
            values.get("mlp_w1", model.w1), values.get("mlp_b1", model.b1),
            values.get("mlp_w2", model.w2), values.get("mlp_b2", model.b2))
    return replace(params, stiffness=model, **phys)


def _project(name: str, value, cfg: FitConfig):
    if name == "m":
        return max(value, cfg.min_mass)
    if name == "I":
        return max(value, cfg.min_inertia)
    if name in ("c_damp", "u"):
        return max(value, 0.0)
    if name == "k":
        return np.maximum(value, 0.0) if np.ndim(value) else max(value, 0.0)
    if name == "eps_crit":
        return min(max(value, stf.EPS_BOUNDS[0]), stf.EPS_BOUNDS[1])
    return value


def _report_params(params: PhysParams) -> dict:
    model = params.stiffness
    out = {"m": params.m, "I": params.I, "c_damp": params.c_damp, "u": params.u, "model": model.kind}
    if model.kind == "linear":
        out["k"] = np.asarray(model.k).tolist()
    elif model.kind == "wrinkling":
        out["eps_crit"] = model.eps_crit
    else:
        out.update(w1=model.w1.tolist(), b1=model.b1.tolist(), w2=model.w2.tolist(), b2=model.b2)
    return out


class _Objective:
    """Loss and gradient of the teacher-forced objective at given parameters."""

    def __init__(self, pairs: FramePairs, names: Sequence[str]):
        self.pairs = pairs
        self.names = list(names)
        self.cap = _capacity(pairs)
        self.config = _one_step_config(pairs, self.cap)

    def __call__(self, params: PhysParams, velocities=None, want_v: bool = False):
        states = self.pairs.states
        if velocities is not None:
            states = [replace(s, v=v) for s, v in zip(states, velocities)]
        wrt = self.names + (["v0"] if want_v else [])
        res = engine.loss_gradient(states, replace(params, dt=self.pairs.dt), self.pairs.scene, self.config,
                                   _pair_loss_fn(self.pairs, self.cap), wrt)
        return res

    def value(self, params: PhysParams) -> float:
        return trajectory_loss(params, self.pairs)


def _fd_check(obj: _Objective, params: PhysParams, grads: dict, rel_step: float = 1e-6) -> dict:
    out = {}
    for name in obj.names:
        base = _get(params, name)
        if np.ndim(base):
            continue
        h = rel_step * max(abs(base), 1e-3)
        plus = obj.value(_with(params, {name: base + h}))
        minus = obj.value(_with(params, {name: base - h}))
        fd = (plus - minus) / (2 * h)
        an = float(grads[name])
        out[name] = {"analytic": an, "finite_difference": fd,
                     "relative_error": abs(an - fd) / max(abs(fd), 1e-300)}
    return out


def fit_parameters(dataset, initial: PhysParams, config: Optional[FitConfig] = None) -> FitReport:
    """Fit simulator parameters to observed trajectories with AdamW.

    ``dataset`` is a :class:`TrajectoryDataset` or a list of :class:`Trial`.
    Weight decay applies to perceptron weights only; physical parameters are
    clamped to their valid ranges after every update. The best-loss
    parameters are returned, not the last iterate.
    """
    cfg = config or FitConfig()
    trials = dataset.training() if isinstance(dataset, TrajectoryDataset) else list(dataset)
    held = dataset.held_out() if isinstance(dataset, TrajectoryDataset) else []
    pairs = frame_pairs(trials)
    if not pairs.states:
        raise FitError("no usable frame pairs in the training trials")
    names = list(cfg.fit) if cfg.fit is not None else list(PHYSICAL) + list(stiffness_names(initial.stiffness))
    allowed = set(PHYSICAL) | set(stiffness_names(initial.stiffness))
    if set(names) - allowed:
        raise FitError(f"cannot fit {sorted(set(names) - allowed)} with the {initial.stiffness.kind} model")
    obj = _Objective(pairs, names)

    tensors = {n: torch.tensor(np.asarray(_get(initial, n), dtype=float), dtype=torch.float64) for n in names}
    groups = []
    phys = [tensors[n] for n in names if not n.startswith("mlp_")]
    neural = [tensors[n] for n in names if n.startswith("mlp_")]
    if phys:
        groups.append({"params": phys, "lr": cfg.lr_physical, "weight_decay": 0.0})
    if neural:
        groups.append({"params": neural, "lr": cfg.lr_neural, "weight_decay": cfg.weight_decay_neural})
    vel = None
    if cfg.fit_velocities:
        vel = torch.tensor(np.stack([np.asarray(s.v, dtype=float) for s in pairs.states]), dtype=torch.float64)
        groups.append({"params": [vel], "lr": cfg.lr_velocity, "weight_decay": 0.0})
    opt = torch.optim.AdamW(groups) if groups else None

    def current() -> PhysParams:
        return _with(initial, {n: (t.item() if t.dim() == 0 else t.numpy().copy()) for n, t in tensors.items()})

    def vel_list():
        return None if vel is None else [v.numpy().copy() for v in vel]

    settings = {
        "optimizer": "AdamW", "iterations": cfg.iterations, "lr_physical": cfg.lr_physical,
        "lr_neural": cfg.lr_neural, "weight_decay_neural": cfg.weight_decay_neural,
        "fitted": names, "fit_velocities": cfg.fit_velocities, "frame_pairs": len(pairs.states),
    }
    history: list = []
    best_params, best_loss, best_it = current(), math.inf, 0
    initial_loss = None
    grad_check = None
    above = 0
    events = 0
    diverged = False
    for it in range(cfg.iterations + 1):
        params_now = current()
        res = obj(params_now, vel_list(), want_v=vel is not None)
        loss = res.loss
        events += int(res.topology_changed)
        if initial_loss is None:
            initial_loss = loss
            if cfg.check_gradient:
                grad_check = _fd_check(obj, params_now, res.gradients)
        history.append(loss)
        if not math.isfinite(loss):
            diverged = True
            break
        if loss < best_loss:
            best_params, best_loss, best_it = params_now, loss, it
        above = above + 1 if loss > cfg.divergence_factor * max(initial_loss, 1e-300) else 0
        if above >= cfg.divergence_patience:
            diverged = True
            break
        if it == cfg.iterations or opt is None:
            break
        opt.zero_grad()
        for n, t in tensors.items():
            t.grad = torch.as_tensor(np.asarray(res.gradients[n], dtype=float), dtype=torch.float64).reshape(t.shape)
        if vel is not None:
            gv = torch.as_tensor(res.gradients["v0"], dtype=torch.float64)
            gv[:, 0] = 0.0  # base stays pinned
            vel.grad = gv[:, : vel.shape[1]]
        opt.step()
        with torch.no_grad():
            for n, t in tensors.items():
                t.copy_(torch.as_tensor(np.asarray(_project(n, t.numpy().copy(), cfg)), dtype=torch.float64))

    held_mse = {}
    for trial in held:
        tp = frame_pairs([trial])
        count = sum(len(t) - 1 for t in tp.targets)
        held_mse[trial.name] = trajectory_loss(best_params, tp) / max(count, 1) if tp.states else 0.0
    report = FitReport(_report_params(best_params), history, best_loss, best_it, float(initial_loss),
                       held_mse, settings, pairs.skipped, grad_check, diverged, events)
    report.fitted = best_params  # type: ignore[attr-defined]
    if diverged:
        raise FitDivergence("fit diverged", report)
    return report
