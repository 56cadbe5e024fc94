"""Time stepping, link insertion, batched rollouts and rollout gradients.

Every robot in a batch is padded to the same link capacity and contact slot
count, so a batch runs as one stack of fixed-size QPs. Padding is chosen such
that an element's arithmetic does not depend on the other elements: a robot
simulated alone gives bitwise the same trajectory as inside a batch of 64.

Gradients come from torch's reverse-mode tape; the QP node uses the implicit
KKT backward pass from :mod:`vinesim.qpdiff`.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import dynamics as dyn
from .dynamics import DTYPE, BatchParams, BatchState, PhysParams, VineState
from .qpdiff import SOLVED, QPError, dump_problem, QPProblem, qp_layer
from .scene import Scene, min_clearance

RESEED_FRACTION = 1e-6
TRAJECTORY_COLUMNS = ("trial_id", "step", "time_s", "link_index", "x_m", "y_m", "theta_rad")
BENCH_COLUMNS = ("max_links", "batch", "mean_ms_per_iteration", "ms_per_iteration_per_element")


class StepError(QPError):
    """A step's QP failed; ``dump`` reproduces the failing problem."""

    def __init__(self, message: str, dump: Optional[dict] = None, step: Optional[int] = None):
        super().__init__(message, dump)
        self.step = step


@dataclass
class RolloutConfig:
    steps: int = 100
    dt: Optional[float] = None  # overrides PhysParams.dt when set
    batch: int = 1
    max_links: int = 20
    seed: int = 0
    record_every: int = 1
    contacts_per_link: int = 2
    activation: Optional[float] = None  # contact activation gap, defaults to d_segment
    workers: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.batch < 1 or self.max_links < 2 or self.record_every < 1:
            raise ValueError("need batch >= 1, max_links >= 2 and record_every >= 1")
        if self.contacts_per_link < 0 or self.workers < 1:
            raise ValueError("contacts_per_link must be >= 0 and workers >= 1")


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    error: Optional[str] = None
    failed_step: Optional[int] = None
    dump: Optional[dict] = None
    timings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def final(self) -> VineState:
        return self.states[-1]


def resolve_workers(requested: Optional[int] = None) -> int:
    """Worker count from the argument, overridden by ``VINESIM_WORKERS``."""
    env = os.environ.get("VINESIM_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"VINESIM_WORKERS must be an integer, got {env!r}") from None
        if value < 1:
            raise ValueError("VINESIM_WORKERS must be >= 1")
        return value
    return 1 if requested is None else max(1, int(requested))


def rng_stream(seed: int, trial: int, purpose: int) -> np.random.Generator:
    """Independent generator for one (trial, purpose) pair."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, purpose)))


LAUNCH_STREAM = 0


def launch_states(scene: Scene, count: int, n_links: int, d_segment: float, capacity: int,
                  seed: int = 0, angle_range=(-math.pi / 4, math.pi / 4)) -> list:
    """Straight initial vines with launch angles drawn uniformly per trial."""
    out = []
    for trial in range(count):
        offset = rng_stream(seed, trial, LAUNCH_STREAM).uniform(*angle_range)
        angle = scene.base_pose[2] + offset
        base = (scene.base_pose[0], scene.base_pose[1], angle)
        out.append(VineState.straight(base, n_links, d_segment, capacity=capacity))
    return out


# ---------------------------------------------------------------------------
# batched differentiable kernels


class StepOutput:
    """Result of one batched step: the new state and per-element diagnostics."""

    def __init__(self, state: BatchState, status: list, diagnostics: list, inserted: np.ndarray,
                 problems: Optional[list] = None):
        self.state = state
        self.status = status
        self.diagnostics = diagnostics
        self.inserted = inserted
        self.problems = problems


def effective_growth(bs: BatchState, u: torch.Tensor, dt: float):
    """Commanded growth, capped for robots at capacity so the tip stops at one segment."""
    full = torch.as_tensor(bs.n >= bs.capacity)
    cap = (bs.d_segment - bs.tip) / dt
    capped = torch.minimum(u, cap)
    return torch.where(full, capped, u), full.numpy()


def step_batch(bs: BatchState, bp: BatchParams, scene: Scene, dt: float, contacts_per_link: int = 2,
               activation: Optional[float] = None, u: Optional[torch.Tensor] = None,
               keep_problems: bool = False) -> StepOutput:
    """Advance every element one step, then insert links where the tip is full.

    Failed elements keep their previous state and report a non-solved status.
    """
    B, N = bs.batch, bs.capacity
    u = bp.u if u is None else u
    u_eff, capped = effective_growth(bs, u, dt)
    q_np = bs.q.detach().numpy()
    d_np = bs.d_segment.numpy()
    radius = bp.radius(bs.d_segment)
    act = d_np if activation is None else np.full(B, float(activation))
    slots = dyn.select_contacts(q_np, bs.n, scene, radius.numpy(), act, contacts_per_link)
    data = dyn.assemble_step_t(bs, bp, slots, u_eff, dt)
    info: dict = {}
    z = qp_layer(data.Q, data.lin, data.A, data.b, data.G, data.h, info)
    status = list(info["status"])
    ok = torch.as_tensor([s == SOLVED for s in status])

    v_new = torch.cat([torch.zeros(B, 1, 3, dtype=DTYPE), z.reshape(B, N - 1, 3)], dim=1)
    active = torch.as_tensor(np.arange(N)[None, :] < bs.n[:, None], dtype=DTYPE)[:, :, None]
    v_new = v_new * active
    q_new = bs.q + v_new * dt
    bidx = np.arange(B)
    t, pr = bs.n - 1, bs.n - 2
    dv = v_new[bidx, t, :2] - v_new[bidx, pr, :2]
    rate = data.growth_dir[:, 0] * dv[:, 0] + data.growth_dir[:, 1] * dv[:, 1]
    tip_new = data.separation + rate * dt

    okm = ok[:, None, None]
    q_out = torch.where(okm, q_new, bs.q)
    v_out = torch.where(okm, v_new, bs.v)
    tip_out = torch.where(ok, tip_new, bs.tip)
    stepped = BatchState(q_out, v_out, bs.n.copy(), tip_out, bs.d_segment)
    out_state, inserted = insert_links(stepped, skip=~ok.numpy())

    raw = info["out"]
    diags = []
    for i in range(B):
        diags.append({
            "status": status[i],
            "iterations": int(raw["iterations"][i]) if np.ndim(raw["iterations"]) else int(raw["iterations"]),
            "contacts": int(slots.valid[i].sum()),
            "dropped_contacts": int(slots.overflow[i]),
            "growth_capped": bool(capped[i]),
            "inserted": bool(inserted[i]),
        })
    problems = None
    if keep_problems:
        arrays = [t_.detach().numpy() for t_ in data[:6]]
        problems = [QPProblem(*(a[i] for a in arrays)) for i in range(B)]
    return StepOutput(out_state, status, diags, inserted, problems)


def insert_links(bs: BatchState, skip: Optional[np.ndarray] = None):
    """Turn full tips into links and seed new tips (see :func:`maybe_add_link`)."""
    B, N = bs.batch, bs.capacity
    skip = np.zeros(B, dtype=bool) if skip is None else skip
    tip_np = bs.tip.detach().numpy()
    d_np = bs.d_segment.numpy()
    todo = (~skip) & (tip_np >= d_np) & (bs.n < N)
    if not todo.any():
        return bs, todo
    qs, vs, tips = list(bs.q.unbind(0)), list(bs.v.unbind(0)), list(bs.tip.unbind(0))
    n = bs.n.copy()
    for i in np.flatnonzero(todo):
        qs[i], vs[i], tips[i] = _insert_one(qs[i], vs[i], tips[i], int(n[i]), float(d_np[i]))
        n[i] += 1
    return BatchState(torch.stack(qs), torch.stack(vs), n, torch.stack(tips), bs.d_segment), todo


def _insert_one(q: torch.Tensor, v: torch.Tensor, tip: torch.Tensor, n: int, d_seg: float):
    d = d_seg / 2.0
    t, pr = n - 1, n - 2
    th_p = q[pr, 2]
    jx = q[pr, 0] + d * torch.cos(th_p)
    jy = q[pr, 1] + d * torch.sin(th_p)
    rx, ry = q[t, 0] - jx, q[t, 1] - jy
    dist = torch.sqrt(rx * rx + ry * ry)
    if float(dist.detach()) < 1e-12:
        ux, uy = torch.cos(q[t, 2]), torch.sin(q[t, 2])
    else:
        ux, uy = rx / dist, ry / dist
    heading = torch.atan2(uy, ux)
    th_f = q[t, 2] + dyn.wrap_t(heading - q[t, 2])
    fx, fy = jx + d * ux, jy + d * uy
    new_len = torch.clamp(tip - d_seg, min=RESEED_FRACTION * d_seg)
    former = torch.stack([fx, fy, th_f])
    fresh = torch.stack([fx + new_len * ux, fy + new_len * uy, th_f])
    rows = list(q.unbind(0))
    rows[t] = former
    rows[t + 1] = fresh
    vrows = list(v.unbind(0))
    vrows[t + 1] = v[t]
    return torch.stack(rows), torch.stack(vrows), new_len


def _record(bs: BatchState) -> list:
    return [bs.element(i) for i in range(bs.batch)]


def _max_revolute(state: VineState) -> float:
    if state.n < 3:
        return 0.0
    return float(np.max(np.abs(dyn.revolute_residual(state.q, state.n, state.d_segment))))


def _config_dt(params, config: RolloutConfig) -> float:
    if config.dt is not None:
        return float(config.dt)
    plist = [params] if isinstance(params, PhysParams) else list(params)
    return float(plist[0].dt)


def _capacity(initials: Sequence[VineState], config: RolloutConfig) -> int:
    cap = max(config.max_links, max(s.n for s in initials))
    return cap


def _run_chunk(initials, params, scene, config, dt, capacity):
    """Batched rollout without gradients for one chunk of elements."""
    B = len(initials)
    trajs = [Trajectory() for _ in range(B)]
    bs = BatchState.from_states(initials, capacity)
    with torch.no_grad():
        bp = BatchParams(params, B, capacity - 1)
        for i, tr in enumerate(trajs):
            tr.times.append(0.0)
            tr.states.append(bs.element(i))
        alive = np.ones(B, dtype=bool)
        for k in range(config.steps):
            t0 = time.perf_counter()
            out = step_batch(bs, bp, scene, dt, config.contacts_per_link, config.activation,
                             keep_problems=False)
            elapsed = time.perf_counter() - t0
            failed = np.array([s != SOLVED for s in out.status]) & alive
            if failed.any():
                # rebuild the failing problems for the dump
                dumps = _failure_dumps(bs, bp, scene, dt, config, np.flatnonzero(failed))
                for i in np.flatnonzero(failed):
                    trajs[i].error = f"QP {out.status[i]} at step {k}"
                    trajs[i].failed_step = k
                    trajs[i].dump = dumps.get(int(i))
                alive &= ~failed
            bs = out.state
            record = (k + 1) % config.record_every == 0 or k + 1 == config.steps
            for i in np.flatnonzero(alive):
                tr = trajs[i]
                tr.timings.append(elapsed)
                diag = dict(out.diagnostics[i], step=k)
                if record:
                    st = bs.element(i)
                    diag["revolute_residual"] = _max_revolute(st)
                    tr.times.append((k + 1) * dt)
                    tr.states.append(st)
                tr.diagnostics.append(diag)
            if not alive.any():
                break
            if (~alive).any():
                bs = _freeze(bs, alive)
    return trajs


def _freeze(bs: BatchState, alive: np.ndarray) -> BatchState:
    # dead elements keep stepping on zero velocity so the stack stays uniform
    keep = torch.as_tensor(alive)[:, None, None]
    return BatchState(bs.q, torch.where(keep, bs.v, torch.zeros_like(bs.v)), bs.n, bs.tip, bs.d_segment)


def _failure_dumps(bs, bp, scene, dt, config, idx) -> dict:
    out = step_batch(bs, bp, scene, dt, config.contacts_per_link, config.activation, keep_problems=True)
    return {int(i): dump_problem(out.problems[i]) for i in idx}


def rollout_batch(initials: Sequence[VineState], params, scene: Scene, config: RolloutConfig) -> list:
    """Simulate independent robots together; element ``i`` equals ``rollout(initials[i])``.

    ``params`` is one :class:`PhysParams` shared by all robots or one per robot.
    A failing element stops with ``error`` set while the others continue.
    """
    initials = list(initials)
    if not initials:
        return []
    plist = [params] * len(initials) if isinstance(params, PhysParams) else list(params)
    if len(plist) != len(initials):
        raise ValueError("need one parameter set per initial state")
    for s in initials:
        dyn.check_state(s)
    dt = _config_dt(params, config)
    capacity = _capacity(initials, config)
    workers = min(resolve_workers(config.workers), len(initials))
    shared = isinstance(params, PhysParams)
    if workers == 1:
        return _run_chunk(initials, params if shared else plist, scene, config, dt, capacity)
    bounds = np.linspace(0, len(initials), workers + 1).astype(int)
    chunks = [(initials[a:b], params if shared else plist[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: _run_chunk(c[0], c[1], scene, config, dt, capacity), chunks))
    return [tr for part in parts for tr in part]


def rollout(initial: VineState, params: PhysParams, scene: Scene, config: RolloutConfig) -> Trajectory:
    """Single-robot rollout; raises :class:`StepError` if a step fails."""
    solo = RolloutConfig(**{**config.__dict__, "batch": 1, "workers": 1})
    tr = rollout_batch([initial], params, scene, solo)[0]
    if tr.error is not None:
        raise StepError(tr.error, tr.dump, tr.failed_step)
    return tr


def step(state: VineState, params: PhysParams, scene: Scene, u_k: Optional[float] = None,
         contacts_per_link: int = 2, activation: Optional[float] = None) -> VineState:
    """One QP step without link insertion. Raises :class:`StepError` on failure."""
    dyn.check_state(state)
    bs = BatchState.from_states([state], state.capacity)
    with torch.no_grad():
        bp = BatchParams(params, 1, state.capacity - 1)
        u = bp.u if u_k is None else torch.as_tensor([float(u_k)], dtype=DTYPE)
        B, N = 1, state.capacity
        u_eff, _ = effective_growth(bs, u, params.dt)
        radius = bp.radius(bs.d_segment)
        act = bs.d_segment.numpy() if activation is None else np.array([float(activation)])
        slots = dyn.select_contacts(bs.q.numpy(), bs.n, scene, radius.numpy(), act, contacts_per_link)
        data = dyn.assemble_step_t(bs, bp, slots, u_eff, params.dt)
        info: dict = {}
        z = qp_layer(data.Q, data.lin, data.A, data.b, data.G, data.h, info)
    if info["status"][0] != SOLVED:
        arrays = [t.numpy()[0] for t in data[:6]]
        raise StepError(f"QP {info['status'][0]}", dump_problem(QPProblem(*arrays)))
    n = state.n
    v = np.zeros_like(np.asarray(state.v, dtype=float))
    v[1:n] = z.numpy().reshape(N - 1, 3)[: n - 1]
    q = np.array(state.q, dtype=float)
    q[:n] = q[:n] + v[:n] * params.dt
    diff = data.growth_dir.numpy()[0]
    rate = diff @ (v[n - 1, :2] - v[n - 2, :2])
    tip = float(data.separation.numpy()[0] + rate * params.dt)
    flags = dict(state.flags)
    if n >= state.capacity and float(u_eff[0]) < float(u[0]):
        flags["growth_halted"] = True
    return VineState(q, v, n, state.d_segment, tip, flags)


def maybe_add_link(state: VineState, max_links: Optional[int] = None) -> VineState:
    """Split a full-length tip into a new link plus a fresh tip.

    The former tip is snapped onto the joint circle of its predecessor along
    the distal pair axis, so the new joint's residual is zero; the new tip
    sits further along that axis and inherits the tip's velocity. When the
    link capacity is reached the state is returned with ``growth_halted`` set.
    """
    if state.tip_length < state.d_segment:
        return state
    limit = state.capacity if max_links is None else min(max_links, state.capacity)
    if state.n >= limit:
        out = state.copy()
        out.flags["growth_halted"] = True
        return out
    bs = BatchState.from_states([state], state.capacity)
    with torch.no_grad():
        new, _ = insert_links(bs)
    out = new.element(0)
    out.flags = dict(state.flags)
    return out


# ---------------------------------------------------------------------------
# gradients


PARAM_NAMES = ("m", "I", "c_damp", "u", "k", "eps_crit", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "v0")


@dataclass
class GradientResult:
    loss: float
    gradients: dict
    topology_changed: bool
    diagnostics: list


def differentiable_rollout(initials: Sequence[VineState], params, scene: Scene, config: RolloutConfig,
                           wrt: Sequence[str] = ()):
    """Rollout keeping the torch graph. Returns (snapshots, leaves, diagnostics).

    ``snapshots`` are :class:`BatchState` tuples whose tensors depend on the
    leaves named in ``wrt``. Link insertion happens at the realized step and
    is not differentiated through its timing.
    """
    initials = list(initials)
    unknown = set(wrt) - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown gradient targets: {sorted(unknown)}")
    dt = _config_dt(params, config)
    capacity = _capacity(initials, config)
    B = len(initials)
    bs = BatchState.from_states(initials, capacity)
    bp = BatchParams(params, B, capacity - 1, grad=[w for w in wrt if w != "v0"])
    leaves = dict(bp.leaves)
    if "v0" in wrt:
        v0 = bs.v.clone().requires_grad_(True)
        leaves["v0"] = v0
        bs = BatchState(bs.q, v0, bs.n, bs.tip, bs.d_segment)
    missing = [w for w in wrt if w not in leaves]
    if missing:
        raise ValueError(f"parameters {missing} do not apply to the {bp.kind} stiffness model")
    snaps = [bs]
    diags = []
    for k in range(config.steps):
        out = step_batch(bs, bp, scene, dt, config.contacts_per_link, config.activation)
        bad = [i for i, s in enumerate(out.status) if s != SOLVED]
        if bad:
            raise StepError(f"QP {out.status[bad[0]]} at step {k} for element {bad[0]}", step=k)
        bs = out.state
        diags.append([dict(d, step=k) for d in out.diagnostics])
        if (k + 1) % config.record_every == 0 or k + 1 == config.steps:
            snaps.append(bs)
    return snaps, leaves, diags


def loss_gradient(initial, params, scene: Scene, config: RolloutConfig,
                  loss: Callable[[list], torch.Tensor], wrt: Sequence[str]) -> GradientResult:
    """Gradient of ``loss(snapshots)`` with respect to the named parameters.

    ``initial`` is one state or a list (a batch sharing ``params``). ``loss``
    receives the recorded :class:`BatchState` snapshots and returns a scalar
    tensor. Gradients of shared parameters are summed over the batch in a
    fixed order. ``topology_changed`` reports whether any link was inserted.
    """
    initials = [initial] if isinstance(initial, VineState) else list(initial)
    snaps, leaves, diags = differentiable_rollout(initials, params, scene, config, wrt)
    value = loss(snaps)
    if not isinstance(value, torch.Tensor):
        raise TypeError("loss must return a torch tensor")
    targets = [leaves[w] for w in wrt]
    if value.requires_grad and targets:
        grads = torch.autograd.grad(value, targets, allow_unused=True)
    else:
        grads = [None] * len(targets)
    out = {}
    for name, leaf, g in zip(wrt, targets, grads):
        arr = np.zeros(leaf.shape) if g is None else g.detach().numpy().copy()
        out[name] = float(arr) if arr.ndim == 0 else arr
    inserted = any(d["inserted"] for row in diags for d in row)
    return GradientResult(float(value.detach()), out, inserted, diags)


def tip_position(snaps: list, index: int = -1, element: int = 0) -> torch.Tensor:
    """Tip (x, y) of one element in a snapshot list, as a differentiable tensor."""
    bs = snaps[index]
    return bs.q[element, int(bs.n[element]) - 1, :2]


# ---------------------------------------------------------------------------
# file formats and benchmark


def write_trajectories(path, trajectories: Sequence[Trajectory]) -> None:
    """Write snapshots as one CSV row per (trial, recorded step, link)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for trial, tr in enumerate(trajectories):
            steps = [0] + [d["step"] + 1 for d in tr.diagnostics if "revolute_residual" in d]
            for step_idx, t, st in zip(steps, tr.times, tr.states):
                q = np.asarray(st.q)
                for j in range(st.n):
                    w.writerow([trial, step_idx, f"{t:.17g}", j, f"{q[j, 0]:.17g}", f"{q[j, 1]:.17g}",
                                f"{q[j, 2]:.17g}"])


def read_trajectories(path) -> dict:
    """Read a trajectory CSV into ``{trial: [(step, time, array(n, 3)), ...]}``."""
    frames: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"trial_id", "step", "time_s", "link_index", "x_m", "y_m"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                trial, stp, link = int(row["trial_id"]), int(row["step"]), int(row["link_index"])
                x, y, t = float(row["x_m"]), float(row["y_m"]), float(row["time_s"])
                th = float(row["theta_rad"]) if row.get("theta_rad") not in (None, "") else math.nan
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            frames.setdefault(trial, {}).setdefault(stp, (t, {}))[1][link] = (x, y, th)
    out = {}
    for trial, by_step in frames.items():
        seq = []
        for stp in sorted(by_step):
            t, links = by_step[stp]
            if sorted(links) != list(range(len(links))):
                raise ValueError(f"{path}: trial {trial} step {stp} has non-contiguous link indices")
            seq.append((stp, t, np.array([links[j] for j in range(len(links))], dtype=float)))
        out[trial] = seq
    return out


@dataclass
class BenchRow:
    max_links: int
    batch: int
    mean_ms_per_iteration: float
    ms_per_iteration_per_element: float


def benchmark(max_links_list: Sequence[int], batch_list: Sequence[int], steps: int, params: PhysParams,
              scene: Scene, d_segment: float, seeds: int = 5, seed: int = 0, start_links: int = 3) -> list:
    """Mean wall-clock time per iteration over the capacity x batch grid."""
    rows = []
    for cap in max_links_list:
        for batch in batch_list:
            per_run = []
            for s in range(seeds):
                initials = launch_states(scene, batch, min(start_links, cap), d_segment, cap, seed=seed + s)
                cfg = RolloutConfig(steps=steps, batch=batch, max_links=cap, seed=seed + s)
                t0 = time.perf_counter()
                trajs = rollout_batch(initials, params, scene, cfg)
                total = time.perf_counter() - t0
                done = max(len(tr.diagnostics) for tr in trajs)
                per_run.append(total / max(done, 1))
            mean_ms = 1e3 * float(np.mean(per_run))
            rows.append(BenchRow(cap, batch, mean_ms, mean_ms / batch))
    return rows


def write_benchmark(path, rows: Sequence[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r.max_links, r.batch, f"{r.mean_ms_per_iteration:.6f}",
                        f"{r.ms_per_iteration_per_element:.6f}"])


def penetration(state: VineState, scene: Scene, radius: float) -> float:
    """Smallest sphere gap over the non-base links (inf without obstacles)."""
    return min_clearance(np.asarray(state.q)[1: state.n, :2], scene, radius)
