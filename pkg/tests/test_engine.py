import math

import numpy as np
import pytest
import torch

from support import D_SEG, cluttered_scene, free_scene, gentle_params
from vinesim import (LinearStiffnessParams, PhysParams, RolloutConfig, VineState, WrinklingParams, loss_gradient,
                     maybe_add_link, rollout, rollout_batch, step)
from vinesim import engine as E
from vinesim.dynamics import joint_angles, revolute_residual


def same_trajectory(a, b):
    return len(a.states) == len(b.states) and all(
        np.array_equal(x.q, y.q) and np.array_equal(x.v, y.v) and x.tip_length == y.tip_length and x.n == y.n
        for x, y in zip(a.states, b.states))


def test_rest_is_fixed_point(free):
    # 0.125 is exact in binary, so every residual is exactly zero
    s = VineState.straight((0, 0, 0), 4, 0.125, capacity=6)
    out = step(s, gentle_params(u=0.0), free)
    assert np.array_equal(out.q, s.q)
    assert np.all(out.v == 0.0)
    assert out.tip_length == s.tip_length
    s = VineState.straight((0, 0, 0), 4, D_SEG, capacity=6)
    out = step(s, gentle_params(u=0.0), free)
    assert np.max(np.abs(out.v)) < 1e-13


def test_free_growth_adds_u_dt_per_step(free):
    s = VineState.from_angles((0, 0, 0), [0.2, -0.1, 0.15], D_SEG, tip_length=0.05, capacity=8)
    p = gentle_params(u=0.05)
    for _ in range(20):
        nxt = step(s, p, free)
        assert nxt.length - s.length == pytest.approx(0.05 * 0.01, abs=1e-9)
        sep = np.hypot(*(nxt.q[nxt.n - 1, :2] - nxt.q[nxt.n - 2, :2]))
        assert sep == pytest.approx(nxt.tip_length, abs=1e-4 * D_SEG)
        s = nxt


def test_bent_joint_relaxes(free):
    s = VineState.from_angles((0, 0, 0), [0.4, 0.0], D_SEG, tip_length=D_SEG, capacity=3)
    p = gentle_params(u=0.0, c_damp=0.02)
    start = abs(joint_angles(s.q, 3)[0])
    amplitude = []
    for _ in range(500):
        s = step(s, p, free)
        amplitude.append(np.max(np.abs(joint_angles(s.q, 3))))
    # the response oscillates, so compare the envelope over 100-step windows
    peaks = [max(amplitude[i:i + 100]) for i in range(0, 500, 100)]
    assert peaks[-1] < 0.25 * start
    assert all(b <= a + 1e-12 for a, b in zip(peaks, peaks[1:]))


def test_maybe_add_link_identity_below_threshold():
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=0.5 * D_SEG, capacity=5)
    assert maybe_add_link(s) is s


def test_maybe_add_link_at_threshold():
    s = VineState.from_angles((0, 0, 0.1), [0.3, -0.2], D_SEG, tip_length=D_SEG, capacity=5)
    s.v[2] = [0.01, 0.02, 0.3]
    out = maybe_add_link(s)
    assert out.n == 4
    assert out.tip_length == pytest.approx(1e-6 * D_SEG, rel=1e-12)
    assert np.max(np.abs(revolute_residual(out.q, 4, D_SEG))) <= 1e-9
    np.testing.assert_array_equal(out.v[3], s.v[2])
    assert out.length == pytest.approx(s.length + 1e-6 * D_SEG, abs=1e-12)


def test_maybe_add_link_carries_overshoot():
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=1.3 * D_SEG, capacity=5)
    s.tip_length = D_SEG * 1.0  # keep invariants: build overshoot via the batch kernel below
    bs = E.BatchState.from_states([s], 5)
    bs = E.BatchState(bs.q, bs.v, bs.n, torch.tensor([0.13], dtype=torch.float64), bs.d_segment)
    bs.q[0, 2, 0] = 0.23
    new, inserted = E.insert_links(bs)
    out = new.element(0)
    assert out.n == 4 and out.tip_length == pytest.approx(0.03, abs=1e-12)
    np.testing.assert_allclose(out.q[3, :2], [0.23, 0.0], atol=1e-12)


def test_maybe_add_link_at_capacity_halts():
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=D_SEG, capacity=3)
    out = maybe_add_link(s)
    assert out.n == 3 and out.flags["growth_halted"]


def test_growth_at_capacity_is_capped(free):
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=0.099, capacity=3)
    out = step(s, gentle_params(u=0.5), free)
    assert out.tip_length == pytest.approx(D_SEG, abs=1e-9)
    assert out.flags["growth_halted"]


def test_zero_steps_gives_initial_snapshot(free):
    s = VineState.straight((0, 0, 0), 3, D_SEG, capacity=5)
    tr = rollout(s, gentle_params(), free, RolloutConfig(steps=0, max_links=5))
    assert len(tr.states) == 1 and tr.times == [0.0]
    assert np.array_equal(tr.states[0].q, s.q)


def test_free_space_length_bookkeeping(free):
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=0.05, capacity=8)
    p = gentle_params(u=0.05)
    tr = rollout(s, p, free, RolloutConfig(steps=100, max_links=8))
    assert tr.final.length - s.length == pytest.approx(100 * 0.05 * 0.01, abs=1e-6)
    assert tr.final.n == 4  # 5 cm of growth from a half tip is one insertion
    for a, b in zip(tr.states, tr.states[1:]):
        assert b.length - a.length == pytest.approx(0.05 * 0.01, abs=1e-6)
    assert all(b > a for a, b in zip(tr.times, tr.times[1:]))


def test_record_every(free):
    s = VineState.straight((0, 0, 0), 3, D_SEG, capacity=5)
    tr = rollout(s, gentle_params(), free, RolloutConfig(steps=10, max_links=5, record_every=4))
    assert tr.times == pytest.approx([0.0, 0.04, 0.08, 0.10])


def test_rollouts_are_deterministic(clutter):
    inits = E.launch_states(clutter, 4, 4, D_SEG, 8, seed=11)
    cfg = RolloutConfig(steps=40, max_links=8, seed=11)
    a = rollout_batch(inits, gentle_params(), clutter, cfg)
    b = rollout_batch(inits, gentle_params(), clutter, cfg)
    assert all(same_trajectory(x, y) for x, y in zip(a, b))


def test_batch_equals_sequential(clutter, monkeypatch):
    inits = E.launch_states(clutter, 6, 4, D_SEG, 8, seed=2)
    cfg = RolloutConfig(steps=30, max_links=8)
    batch = rollout_batch(inits, gentle_params(), clutter, cfg)
    for init, tr in zip(inits, batch):
        assert same_trajectory(rollout(init, gentle_params(), clutter, cfg), tr)
    monkeypatch.setenv("VINESIM_WORKERS", "3")
    threaded = rollout_batch(inits, gentle_params(), clutter, cfg)
    assert all(same_trajectory(x, y) for x, y in zip(batch, threaded))


def test_per_element_parameters(free):
    inits = [VineState.straight((0, 0, 0), 3, D_SEG, tip_length=0.05, capacity=6) for _ in range(2)]
    params = [gentle_params(u=0.02), gentle_params(u=0.04)]
    out = rollout_batch(inits, params, free, RolloutConfig(steps=10, max_links=6))
    grown = [tr.final.length - inits[0].length for tr in out]
    assert grown == pytest.approx([0.002, 0.004], abs=1e-9)


def test_sixty_four_robots_stay_out_of_clutter(clutter):
    p = gentle_params()
    inits = E.launch_states(clutter, 64, 5, D_SEG, 10, seed=3)
    trajs = rollout_batch(inits, p, clutter, RolloutConfig(steps=100, max_links=10, seed=3))
    assert all(tr.ok for tr in trajs)
    worst = min(E.penetration(s, clutter, p.radius(D_SEG)) for tr in trajs for s in tr.states)
    assert worst >= -1e-4
    assert any(d["contacts"] > 0 for tr in trajs for d in tr.diagnostics)


def test_trajectory_csv_round_trip(tmp_path, free):
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=0.09, capacity=5)
    tr = rollout(s, gentle_params(u=0.05), free, RolloutConfig(steps=30, max_links=5))
    path = tmp_path / "traj.csv"
    E.write_trajectories(path, [tr])
    back = E.read_trajectories(path)[0]
    assert len(back) == len(tr.states)
    for (stp, t, arr), st, tt in zip(back, tr.states, tr.times):
        assert t == tt
        np.testing.assert_array_equal(arr, st.q[: st.n])


# gradients ----------------------------------------------------------------

BENT = dict(joint_angles=[0.2, -0.3, 0.25, 0.1], tip_length=0.06)


def bent_state(capacity=8):
    return VineState.from_angles((0, 0, 0), BENT["joint_angles"], D_SEG, tip_length=BENT["tip_length"],
                                 capacity=capacity)


def tip_x(snaps):
    return E.tip_position(snaps)[0]


def finite_difference(make_params, value, scene, cfg, loss, state, rel=1e-6):
    h = rel * max(abs(value), 1e-3)
    f = [loss(E.differentiable_rollout([state], make_params(value + s * h), scene, cfg)[0]).item() for s in (1, -1)]
    return (f[0] - f[1]) / (2 * h)


@pytest.mark.parametrize("name,value", [("u", 0.03), ("k", 2.0), ("c_damp", 0.05), ("m", 0.1), ("I", 0.01)])
def test_linear_model_gradients_match_finite_differences(free, name, value):
    cfg = RolloutConfig(steps=10, max_links=8)
    s = bent_state()

    def make(x):
        kw = {name: x} if name != "k" else {}
        return gentle_params(LinearStiffnessParams(x if name == "k" else 2.0), **kw)

    g = loss_gradient(s, make(value), free, cfg, tip_x, [name])
    fd = finite_difference(make, value, free, cfg, tip_x, s)
    assert not g.topology_changed
    assert g.gradients[name] == pytest.approx(fd, rel=1e-3)


def test_free_growth_gradient_wrt_u(free):
    cfg = RolloutConfig(steps=5, max_links=8)
    s = bent_state()
    make = lambda x: gentle_params(u=x)
    g = loss_gradient(s, make(0.03), free, cfg, tip_x, ["u"])
    assert g.gradients["u"] == pytest.approx(finite_difference(make, 0.03, free, cfg, tip_x, s), rel=1e-3)


def test_wrinkling_threshold_gradient(free):
    cfg = RolloutConfig(steps=10, max_links=8)
    s = bent_state()
    R = 0.05
    make = lambda e: gentle_params(WrinklingParams(0.5 / (math.pi * R**3), R, eps_override=e))
    loss = lambda snaps: E.tip_position(snaps)[1]
    g = loss_gradient(s, make(0.1), free, cfg, loss, ["eps_crit"])
    assert g.gradients["eps_crit"] == pytest.approx(finite_difference(make, 0.1, free, cfg, loss, s), rel=1e-3)


def test_constant_loss_has_zero_stiffness_gradient(free):
    s = VineState.straight((0, 0, 0), 4, D_SEG, capacity=6)
    p = gentle_params(u=0.0)
    loss = lambda snaps: torch.sum((snaps[-1].q - snaps[0].q) ** 2)
    g = loss_gradient(s, p, free, RolloutConfig(steps=5, max_links=6), loss, ["k", "c_damp"])
    assert g.loss == 0.0
    assert g.gradients["k"] == 0.0 and g.gradients["c_damp"] == 0.0


def test_initial_velocity_gradient(free):
    s = bent_state()
    cfg = RolloutConfig(steps=5, max_links=8)
    g = loss_gradient(s, gentle_params(), free, cfg, tip_x, ["v0"])
    h = 1e-6
    vals = []
    for sgn in (1, -1):
        t = s.copy()
        t.v[2, 2] += sgn * h
        vals.append(tip_x(E.differentiable_rollout([t], gentle_params(), free, cfg)[0]).item())
    assert g.gradients["v0"][0, 2, 2] == pytest.approx((vals[0] - vals[1]) / (2 * h), rel=1e-3)


def test_insertion_is_flagged(free):
    s = VineState.straight((0, 0, 0), 3, D_SEG, tip_length=0.098, capacity=6)
    g = loss_gradient(s, gentle_params(), free, RolloutConfig(steps=10, max_links=6), tip_x, ["u"])
    assert g.topology_changed


def test_unknown_gradient_target(free):
    with pytest.raises(ValueError):
        loss_gradient(bent_state(), gentle_params(), free, RolloutConfig(steps=1), tip_x, ["gravity"])
    with pytest.raises(ValueError):
        loss_gradient(bent_state(), gentle_params(), free, RolloutConfig(steps=1), tip_x, ["eps_crit"])


def test_benchmark_rows(free):
    rows = E.benchmark([4, 6], [1, 2], 3, gentle_params(), free, D_SEG, seeds=1)
    assert [(r.max_links, r.batch) for r in rows] == [(4, 1), (4, 2), (6, 1), (6, 2)]
    assert all(r.ms_per_iteration_per_element == pytest.approx(r.mean_ms_per_iteration / r.batch) for r in rows)
