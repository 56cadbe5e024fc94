import math

import numpy as np

from vinesim import LinearStiffnessParams, Obstacle, PhysParams, Scene

D_SEG = 0.1


def rotated_box(cx, cy, w, h, angle):
    c, s = math.cos(angle), math.sin(angle)
    corners = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)]
    return Obstacle([[cx + c * x - s * y, cy + s * x + c * y] for x, y in corners])


def free_scene():
    return Scene((), (0.0, 0.0, 0.0), (-1.0, -1.0, 1.0, 1.0))


def wall_scene():
    return Scene((Obstacle.box(0.415, -0.6, 0.5, 0.6),), (0.0, 0.0, 0.0), (-1.0, -1.0, 1.0, 1.0))


def cluttered_scene():
    obstacles = []
    for i, a in enumerate(np.linspace(-math.pi / 4, math.pi / 4, 6)):
        r = 0.47 + 0.04 * (i % 2)
        obstacles.append(rotated_box(r * math.cos(a), r * math.sin(a), 0.08, 0.1, a + 0.3 * (-1) ** i))
    return Scene(tuple(obstacles), (0.0, 0.0, 0.0), (-1.0, -1.0, 1.0, 1.0))


def gentle_params(stiffness=None, **kw):
    base = dict(m=0.1, I=0.01, c_damp=0.05, u=0.03, dt=0.01)
    base.update(kw)
    return PhysParams(stiffness=stiffness or LinearStiffnessParams(2.0), **base)


def random_qp(rng, n=6, p=2, m=3, active=None):
    """Well-conditioned QP with a known strictly complementary solution.

    Returns ``(problem_arrays, z_star)`` where the arrays are
    ``Q, lin, A, b, G, h``.
    """
    R = rng.normal(size=(n, n))
    Q = R @ R.T + n * np.eye(n)
    A = rng.normal(size=(p, n))
    G = rng.normal(size=(m, n))
    z = rng.normal(size=n)
    nu = rng.normal(size=p)
    if active is None:
        active = rng.random(m) < 0.5
        # at most n - 1 active rows plus equalities: the solution keeps a free direction,
        # so sensitivities are non-zero and well defined
        active[np.flatnonzero(active)[max(n - p - 1, 0):]] = False
    mu = np.where(active, rng.uniform(0.2, 2.0, m), 0.0)
    slack = np.where(active, 0.0, rng.uniform(0.2, 2.0, m))
    lin = -(Q @ z + A.T @ nu + G.T @ mu)
    return (Q, lin, A, A @ z, G, G @ z + slack), z


def synthetic_trials(model, trials=4, steps=40, seed=0, scene=None):
    """Simulated free-space trials from random bent starts, used as fitting data."""
    from vinesim import RolloutConfig, VineState, rollout
    from vinesim.fit import trial_from_trajectory

    scene = scene or free_scene()
    rng = np.random.default_rng(seed)
    params = gentle_params(model)
    out = []
    for t in range(trials):
        s = VineState.from_angles((0, 0, 0), rng.uniform(-0.4, 0.4, 4), D_SEG, tip_length=0.05, capacity=8)
        tr = rollout(s, params, scene, RolloutConfig(steps=steps, max_links=8))
        out.append(trial_from_trajectory(tr, scene, params.dt, name=f"t{t}"))
    return out


def wrinkling_model(eps):
    from vinesim import WrinklingParams

    radius = 0.05
    return WrinklingParams(0.5 / (math.pi * radius**3), radius, eps_override=eps)


# acceptance bookkeeping: one line per criterion, printed in the terminal summary
CRITERIA: dict = {}


def record_criterion(number, passed, title, detail=""):
    CRITERIA[number] = (passed, title, detail)
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
    print(line)
    return line
