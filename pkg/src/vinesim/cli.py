"""Command-line entry point: ``vinesim <command> [options]``.

Commands write plot-ready CSV/JSON files plus a run manifest. Exit codes:
0 success, 2 input error, 3 engine error, 4 insufficient data,
5 optimization divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import engine, fit, stiffness as stf
from .dynamics import PhysParams
from .engine import RolloutConfig, StepError
from .qpdiff import QPError
from .scene import Scene, SceneError, load_scene

log = logging.getLogger("vinesim")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ENGINE = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# params file


def params_to_dict(params: PhysParams, d_segment: float) -> dict:
    model = params.stiffness
    out = {
        "mass_kg": params.m,
        "inertia_kgm2": params.I,
        "damping_nms": params.c_damp,
        "growth_mps": params.u,
        "dt_s": params.dt,
        "d_segment_m": d_segment,
        "model": model.kind,
    }
    if params.collision_radius is not None:
        out["collision_radius_m"] = params.collision_radius
    if model.kind == "linear":
        out["linear"] = {"k_nm_per_rad": np.asarray(model.k).tolist()}
    elif model.kind == "wrinkling":
        out["pressure_pa"] = model.pressure
        out["tube_radius_m"] = model.tube_radius
        block = {"eps_poly": list(model.eps_poly)}
        if model.pressure_range is not None:
            block["pressure_range_pa"] = list(model.pressure_range)
        if model.eps_override is not None:
            block["eps_crit"] = model.eps_override
        out["wrinkling"] = block
    else:
        out["mlp"] = {"w1": model.w1.tolist(), "b1": model.b1.tolist(), "w2": model.w2.tolist(), "b2": model.b2}
    return out


def params_from_dict(data: dict):
    """Return ``(PhysParams, d_segment)`` from a params file dict."""
    def need(key):
        if key not in data:
            raise InputError(f"params: missing field {key!r}")
        return data[key]

    try:
        kind = need("model")
        if kind == "linear":
            model = stf.LinearStiffnessParams(need("linear")["k_nm_per_rad"])
        elif kind == "wrinkling":
            block = need("wrinkling")
            rng = block.get("pressure_range_pa")
            model = stf.WrinklingParams(
                float(need("pressure_pa")), float(need("tube_radius_m")),
                tuple(block.get("eps_poly", (0.1, 0.0, 0.0, 0.0))),
                tuple(rng) if rng is not None else None, block.get("eps_crit"))
        elif kind == "mlp":
            block = need("mlp")
            model = stf.NeuralStiffnessParams(block["w1"], block["b1"], block["w2"], block.get("b2", 0.0))
        else:
            raise InputError(f"params: unknown model {kind!r}")
        params = PhysParams(
            m=float(need("mass_kg")), I=float(need("inertia_kgm2")), c_damp=float(need("damping_nms")),
            u=float(need("growth_mps")), stiffness=model, dt=float(need("dt_s")),
            collision_radius=data.get("collision_radius_m"))
        d_seg = float(need("d_segment_m"))
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"params: {exc}") from None
    if d_seg <= 0:
        raise InputError("params: d_segment_m must be positive")
    return params, d_seg


def load_params(path):
    text = _read(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return params_from_dict(data)


def save_params(path, params: PhysParams, d_segment: float) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, d_segment), indent=2) + "\n")


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _scene(path) -> Scene:
    _read(path)
    try:
        return load_scene(path)
    except SceneError as exc:
        raise InputError(str(exc)) from None


# ---------------------------------------------------------------------------
# manifest


class RunManifest:
    """Record of one command invocation, written even when the command fails."""

    def __init__(self, command: str, config: dict, seed: Optional[int], path: Optional[Path]):
        self.data = {
            "command": command,
            "config": config,
            "seed": seed,
            "inputs": {},
            "outputs": [],
            "timings_s": {},
            "status": None,
            "exit_code": None,
            "error": None,
        }
        self.path = path
        self._t0 = time.perf_counter()

    def digest(self, path) -> None:
        p = Path(path)
        if p.is_file():
            self.data["inputs"][str(path)] = hashlib.sha256(p.read_bytes()).hexdigest()
        else:
            self.data["inputs"][str(path)] = None

    def output(self, path) -> None:
        self.data["outputs"].append(str(path))

    def timing(self, name: str, seconds: float) -> None:
        self.data["timings_s"][name] = seconds

    def finish(self, code: int, error: Optional[str] = None) -> None:
        self.data["timings_s"]["total"] = time.perf_counter() - self._t0
        self.data["exit_code"] = code
        self.data["status"] = "ok" if code == EXIT_OK else "failed"
        self.data["error"] = error
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _manifest_path(args) -> Optional[Path]:
    if getattr(args, "manifest_out", None):
        return Path(args.manifest_out)
    out = getattr(args, "out", None)
    return Path(str(out) + ".manifest.json") if out else None


# ---------------------------------------------------------------------------
# commands


def cmd_rollout(args, man: RunManifest) -> int:
    man.digest(args.scene)
    man.digest(args.params)
    scene = _scene(args.scene)
    params, d_seg = load_params(args.params)
    if args.steps < 0 or args.batch < 1 or args.links < 2:
        raise InputError("need steps >= 0, batch >= 1 and links >= 2")
    cap = max(args.max_links, args.links)
    lo, hi = args.angle_range
    initials = engine.launch_states(scene, args.batch, args.links, d_seg, cap, seed=args.seed,
                                    angle_range=(lo, hi))
    cfg = RolloutConfig(steps=args.steps, batch=args.batch, max_links=cap, seed=args.seed,
                        record_every=args.record_every, workers=engine.resolve_workers(args.workers))
    t0 = time.perf_counter()
    trajs = engine.rollout_batch(initials, params, scene, cfg)
    man.timing("rollout", time.perf_counter() - t0)
    engine.write_trajectories(args.out, trajs)
    man.output(args.out)
    failed = [i for i, tr in enumerate(trajs) if tr.error]
    if failed:
        dump_path = Path(str(args.out) + ".qpdump.json")
        dumps = {str(i): {"error": trajs[i].error, "step": trajs[i].failed_step, "problem": trajs[i].dump}
                 for i in failed}
        dump_path.write_text(json.dumps(dumps, indent=2) + "\n")
        man.output(dump_path)
        raise QPError(f"{len(failed)} trial(s) failed; QP dump at {dump_path}")
    return EXIT_OK


def cmd_bench(args, man: RunManifest) -> int:
    if args.scene:
        man.digest(args.scene)
        scene = _scene(args.scene)
    else:
        scene = Scene((), (0.0, 0.0, 0.0), (-10.0, -10.0, 10.0, 10.0))
    if args.params:
        man.digest(args.params)
        params, d_seg = load_params(args.params)
    else:
        params, d_seg = default_params(), 0.1
    if any(v < 2 for v in args.max_links) or any(v < 1 for v in args.batch) or args.steps < 1:
        raise InputError("need max_links >= 2, batch >= 1 and steps >= 1")
    rows = engine.benchmark(args.max_links, args.batch, args.steps, params, scene, d_seg,
                            seeds=args.seeds, seed=args.seed)
    engine.write_benchmark(args.out, rows)
    man.output(args.out)
    return EXIT_OK


def default_params() -> PhysParams:
    return PhysParams(m=0.1, I=0.01, c_damp=0.05, u=0.03, stiffness=stf.LinearStiffnessParams(2.0), dt=0.01)


STIFFNESS_GRID = 1000


def stiffness_table(pressure: float, radius: float, eps_values) -> list:
    """Rows ``(eps_crit, theta, gamma0, moment_ratio)`` on a 1000-point grid over [0, pi]."""
    theta = np.linspace(0.0, math.pi, STIFFNESS_GRID)
    rows = []
    for eps in eps_values:
        params = stf.WrinklingParams(pressure, radius, eps_override=float(eps))
        gamma = stf.wrinkle_angle(theta, eps)
        ratio = np.asarray(stf.wrinkling_moment(theta, params)) / params.full_moment
        rows.extend(zip([float(eps)] * len(theta), theta, gamma, ratio))
    return rows


def cmd_stiffness_table(args, man: RunManifest) -> int:
    if args.pressure <= 0 or args.radius <= 0:
        raise InputError("pressure and radius must be positive")
    if args.eps:
        eps_values = args.eps
    elif args.poly:
        eps_values = [stf.eps_from_pressure(args.pressure, args.poly).value]
    else:
        raise InputError("give --eps values or --poly coefficients")
    for e in eps_values:
        if not 0.0 < e < 1.0:
            raise InputError(f"eps_crit must lie in (0, 1), got {e}")
    rows = stiffness_table(args.pressure, args.radius, eps_values)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps_crit", "theta", "gamma0", "moment_ratio"])
        for row in rows:
            w.writerow([f"{v:.17g}" for v in row])
    man.output(args.out)
    return EXIT_OK


def cmd_fit_epsilon(args, man: RunManifest) -> int:
    man.digest(args.moments)
    _read(args.moments)
    if args.radius <= 0:
        raise InputError("radius must be positive")
    try:
        data = fit.load_moments(args.moments, min_samples=args.min_samples)
    except fit.FitError as exc:
        raise InputError(str(exc)) from None
    table, failed = [], []
    for group in data.groups:
        try:
            res = fit.fit_eps_crit(group, args.radius)
            table.append({"pressure_pa": res.pressure, "eps_crit": res.eps_crit, "sse": res.sse})
        except fit.FitError as exc:
            failed.append({"pressure_pa": group.pressure, "reason": str(exc)})
    report = {"radius_m": args.radius, "groups": table, "uninformative": failed, "polynomial": None}
    code = EXIT_OK
    if len(table) >= 4:
        poly = fit.fit_eps_polynomial([(r["pressure_pa"], r["eps_crit"]) for r in table])
        report["polynomial"] = {
            "coefficients": poly.coefficients.tolist(),
            "residuals": poly.residuals.tolist(),
            "pressure_range_pa": list(poly.pressure_range),
        }
    else:
        code = EXIT_DATA
        report["error"] = f"only {len(table)} usable pressure group(s); a cubic needs 4"
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    man.output(args.out)
    return code


MODELS = ("linear", "mlp", "wrinkling")


def cmd_fit(args, man: RunManifest) -> int:
    if args.model not in MODELS:
        raise InputError(f"unknown model {args.model!r}; choose from {', '.join(MODELS)}")
    if args.iters < 0:
        raise InputError("iterations must be non-negative")
    man.digest(args.manifest)
    _read(args.manifest)
    try:
        dataset = fit.load_trajectory_dataset(args.manifest)
    except (fit.FitError, SceneError) as exc:
        raise InputError(str(exc)) from None
    if args.init_params:
        man.digest(args.init_params)
        initial, d_seg = load_params(args.init_params)
    else:
        initial, d_seg = default_params(), dataset.trials[0].d_segment
    if initial.stiffness.kind != args.model:
        initial = _switch_model(initial, args.model, args)
    initial = PhysParams(initial.m, initial.I, initial.c_damp, initial.u, initial.stiffness,
                         dataset.trials[0].frame_interval, initial.collision_radius)
    if args.lr_physical <= 0 or args.lr_neural <= 0:
        raise InputError("learning rates must be positive")
    cfg = fit.FitConfig(iterations=args.iters, fit=tuple(args.fit) if args.fit else None,
                        fit_velocities=args.fit_velocities, lr_physical=args.lr_physical,
                        lr_neural=args.lr_neural)
    params_out = Path(args.params_out) if args.params_out else Path(str(args.out) + ".params.json")
    t0 = time.perf_counter()
    try:
        report = fit.fit_parameters(dataset, initial, cfg)
    except fit.FitDivergence as exc:
        exc.report.save(args.out)
        man.output(args.out)
        raise
    except fit.FitError as exc:
        raise DataError(str(exc)) from None
    man.timing("fit", time.perf_counter() - t0)
    report.save(args.out)
    save_params(params_out, report.fitted, d_seg)
    man.output(args.out)
    man.output(params_out)
    return EXIT_OK


class DataError(ValueError):
    pass


def _switch_model(params: PhysParams, kind: str, args) -> PhysParams:
    if kind == "linear":
        model = stf.LinearStiffnessParams(2.0)
    elif kind == "mlp":
        model = stf.NeuralStiffnessParams.initialize(seed=args.seed)
    else:
        if args.pressure is None or args.tube_radius is None:
            raise InputError("the wrinkling model needs --pressure and --tube-radius (or --init-params)")
        model = stf.WrinklingParams(args.pressure, args.tube_radius, eps_override=args.eps0)
    return PhysParams(params.m, params.I, params.c_damp, params.u, model, params.dt, params.collision_radius)


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vinesim", description="Differentiable vine robot simulator")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--out", required=True, help="output file")
        sp.add_argument("--manifest-out", help="run manifest path (default: <out>.manifest.json)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("rollout", help="simulate robots with random launch angles")
    r.add_argument("--scene", required=True)
    r.add_argument("--params", required=True)
    r.add_argument("--steps", type=int, default=100)
    r.add_argument("--batch", type=int, default=1)
    r.add_argument("--links", type=int, default=3, help="initial link count")
    r.add_argument("--max-links", type=int, default=20)
    r.add_argument("--record-every", type=int, default=1)
    r.add_argument("--angle-range", type=float, nargs=2, default=(-math.pi / 4, math.pi / 4))
    r.add_argument("--workers", type=int, default=None)
    common(r)

    b = sub.add_parser("bench", help="time per iteration over capacity and batch grids")
    b.add_argument("--max-links", type=_ints, default=[10, 40])
    b.add_argument("--batch", type=_ints, default=[1, 64])
    b.add_argument("--steps", type=int, default=20)
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--scene")
    b.add_argument("--params")
    common(b)

    s = sub.add_parser("stiffness-table", help="moment ratio curves of the wrinkling model")
    s.add_argument("--pressure", type=float, default=1.0)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--eps", type=_floats)
    s.add_argument("--poly", type=_floats, help="cubic eps_crit(P) coefficients c0..c3")
    common(s, seed=False)

    e = sub.add_parser("fit-epsilon", help="fit eps_crit per pressure and a cubic in pressure")
    e.add_argument("--moments", required=True)
    e.add_argument("--radius", type=float, required=True)
    e.add_argument("--min-samples", type=int, default=fit.MIN_GROUP_SIZE)
    common(e, seed=False)

    f = sub.add_parser("fit", help="fit simulator parameters to observed trajectories")
    f.add_argument("--manifest", required=True)
    f.add_argument("--model", required=True)
    f.add_argument("--iters", type=int, default=2000)
    f.add_argument("--init-params")
    f.add_argument("--params-out")
    f.add_argument("--fit", nargs="+", help="parameter names to fit (default: all)")
    f.add_argument("--fit-velocities", action="store_true")
    f.add_argument("--pressure", type=float)
    f.add_argument("--tube-radius", type=float)
    f.add_argument("--eps0", type=float, default=0.1)
    f.add_argument("--lr-physical", type=float, default=fit.FitConfig.lr_physical)
    f.add_argument("--lr-neural", type=float, default=fit.FitConfig.lr_neural)
    common(f)
    return p


COMMANDS = {
    "rollout": cmd_rollout,
    "bench": cmd_bench,
    "stiffness-table": cmd_stiffness_table,
    "fit-epsilon": cmd_fit_epsilon,
    "fit": cmd_fit,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "log_level"}
    man = RunManifest(args.command, config, getattr(args, "seed", None), _manifest_path(args))
    try:
        code = COMMANDS[args.command](args, man)
        error = None if code == EXIT_OK else "insufficient data"
    except (InputError, SceneError) as exc:
        code, error = EXIT_INPUT, str(exc)
    except fit.FitDivergence as exc:
        code, error = EXIT_DIVERGED, str(exc)
    except DataError as exc:
        code, error = EXIT_DATA, str(exc)
    except (StepError, QPError) as exc:
        code, error = EXIT_ENGINE, str(exc)
    except ValueError as exc:
        code, error = EXIT_INPUT, str(exc)
    man.finish(code, error)
    if error:
        print(f"vinesim {args.command}: {error}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
