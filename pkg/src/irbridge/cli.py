"""Command-line interface: ``irbridge <group> <action> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import Optional, Sequence

from . import __version__
from .engine import (
    ENGINE_DEFAULTS,
    bridge_native_run,
    generative_run,
    irbridge_run,
    make_denoiser,
)
from .errors import IRBridgeError
from .paths import PATH_NAMES, BridgeParams, dump_path_csv, make_path
from .rng import substream
from .schedules import PRESETS, TimestepSchedule, build_schedule, preset, validate_schedule
from .synthetic import TASK_NAMES, make_task
from .verify import (
    VERIFY_DEFAULTS,
    config_hash,
    critical_curve_dump,
    render_report,
    run_all,
    sde_crosscheck,
    transition_marginal_test,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or configuration; reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _bridge_params(d: Optional[dict]) -> BridgeParams:
    d = dict(d or {})
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    try:
        return BridgeParams(**d)
    except TypeError as exc:
        raise UsageError(f"bad bridge parameters: {exc}") from None


def _load_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    return doc


def _seed(args, cfg: dict) -> int:
    seed = args.seed if getattr(args, "seed", None) is not None else cfg.get("seed")
    if seed is None:
        raise UsageError("a seed is required (--seed or \"seed\" in the config)")
    return int(seed)


def _write(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _floats(s: str):
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------


def cmd_paths_dump(args) -> int:
    params = _bridge_params(_load_json(args.config).get("bridge_params"))
    path = make_path(args.path, params) if args.path in ("irsde", "goub") else make_path(args.path)
    if args.out is None:
        dump_path_csv(path, args.grid, sys.stdout)
    else:
        dump_path_csv(path, args.grid, args.out)
    return EXIT_OK


def cmd_critical_dump(args) -> int:
    cfg = _load_json(args.config)
    params = dict(cfg.get("bridge_params", {}))
    params.pop("lambda", None)
    params.pop("lam", None)
    _bridge_params(params)
    text = critical_curve_dump([args.bridge], [args.gen], args.lam, args.grid, params)
    _write(text, args.out)
    return EXIT_OK


def cmd_transition_check(args) -> int:
    cfg = {**VERIFY_DEFAULTS, **_load_json(args.config)}
    seed = _seed(args, cfg)
    params = _bridge_params(cfg.get("bridge_params"))
    bridges = cfg.get("bridges", ["irsde", "goub"])
    gen = make_path(cfg.get("gen", "ddpm"))
    lines, ok = [], True
    for b in bridges:
        cases = transition_marginal_test(
            make_path(b, params), gen, cfg["pairs"], cfg.get("sigmas"), int(cfg["mc_samples"]), seed,
            cfg["x0"], cfg["x_lq"], cfg["sigma_fractions"], cfg["n_sigma"], cfg["var_rtol"], args.threads, cfg["chunk"],
        )
        for c in cases:
            if c.report is None:
                lines.append(f"{b} i={c.i:.6g} j={c.j:.6g} sigma={c.sigma:.6g} skipped valid=[{c.bound[0]:.6g}, {c.bound[1]:.6g}]")
            else:
                ok &= c.status == "pass"
                lines.append(f"{b} i={c.i:.6g} j={c.j:.6g} sigma={c.sigma:.6g} {c.status} max|z|={c.report.max_abs_z:.4g} var relerr={c.report.max_var_relerr:.4g}")
    lines.insert(0, f"transition check seed={seed} config={config_hash(cfg)}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sde_check(args) -> int:
    cfg = _load_json(args.config)
    seed = _seed(args, cfg)
    s = {**VERIFY_DEFAULTS["sde"], **cfg.get("sde", {})}
    params = _bridge_params(cfg.get("bridge_params"))
    lines, ok = [f"sde check seed={seed} config={config_hash({'sde': s, 'params': params.to_dict()})}"], True
    for sde in cfg.get("sdes", ["irsde", "goub"]):
        rep = sde_crosscheck(sde, params, s["checkpoints"], int(s["n_traj"]), int(s["n_steps"]), seed, s["x0"], s["x_lq"], s["rtol"], s["pin_tol"], args.threads)
        ok &= rep.passed
        for c in rep.checkpoints:
            lines.append(f"{sde} tau={c.tau:.6g} mean relerr={c.mean_relerr:.4g} var relerr={c.var_relerr:.4g} {'pass' if c.passed else 'fail'}")
        if rep.terminal_max_dev is not None:
            lines.append(f"{sde} terminal max|x_T - x_lq|={rep.terminal_max_dev:.4g} (limit {rep.pin_tol:g})")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if ok else EXIT_FAIL


def _engine_paths(args, cfg):
    bparams = _bridge_params({**ENGINE_DEFAULTS["bridge"], **cfg.get("bridge_params", {})})
    bridge = make_path(getattr(args, "bridge", None) or cfg.get("bridge", "irsde"), bparams)
    gen = make_path(getattr(args, "gen", None) or cfg.get("gen", ENGINE_DEFAULTS["gen"]))
    return bridge, gen


def cmd_schedule_emit(args) -> int:
    cfg = _load_json(args.config)
    bridge, gen = _engine_paths(args, cfg)
    sch = build_schedule(preset(args.preset), args.steps, bridge, gen)
    _write(sch.to_csv(), args.out)
    return EXIT_OK


def cmd_schedule_validate(args) -> int:
    cfg = _load_json(args.config)
    bridge, gen = _engine_paths(args, cfg)
    if args.schedule is not None:
        sch = TimestepSchedule.from_csv(args.schedule)
    else:
        sch = build_schedule(preset(args.preset), args.steps, bridge, gen)
    rep = validate_schedule(sch, bridge, gen)
    _write(rep.to_csv(), args.out)
    sys.stderr.write(f"forward violations={rep.forward_violations} reverse violations={rep.reverse_violations}\n")
    return EXIT_OK if rep.valid else EXIT_FAIL


def _task_from_config(cfg: dict, seed: int):
    name = cfg.get("name", cfg.get("task", "dim"))
    if name not in TASK_NAMES:
        raise UsageError(f"unknown task {name!r}; choose from {', '.join(TASK_NAMES)}")
    return make_task(name, int(cfg.get("task_seed", seed)), cfg.get("config"))


def cmd_run(args) -> int:
    cfg = _load_json(args.task)
    seed = _seed(args, cfg)
    task = _task_from_config(cfg, seed)
    bridge, gen = _engine_paths(args, cfg)
    n_steps = int(cfg.get("n_steps", ENGINE_DEFAULTS["n_steps"]))
    init = cfg.get("init", ENGINE_DEFAULTS["init"])
    den = make_denoiser(args.denoiser, task)
    rng = substream(seed, "run", args.mode, task.name)
    extra = {"task": task.config, "denoiser": args.denoiser, "task_seed": task.seed}
    if args.mode == "irbridge":
        if args.schedule is not None:
            sch = TimestepSchedule.from_csv(args.schedule)
        else:
            sch = build_schedule(preset(cfg.get("preset", ENGINE_DEFAULTS["preset"])), n_steps, bridge, gen)
        traj = irbridge_run(task, sch, den, bridge, gen, rng, init=init, seed=seed, config=extra)
    elif args.mode == "generative":
        traj = generative_run(task, n_steps, den, gen, rng, seed=seed, config=extra)
    else:
        if args.denoiser == "perfect":
            raise UsageError("bridge-native mode needs a score; use --denoiser cond or uncond")
        traj = bridge_native_run(task, n_steps, den, bridge, rng, init=init, seed=seed)
        traj.config.update(extra)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "trajectory.json"), "w", encoding="utf-8") as fh:
        fh.write(traj.to_json())
    with open(os.path.join(args.out, "steps.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(traj.to_csv())
    sys.stdout.write(f"final_mse={traj.final_mse:.6g} final_psnr={traj.final_psnr:.4f}\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    """Bridge vs generative on one task and conditional vs unconditional oracle on another."""
    cfg = _load_json(args.config)
    seed = _seed(args, cfg)
    n_seeds = int(cfg.get("n_seeds", 10))
    n_steps = int(cfg.get("n_steps", ENGINE_DEFAULTS["n_steps"]))
    bridge, gen = _engine_paths(args, cfg)
    pol = preset(cfg.get("preset", ENGINE_DEFAULTS["preset"]))
    study_task = cfg.get("study_task", "dim")
    ablation_task = cfg.get("ablation_task", "gmm")
    rows = ["study,task,seed,a_label,a_value,b_label,b_value,a_wins"]
    wins_study = wins_abl = 0
    for k in range(n_seeds):
        s = seed + k
        task = make_task(study_task, s)
        sch = build_schedule(pol, n_steps, bridge, gen)
        b = irbridge_run(task, sch, make_denoiser("cond", task), bridge, gen, substream(s, "irbridge", bridge.name, task.name)).final_psnr
        g = generative_run(task, n_steps, make_denoiser("cond", task), gen, substream(s, "generative", task.name)).final_psnr
        wins_study += b >= g
        rows.append(f"bridge_vs_generative,{study_task},{s},bridge_psnr,{b:.17g},generative_psnr,{g:.17g},{int(b >= g)}")
        task = make_task(ablation_task, s)
        sch = build_schedule(pol, n_steps, bridge, gen)
        c = irbridge_run(task, sch, make_denoiser("cond", task), bridge, gen, substream(s, "irbridge", bridge.name, task.name)).final_mse
        u = irbridge_run(task, sch, make_denoiser("uncond", task), bridge, gen, substream(s, "irbridge", bridge.name, task.name)).final_mse
        wins_abl += u > c
        rows.append(f"cond_vs_uncond,{ablation_task},{s},cond_mse,{c:.17g},uncond_mse,{u:.17g},{int(u > c)}")
    _write("\n".join(rows) + "\n", args.out)
    sys.stderr.write(f"bridge >= generative PSNR on {wins_study}/{n_seeds}; uncond MSE > cond MSE on {wins_abl}/{n_seeds}\n")
    return EXIT_OK


def cmd_verify_all(args) -> int:
    cfg = _load_json(args.config)
    only = [c.strip().upper() for c in args.only.split(",")] if args.only else None
    t0 = time.perf_counter()
    try:
        results = run_all(args.seed, args.threads, cfg or None, only)
    except KeyError as exc:
        raise UsageError(f"unknown criterion {exc}") from None
    _write(render_report(results, args.seed, cfg or None), args.out)
    sys.stderr.write(f"verify all finished in {time.perf_counter() - t0:.1f}s\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="irbridge", description="Bridge-to-generative transition tools.")
    p.add_argument("--version", action="version", version=f"irbridge {__version__}")
    groups = p.add_subparsers(dest="group", metavar="COMMAND", parser_class=_Parser)

    def leaf(sub, name, fn, help_):
        q = sub.add_parser(name, help=help_)
        q.set_defaults(fn=fn)
        q.add_argument("--out", default=None, help="output file (stdout when omitted)")
        q.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo")
        q.add_argument("--config", default=None, help="JSON configuration document")
        return q

    g = groups.add_parser("paths", help="coefficient curves")
    s = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = leaf(s, "dump", cmd_paths_dump, "write tau,f,b_mul,sigma on a grid")
    q.add_argument("--path", required=True, choices=PATH_NAMES)
    q.add_argument("--grid", type=int, default=101)

    g = groups.add_parser("critical", help="critical timestep curves")
    s = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = leaf(s, "dump", cmd_critical_dump, "critical timesteps for a set of lambda values")
    q.add_argument("--bridge", required=True, choices=("irsde", "goub"))
    q.add_argument("--gen", required=True, choices=("ddpm", "ddpm-linear", "rf"))
    q.add_argument("--lambda", dest="lam", type=_floats, default=[0.5, 1.0, 2.0, 4.0])
    q.add_argument("--grid", type=int, default=100)

    g = groups.add_parser("transition", help="transition-equation Monte Carlo check")
    s = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = leaf(s, "check", cmd_transition_check, "moment tests of transitioned samples")
    q.add_argument("--seed", type=int, default=None)

    g = groups.add_parser("sde", help="closed-form marginals vs Euler-Maruyama")
    s = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = leaf(s, "check", cmd_sde_check, "SDE cross-check")
    q.add_argument("--seed", type=int, default=None)

    g = groups.add_parser("schedule", help="timestep schedules")
    s = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    for name, fn in (("emit", cmd_schedule_emit), ("validate", cmd_schedule_validate)):
        q = leaf(s, name, fn, f"{name} a schedule")
        q.add_argument("--preset", default=ENGINE_DEFAULTS["preset"], choices=sorted(PRESETS))
        q.add_argument("--steps", type=int, default=ENGINE_DEFAULTS["n_steps"])
        q.add_argument("--bridge", choices=("irsde", "goub"), default=None)
        q.add_argument("--gen", choices=("ddpm", "ddpm-linear", "rf"), default=None)
        if name == "validate":
            q.add_argument("--schedule", default=None, help="schedule CSV (built from --preset when omitted)")

    q = groups.add_parser("run", help="run one restoration trajectory")
    q.set_defaults(fn=cmd_run)
    q.add_argument("--mode", required=True, choices=("irbridge", "generative", "bridge-native"))
    q.add_argument("--task", default=None, help="task JSON")
    q.add_argument("--schedule", default=None, help="schedule CSV")
    q.add_argument("--denoiser", default="cond", choices=("cond", "uncond", "perfect"))
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--out", required=True, help="output directory")
    q.add_argument("--threads", type=int, default=1)

    q = groups.add_parser("compare", help="bridge vs generative and cond vs uncond studies")
    q.set_defaults(fn=cmd_compare)
    q.add_argument("--config", default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--out", default=None)
    q.add_argument("--threads", type=int, default=1)

    g = groups.add_parser("verify", help="acceptance suite")
    s = g.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    q = leaf(s, "all", cmd_verify_all, "run every acceptance criterion")
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--only", default=None, help="comma-separated criterion ids, e.g. C1,C4")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "fn"):
            sub = parser
            if args.group is not None:
                sub = parser._subparsers._group_actions[0].choices[args.group]
            sub.print_usage(sys.stderr)
            return EXIT_USAGE
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        return args.fn(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (IRBridgeError, ValueError) as exc:
        sys.stderr.write(f"irbridge: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
