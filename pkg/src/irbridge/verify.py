"""Executable checks: Monte Carlo moment tests, SDE cross-checks, critical curves.

All reports are plain data with deterministic text rendering; a report
depends only on its configuration and seed, never on the worker count.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import (
    ENGINE_DEFAULTS,
    generative_run,
    irbridge_run,
    make_bridge,
    make_denoiser,
)
from .errors import BelowCritical, SourceDegenerate
from .paths import BridgeParams, Path, em_simulate, make_path, reparam_sample
from .rng import Moments, chunked_map, merge_all, substream
from .schedules import build_schedule, preset, validate_schedule
from .synthetic import condition_prior, make_task
from .transition import (
    apply_transition,
    critical_curve,
    forward_coeffs,
    forward_feasible,
    forward_transition,
    sigma_range,
    transition_coeffs,
)

__all__ = [
    "MomentReport",
    "moment_test",
    "transition_marginal_test",
    "sde_crosscheck",
    "critical_curve_dump",
    "config_hash",
    "CriterionResult",
    "CRITERIA",
    "run_all",
    "render_report",
    "VERIFY_DEFAULTS",
]

VERIFY_DEFAULTS = {
    "mc_samples": 200_000,
    "n_sigma": 4.0,
    "var_rtol": 0.02,
    "x0": [1.0, -0.5, 2.0, 0.3],
    "x_lq": [0.5, 0.2, -1.0, 1.0],
    "pairs": [[0.1, 0.2], [0.3, 0.4], [0.5, 0.5], [0.7, 0.8], [0.9, 0.95]],
    "sigma_fractions": [0.0, 0.5, 1.0],
    "sde": {"n_traj": 100_000, "n_steps": 2000, "checkpoints": [0.1, 0.3, 0.5, 0.7, 0.95], "x0": [4.0, 3.0], "x_lq": [2.0, 5.0], "rtol": 0.02, "pin_tol": 1e-2},
    "sweep": 1000,
    "boundary_grid": 100,
    "critical_grid": 100,
    "lambdas": [0.5, 1.0, 2.0, 4.0],
    "engine_seeds": 10,
    "engine_steps": 100,
    "chunk": 8192,
}


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# moment tests
# ---------------------------------------------------------------------------


@dataclass
class MomentReport:
    n: int
    z_mean: np.ndarray
    var_relerr: np.ndarray
    n_sigma: float
    var_rtol: float

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_mean) <= self.n_sigma) and np.all(self.var_relerr <= self.var_rtol))

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_mean)))

    @property
    def max_var_relerr(self) -> float:
        return float(np.max(self.var_relerr))


def _var_relerr(var_hat, var):
    var_hat = np.asarray(var_hat, dtype=np.float64)
    var = np.broadcast_to(np.asarray(var, dtype=np.float64), var_hat.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(var_hat - var) / var
    return np.where(var == 0, np.where(var_hat <= 1e-300, 0.0, np.inf), rel)


def moment_test(samples, expected_mean, expected_var, n_sigma: float = 4.0, var_rtol: float = 0.02) -> MomentReport:
    """Per-dimension mean z-scores against ``expected_var / n`` and relative variance error.

    ``samples`` is an ``(n, d)`` array or a :class:`Moments` accumulator.
    """
    m = samples if isinstance(samples, Moments) else Moments.of(np.asarray(samples, dtype=np.float64))
    if m.n < 1000:
        raise ValueError(f"moment_test needs at least 1000 samples, got {m.n}")
    mean = np.broadcast_to(np.asarray(expected_mean, dtype=np.float64), m.mean.shape)
    var = np.broadcast_to(np.asarray(expected_var, dtype=np.float64), m.mean.shape)
    se = np.sqrt(var / m.n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (m.mean - mean) / np.where(se > 0, se, 1.0), np.where(m.mean == mean, 0.0, np.inf))
    return MomentReport(m.n, z, _var_relerr(m.var, var), n_sigma, var_rtol)


# ---------------------------------------------------------------------------
# transition marginals
# ---------------------------------------------------------------------------


@dataclass
class TransitionCase:
    i: float
    j: float
    sigma: float
    status: str  # "pass", "fail" or "skipped"
    report: Optional[MomentReport] = None
    bound: tuple = ()


def transition_marginal_test(
    bridge: Path,
    gen: Path,
    pairs: Sequence[Sequence[float]],
    sigma_grid: Optional[Sequence[float]] = None,
    n_samples: int = 200_000,
    seed: int = 0,
    x0=None,
    x_lq=None,
    sigma_fractions: Sequence[float] = (0.0, 0.5, 1.0),
    n_sigma: float = 4.0,
    var_rtol: float = 0.02,
    workers: int = 1,
    chunk: int = 8192,
) -> list:
    """Sample ``x_i`` from the source marginal, apply the transition, moment-test ``x_j``.

    ``sigma_grid`` gives absolute noise levels (out-of-range ones are
    reported as skipped); otherwise ``sigma_fractions`` interpolate the valid
    interval ``lo + u (hi - lo)``.
    """
    x0 = np.asarray(VERIFY_DEFAULTS["x0"] if x0 is None else x0, dtype=np.float64)
    x_lq = np.asarray(VERIFY_DEFAULTS["x_lq"] if x_lq is None else x_lq, dtype=np.float64)
    cases = []
    for p, (i, j) in enumerate(pairs):
        src, dst = bridge.coeffs(i), gen.coeffs(j)
        rng_ = sigma_range(src, dst)
        sigmas = list(sigma_grid) if sigma_grid is not None else [rng_.lo + u * (rng_.hi - rng_.lo) for u in sigma_fractions]
        for s_idx, sigma in enumerate(sigmas):
            if sigma not in rng_:
                cases.append(TransitionCase(i, j, sigma, "skipped", bound=(rng_.lo, rng_.hi)))
                continue
            tc = transition_coeffs(src, dst, sigma)

            def draw(size, g, tc=tc, src=src):
                eps = g.standard_normal((2, size, len(x0)))
                x_i = reparam_sample(src, x0, x_lq, eps[0])
                return Moments.of(apply_transition(tc, x_i, x0, x_lq, eps[1]))

            parts = chunked_map(draw, n_samples, seed, ("transition", bridge.name, gen.name, p, s_idx), chunk, workers)
            rep = moment_test(merge_all(parts), dst.f * x0 + dst.b_mul * x_lq, dst.sigma**2, n_sigma, var_rtol)
            cases.append(TransitionCase(i, j, tc.sigma, "pass" if rep.passed else "fail", rep, (rng_.lo, rng_.hi)))
    return cases


# ---------------------------------------------------------------------------
# SDE cross-check
# ---------------------------------------------------------------------------


@dataclass
class SdeCheckpoint:
    tau: float
    mean_relerr: float
    var_relerr: float
    passed: bool


@dataclass
class SdeReport:
    sde: str
    checkpoints: list
    terminal_max_dev: Optional[float] = None
    pin_tol: float = 1e-2
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.checkpoints)
        if self.terminal_max_dev is not None:
            ok = ok and self.terminal_max_dev < self.pin_tol
        return ok


def sde_crosscheck(
    sde: str,
    params: BridgeParams,
    checkpoints: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
    n_traj: int = 100_000,
    n_steps: int = 2000,
    seed: int = 0,
    x0=(4.0, 3.0),
    x_lq=(2.0, 5.0),
    rtol: float = 0.02,
    pin_tol: float = 1e-2,
    workers: int = 1,
    chunk: int = 8192,
) -> SdeReport:
    """Euler-Maruyama moments against the closed-form marginal at each checkpoint.

    For GOUB the terminal samples' max deviation from ``x_lq`` is reported too.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x_lq = np.asarray(x_lq, dtype=np.float64)
    path = make_path(sde, params)
    taus = list(checkpoints)

    def run(size, g):
        terminal, rec = em_simulate(sde, params, x0, x_lq, n_steps, g, n_traj=size, checkpoints=taus + [1.0])
        return {tau: Moments.of(rec[tau]) for tau in taus}, float(np.max(np.abs(terminal - x_lq)))

    parts = chunked_map(run, n_traj, seed, ("sde", sde), chunk, workers)
    results = []
    for tau in taus:
        m = merge_all([p[0][tau] for p in parts])
        c = path.coeffs(tau)
        mean = c.f * x0 + c.b_mul * x_lq
        var = c.sigma**2
        mean_rel = float(np.max(np.abs(m.mean - mean) / np.maximum(np.abs(mean), 1e-300)))
        var_rel = float(np.max(_var_relerr(m.var, var)))
        results.append(SdeCheckpoint(tau, mean_rel, var_rel, mean_rel <= rtol and var_rel <= rtol))
    dev = max(p[1] for p in parts) if sde == "goub" else None
    return SdeReport(sde, results, dev, pin_tol)


# ---------------------------------------------------------------------------
# critical curves
# ---------------------------------------------------------------------------


def critical_curve_dump(bridges=("irsde", "goub"), gens=("ddpm", "rf"), lambdas=(0.5, 1.0, 2.0, 4.0), grid: int = 100, params: Optional[dict] = None, out=None) -> str:
    """CSV of critical timesteps: ``bridge,gen,lambda,tau,t_crit,residual,status``."""
    taus = np.linspace(0.0, 1.0, grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bridge", "gen", "lambda", "tau", "t_crit", "residual", "status"])
    for b in bridges:
        for g in gens:
            gen = make_path(g)
            for lam in lambdas:
                bp = make_path(b, BridgeParams(**{**(params or {}), "lam": lam}))
                vals, res, status = critical_curve(bp, gen, taus)
                for tau, v, r, s in zip(taus, vals, res, status):
                    w.writerow([b, g, "%.17g" % lam, "%.17g" % tau, "%.17g" % v, "%.17g" % r, s])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# acceptance criteria
# ---------------------------------------------------------------------------


@dataclass
class CriterionResult:
    cid: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.cid} {self.name}: {self.detail}"


def _g(v) -> str:
    return "%.4g" % v


def c1_transition(seed, cfg, workers):
    cases = []
    for bname in ("irsde", "goub"):
        cases += transition_marginal_test(
            make_path(bname), make_path("ddpm"), cfg["pairs"], None, cfg["mc_samples"], seed,
            cfg["x0"], cfg["x_lq"], cfg["sigma_fractions"], cfg["n_sigma"], cfg["var_rtol"], workers, cfg["chunk"],
        )
    tested = [c for c in cases if c.report is not None]
    ok = sum(c.status == "pass" for c in tested)
    z = max(c.report.max_abs_z for c in tested)
    v = max(c.report.max_var_relerr for c in tested)
    return CriterionResult("C1", "transition-marginals", ok == len(tested) == len(cases), f"{ok}/{len(cases)} cases, max|z|={_g(z)}, max var relerr={_g(v)}")


def _random_pair(g):
    bridge = make_path(["irsde", "goub"][g.integers(2)], BridgeParams(lam=float(g.uniform(0.25, 4.0))))
    gen = make_path(["ddpm", "ddpm-linear", "rf"][g.integers(3)])
    while True:
        src = bridge.coeffs(float(g.uniform(0.001, 0.999)))
        dst = gen.coeffs(float(g.uniform(0.001, 0.999)))
        if src.sigma > 0 and src.f > 0 and dst.sigma > 0 and dst.f > 0:
            return src, dst


def c2_identities(seed, cfg, workers):
    g = substream(seed, "identities")
    worst = 0.0
    for _ in range(cfg["sweep"]):
        a, b = _random_pair(g)
        for src, dst in ((a, b), (b, a)):
            r = sigma_range(src, dst)
            sigma = float(g.uniform(r.lo, r.hi))
            tc = transition_coeffs(src, dst, sigma)
            worst = max(worst, *tc.identity_errors(src, dst))
    return CriterionResult("C2", "coefficient-identities", worst <= 8.0, f"{2 * cfg['sweep']} transitions, max error={_g(worst)} ulps (limit 8)")


def c3_forward_boundary(seed, cfg, workers):
    n = cfg["boundary_grid"]
    taus = (np.arange(n) + 0.5) / n
    gen = make_path("ddpm")
    worst, feasible, infeasible, bad = 0.0, 0, 0, 0
    for bname in ("irsde", "goub"):
        bridge = make_path(bname)
        for i in taus:
            src = bridge.coeffs(i)
            for j in taus:
                dst = gen.coeffs(j)
                if forward_feasible(src, dst):
                    feasible += 1
                    worst = max(worst, abs(transition_coeffs(src, dst, sigma_range(src, dst).lo).beta))
                else:
                    infeasible += 1
                    try:
                        forward_coeffs(src, dst)
                    except BelowCritical:
                        continue
                    bad += 1
    ok = worst < 1e-12 and bad == 0
    return CriterionResult("C3", "forward-boundary", ok, f"{feasible} feasible max|beta|={_g(worst)}, {infeasible} infeasible, {bad} missing BelowCritical")


def c4_critical(seed, cfg, workers):
    taus = np.linspace(0.0, 1.0, cfg["critical_grid"])
    worst_res, n_found = 0.0, 0
    for b in ("irsde", "goub"):
        for gname in ("ddpm", "rf"):
            gen = make_path(gname)
            for lam in cfg["lambdas"]:
                vals, res, status = critical_curve(make_path(b, BridgeParams(lam=lam)), gen, taus)
                found = np.array(status) == "ok"
                n_found += int(found.sum())
                if found.any():
                    worst_res = max(worst_res, float(np.max(res[found])))
    gen = make_path("ddpm")
    curves = []
    zero_ok = True
    for lam in cfg["lambdas"]:
        vals, _, status = critical_curve(make_path("irsde", BridgeParams(lam=lam)), gen, taus)
        vals = np.where(np.array(status) == "above", np.inf, vals)
        curves.append(vals)
        zero_ok &= vals[0] == 0.0
    mono = all(bool(np.all(hi >= lo)) for lo, hi in zip(curves, curves[1:]))
    ok = worst_res < 1e-4 and mono and zero_ok
    return CriterionResult("C4", "critical-timesteps", ok, f"{n_found} solved, max residual={_g(worst_res)}, lambda-monotone={mono}, t(0)=0 {zero_ok}")


def c5_sde(seed, cfg, workers):
    s = cfg["sde"]
    lines, ok = [], True
    for sde in ("irsde", "goub"):
        rep = sde_crosscheck(sde, BridgeParams(), s["checkpoints"], s["n_traj"], s["n_steps"], seed, s["x0"], s["x_lq"], s["rtol"], s["pin_tol"], workers, cfg["chunk"])
        ok &= rep.passed
        mr = max(c.mean_relerr for c in rep.checkpoints)
        vr = max(c.var_relerr for c in rep.checkpoints)
        extra = f", pin dev={_g(rep.terminal_max_dev)}" if rep.terminal_max_dev is not None else ""
        lines.append(f"{sde} mean relerr={_g(mr)} var relerr={_g(vr)}{extra}")
    return CriterionResult("C5", "sde-crosscheck", ok, "; ".join(lines))


def _engine(bname, task, denoiser_kind, seed, gen=None, steps=None):
    bridge = make_bridge(bname)
    gen = gen or make_path(ENGINE_DEFAULTS["gen"])
    sch = build_schedule(preset(ENGINE_DEFAULTS["preset"]), steps or ENGINE_DEFAULTS["n_steps"], bridge, gen)
    return irbridge_run(task, sch, make_denoiser(denoiser_kind, task), bridge, gen, substream(seed, "irbridge", bname, task.name))


def c6_perfect(seed, cfg, workers):
    worst = 0.0
    for bname in ("irsde", "goub"):
        for tname in ("mask", "dim", "blur"):
            worst = max(worst, _engine(bname, make_task(tname, seed), "perfect", seed).final_mse)
    return CriterionResult("C6", "exact-oracle-convergence", worst <= 1e-10, f"max final MSE={_g(worst)} over 2 bridges x 3 tasks")


def _seeds(seed, cfg):
    return [seed + k for k in range(cfg["engine_seeds"])]


def c7_restoration(seed, cfg, workers):
    finals, lqs, floors = [], [], []
    for s in _seeds(seed, cfg):
        task = make_task("mask", s)
        finals.append(_engine("irsde", task, "cond", s, steps=cfg["engine_steps"]).final_mse)
        lqs.append(float(np.mean((task.x_lq - task.x0) ** 2)))
        post = condition_prior(task.prior, task.degradation, task.x_lq)
        floors.append(float(np.mean((post.mean() - task.x0) ** 2)))
    med, thr = float(np.median(finals)), 0.5 * float(np.median(lqs))
    return CriterionResult("C7", "mask-restoration", med < thr, f"median final MSE={_g(med)} < threshold {_g(thr)}; Bayes floor median={_g(float(np.median(floors)))}")


def c8_bridge_vs_generative(seed, cfg, workers):
    wins = 0
    gen = make_path(ENGINE_DEFAULTS["gen"])
    details = []
    for s in _seeds(seed, cfg):
        task = make_task("dim", s)
        b = _engine("irsde", task, "cond", s, gen=gen, steps=cfg["engine_steps"]).final_psnr
        g = generative_run(task, cfg["engine_steps"], make_denoiser("cond", task), gen, substream(s, "generative", task.name)).final_psnr
        wins += b >= g
        details.append(b - g)
    return CriterionResult("C8", "bridge-vs-generative", wins >= 8, f"bridge PSNR >= generative on {wins}/{len(details)} seeds, median gap={_g(float(np.median(details)))} dB")


def c9_cond_vs_uncond(seed, cfg, workers):
    wins, ratios = 0, []
    for s in _seeds(seed, cfg):
        task = make_task("gmm", s)
        c = _engine("irsde", task, "cond", s, steps=cfg["engine_steps"]).final_mse
        u = _engine("irsde", task, "uncond", s, steps=cfg["engine_steps"]).final_mse
        wins += u > c
        ratios.append(u / c if c > 0 else math.inf)
    n = len(ratios)
    return CriterionResult("C9", "cond-vs-uncond", wins == n, f"uncond MSE > cond MSE on {wins}/{n} seeds, median ratio={_g(float(np.median(ratios)))}")


def c10_goub_skip(seed, cfg, workers):
    bridge = make_bridge("goub")
    gen = make_path(ENGINE_DEFAULTS["gen"])
    src = bridge.coeffs(1.0)
    task = make_task("dim", seed)
    raised = False
    try:
        forward_transition(task.x_lq, src, gen.coeffs(1.0), task.x_lq, substream(seed, "skip"))
    except SourceDegenerate:
        raised = True
    sch = build_schedule(preset(ENGINE_DEFAULTS["preset"]), ENGINE_DEFAULTS["n_steps"], bridge, gen)
    no_skip_raised = False
    try:
        irbridge_run(task, sch, make_denoiser("cond", task), bridge, gen, substream(seed, "skip", 0), skip_degenerate=False)
    except SourceDegenerate:
        no_skip_raised = True
    traj = irbridge_run(task, sch, make_denoiser("cond", task), bridge, gen, substream(seed, "skip", 1))
    finite = bool(np.all(np.isfinite(traj.final_estimate))) and all(np.all(np.isfinite(r.x_state)) for r in traj.records)
    valid = validate_schedule(sch, bridge, gen).valid
    improves = traj.final_mse < float(np.mean((task.x_lq - task.x0) ** 2))
    ok = raised and no_skip_raised and finite and valid and traj.records[0].skipped and improves
    return CriterionResult("C10", "goub-skip", ok, f"SourceDegenerate raised={raised}, without skip raised={no_skip_raised}, skip run finite={finite}, schedule valid={valid}, final MSE={_g(traj.final_mse)}")


def c11_determinism(seed, cfg, workers):
    small = {**cfg, "mc_samples": 50_000, "pairs": cfg["pairs"][:2]}
    texts = []
    for w in (1, 3):
        res = c1_transition(seed, small, w)
        texts.append(res.detail)
    same = texts[0] == texts[1]
    return CriterionResult("C11", "determinism", same, f"transition MC identical at 1 and 3 workers: {same}")


CRITERIA = {
    "C1": c1_transition,
    "C2": c2_identities,
    "C3": c3_forward_boundary,
    "C4": c4_critical,
    "C5": c5_sde,
    "C6": c6_perfect,
    "C7": c7_restoration,
    "C8": c8_bridge_vs_generative,
    "C9": c9_cond_vs_uncond,
    "C10": c10_goub_skip,
    "C11": c11_determinism,
}


def run_all(seed: int, workers: int = 1, config: Optional[dict] = None, only: Optional[Sequence[str]] = None) -> list:
    cfg = {**VERIFY_DEFAULTS, **(config or {})}
    ids = list(only) if only else list(CRITERIA)
    return [CRITERIA[c](seed, cfg, workers) for c in ids]


def render_report(results, seed: int, config: Optional[dict] = None) -> str:
    cfg = {**VERIFY_DEFAULTS, **(config or {})}
    lines = [f"irbridge verify seed={seed} config={config_hash({'verify': cfg, 'engine': ENGINE_DEFAULTS})}"]
    lines += [r.line() for r in results]
    n_ok = sum(r.passed for r in results)
    lines.append(f"{n_ok}/{len(results)} criteria passed")
    return "\n".join(lines) + "\n"
