"""Command-line entry point: ``coxhawkes {simulate,fit,predict,experiment,diagnose}``.

Each command reads one JSON config, writes its artifacts into ``--out`` and
appends timestamps and runtimes to ``run.log`` there, so the artifacts
themselves are byte-for-byte reproducible.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load
from .domain import EventError, validate_events
from .gp import Grid1D, Grid2D, precompute_basis
from .inference import SamplerError, fit, posterior_field, summarize
from .likelihood import Background, Posterior
from .predict import (
    ExperimentConfig,
    HorizonExhaustedError,
    predict_next_events,
    rmse,
    run_misspecification_experiment,
    thin_draws,
)
from .simulate import InsufficientEventsError, RunawayCascadeError, ks_residual_test, simulate, stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("coxhawkes")


def build_background(cfg: RunConfig, domain) -> Background:
    gt = Grid1D(domain.t_max, cfg["grid.n_t"])
    gs = Grid2D(domain.x_range, domain.y_range, cfg["grid.n_x"], cfg["grid.n_y"])
    vf = float(cfg["grid.var_frac"])
    return Background(gt, precompute_basis(gt, cfg.gp_t(), vf), gs, precompute_basis(gs, cfg.gp_s(), vf))


def _load_events(path, domain):
    ev = io.read_events(path)
    validate_events(ev, domain)
    return ev


def _posterior_for(cfg: RunConfig, events, domain) -> Posterior:
    bg = build_background(cfg, domain) if cfg.kind.has_gp else None
    return Posterior(events, domain, cfg.kind, cfg.priors(), bg)


def cmd_simulate(cfg: RunConfig, args) -> int:
    sim_cfg = cfg.sim_config()
    res = simulate(sim_cfg)
    h, seed = cfg.hash(), cfg.seed
    io.write_events(os.path.join(args.out, "events.csv"), res.events, h, seed)
    truth = {
        "kind": sim_cfg.kind.value,
        "a0": sim_cfg.a0,
        "trigger": None if sim_cfg.trigger is None else {
            "alpha": sim_cfg.trigger.alpha, "beta": sim_cfg.trigger.beta,
            "sigma_x2": sim_cfg.trigger.sigma_x2, "sigma_y2": sim_cfg.trigger.sigma_y2,
        },
        "gp_t": None if res.gp_t is None else vars(res.gp_t),
        "gp_s": None if res.gp_s is None else vars(res.gp_s),
        "f_t": None if res.f_t is None else res.f_t.values,
        "f_s": None if res.f_s is None else res.f_s.values,
        "grid_t": res.grid_t.spec(),
        "grid_s": res.grid_s.spec(),
        "n_events": res.events.n,
        "n_background": res.n_background,
        "n_offspring": res.n_offspring,
    }
    io.write_json(os.path.join(args.out, "truth.json"), truth, h, seed)
    log.info("simulated %d events (%d background, %d offspring)", res.events.n, res.n_background, res.n_offspring)
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    domain = cfg.domain()
    events = _load_events(args.events, domain)
    bg = build_background(cfg, domain) if cfg.kind.has_gp else None
    samples = fit(events, cfg.kind, cfg.priors(), bg, cfg.mcmc(), domain, cfg["threads"])
    h, seed = cfg.hash(), cfg.seed
    io.write_trace(os.path.join(args.out, "trace.csv"), samples, h, seed)
    summary = {
        "kind": cfg.kind.value,
        "n_events": events.n,
        "n_chains": samples.n_chains,
        "n_draws": samples.n_draws,
        "m_t": samples.m_t,
        "m_s": samples.m_s,
        "accept_rate": samples.accept_rate,
        "n_divergent": samples.n_divergent,
        "step_sizes": [c.step_size for c in samples.chains],
        "params": summarize(samples),
    }
    io.write_json(os.path.join(args.out, "summary.json"), summary, h, seed)
    if bg is not None:
        io.write_field(os.path.join(args.out, "field_t.csv"), bg.grid_t,
                       posterior_field(samples, bg.basis_t, block="t"), h, seed)
        io.write_field(os.path.join(args.out, "field_s.csv"), bg.grid_s,
                       posterior_field(samples, bg.basis_s, block="s"), h, seed)
    for name, entry in summary["params"].items():
        rh = "n/a" if entry["r_hat"] is None else f"{entry['r_hat']:.4f}"
        log.info("%s: mean %.4g, r_hat %s, ess %.1f", name, entry["mean"], rh, entry["ess"])
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    domain = cfg.domain()
    history = _load_events(args.events, domain)
    samples = io.read_trace(args.trace, cfg.kind)
    bg = build_background(cfg, domain) if cfg.kind.has_gp else None
    if bg is not None and (samples.m_t, samples.m_s) != (bg.m_t, bg.m_s):
        raise EventError("trace GP ranks do not match the configured grids and hyperparameters")
    draws = thin_draws(samples.states(), cfg["predict.n_draws"])
    k, n_rep = cfg["predict.k"], cfg["predict.n_replicates"]
    preds = []
    for r in range(n_rep):
        rng = stream(cfg.seed, 21, r)
        preds.append(predict_next_events(history, draws[r % len(draws)], k, bg, domain, rng))
    rows = [[r, j, float(p.t[j]), float(p.x[j]), float(p.y[j])] for r, p in enumerate(preds) for j in range(p.n)]
    h, seed = cfg.hash(), cfg.seed
    io.write_table(os.path.join(args.out, "predictions.csv"), [["replicate", "rank", "t", "x", "y"], *rows], h, seed)
    if args.test:
        test = io.read_events(args.test)
        future = test.after(domain.t_max)
        if future.n < k:
            raise EventError(f"{args.test}: only {future.n} events after t={domain.t_max:g}, need k={k}")
        actual = future.select(np.arange(k))
        scales = (domain.t_max, domain.x_range[1] - domain.x_range[0], domain.y_range[1] - domain.y_range[0])
        errs = np.array([rmse(p, actual, scales) for p in preds])
        score = {
            "k": k,
            "n_replicates": n_rep,
            "pairing": "rank order in time",
            "standardization": {"t": scales[0], "x": scales[1], "y": scales[2]},
            "rmse_mean": float(errs.mean()),
            "rmse_se": float(errs.std(ddof=1) / math.sqrt(n_rep)) if n_rep > 1 else None,
            "rmse": errs,
        }
        io.write_json(os.path.join(args.out, "score.json"), score, h, seed)
        log.info("rmse %.6g over %d replicates", score["rmse_mean"], n_rep)
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    gens = cfg.generators()
    if not gens:
        raise ConfigError("experiment.generators: at least one generator with its truths is required")
    ecfg = ExperimentConfig(
        generators=gens,
        inference_kinds=tuple(cfg["experiment.inference_kinds"]),
        n_datasets=cfg["experiment.n_datasets"],
        n_predictions=cfg["experiment.n_predictions"],
        k=cfg["experiment.k"],
        train_frac=float(cfg["experiment.train_frac"]),
        n_draws=cfg["experiment.n_draws"],
        mcmc=cfg.mcmc("experiment.mcmc"),
        priors=cfg.priors(),
        gp_t=cfg.gp_t(),
        gp_s=cfg.gp_s(),
        n_t=cfg["grid.n_t"],
        n_x=cfg["grid.n_x"],
        n_y=cfg["grid.n_y"],
        var_frac=float(cfg["grid.var_frac"]),
        seed=cfg.seed,
        threads=cfg["threads"],
    )
    h, seed = cfg.hash(), cfg.seed
    report = run_misspecification_experiment(ecfg, os.path.join(args.out, "cells"), {"config_hash": h, "seed": seed})
    io.write_table(os.path.join(args.out, "table.csv"), report.table_rows(), h, seed)
    io.write_table(os.path.join(args.out, "long.csv"), report.long_rows(), h, seed)
    n_ok = sum(c.n > 0 for c in report.cells.values())
    for g in report.generators:
        log.info("generator %s ranking: %s", g, ", ".join(report.ranks(g)))
    if n_ok == 0:
        log.error("every experiment cell failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def gradient_check(post: Posterior, u, step: float = 1e-5) -> float:
    """Largest relative difference between the analytic and central-difference gradient."""
    g = post.grad(u)
    worst = 0.0
    for i in range(len(u)):
        e = np.zeros(len(u))
        e[i] = step
        fd = (post.logp(u + e) - post.logp(u - e)) / (2 * step)
        worst = max(worst, abs(fd - g[i]) / max(1.0, abs(fd), abs(g[i])))
    return worst


def cmd_diagnose(cfg: RunConfig, args) -> int:
    from .likelihood import temporal_compensator

    domain = cfg.domain()
    events = _load_events(args.events, domain)
    samples = io.read_trace(args.trace, cfg.kind)
    post = _posterior_for(cfg, events, domain)
    if post.dim != samples.draws.shape[-1]:
        raise EventError("trace dimension does not match the configured model")
    u = samples.combined().mean(axis=0)
    state = post.unpack(u)
    stat, pval = ks_residual_test(events, temporal_compensator(state, events, post.background, domain))
    out = {
        "state": "posterior mean (unconstrained scale)",
        "ks_statistic": stat,
        "ks_pvalue": pval,
        "log_posterior": post.logp(u),
        "gradient_max_rel_error": gradient_check(post, u),
    }
    io.write_json(os.path.join(args.out, "diagnose.json"), out, cfg.hash(), cfg.seed)
    log.info("KS statistic %.4g (p=%.4g); gradient check %.3g", stat, pval, out["gradient_max_rel_error"])
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coxhawkes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the 'out' key)")
        p.add_argument("--seed", type=int, help="overrides the 'seed' key")
        if name in ("fit", "predict", "diagnose"):
            p.add_argument("--events", required=True, help="event CSV (t,x,y[,gen])")
        if name in ("predict", "diagnose"):
            p.add_argument("--trace", required=True, help="trace CSV written by 'fit'")
        if name == "predict":
            p.add_argument("--test", help="event CSV holding the events after the training window")
    return parser


def _setup_logging(out_dir: str) -> logging.Handler:
    handler = logging.FileHandler(os.path.join(out_dir, "run.log"))
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config, {"seed": args.seed, "out": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args.out = cfg.get("out") or "."
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        print(f"data error: cannot create {args.out}: {exc}", file=sys.stderr)
        return EXIT_DATA
    handler = _setup_logging(args.out)
    start = time.perf_counter()
    log.info("%s started: config_hash=%s seed=%d", args.command, cfg.hash(), cfg.seed)
    try:
        code = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (EventError, InsufficientEventsError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    except (SamplerError, RunawayCascadeError, HorizonExhaustedError, np.linalg.LinAlgError,
            FloatingPointError, OverflowError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    log.info("%s finished with exit code %d in %.3f s", args.command, code, time.perf_counter() - start)
    logging.getLogger().removeHandler(handler)
    handler.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
