"""Command-line entry point: ``explore-stop <command> --config run.yaml``.

Every command writes into the output directory (``--out``, else the config's
``out``, else ``$EXPLORE_STOP_OUT``, else ``./runs``): its CSV artifacts, the
resolved config as ``config.yaml`` and a ``run.log``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from ._io import atomic_writer, write_csv
from .config import RunConfig, dump_config, load_config
from .evaluate import (comparison_report, cox_reward, field_path_values, randomized_reward,
                       sample_cox_times, threshold_stop_reward)
from .model_sim import MarketConfig, TimeGrid, simulate
from .pde import (build_grid, extract_boundary, policy_iterate, solve_classical_vi,
                  solve_exploratory_hjb, sup_distance, write_boundaries)
from .rl import (Problem, TrainConfig, evaluate_net, features, load_checkpoint, policy_from_value,
                 save_checkpoint, train, value)

log = logging.getLogger("explore_stop")


# ---------------------------------------------------------------- helpers


def _pde_grid(cfg: RunConfig):
    m = cfg.require_market()
    if m.kind != "gbm-1d":
        raise ValueError(f"the PDE solver handles the 1-d put only, got market kind {m.kind!r}")
    return m, build_grid(m.strike, m.horizon, cfg.pde.n_steps, cfg.pde.half_nodes,
                         cfg.pde.x_halfwidth)


def _train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.training
    return TrainConfig(iterations=t.iterations, batch_size=t.batch_size, lr=t.lr,
                       lr_final=t.lr_final, lam=t.lam, seed=cfg.seed, optimizer=t.optimizer,
                       clip_norm=t.clip_norm, eval_every=t.eval_every, test_paths=t.test_paths,
                       stopgrad_policy=t.stopgrad_policy, positive_only=t.positive_only,
                       zero_output=t.zero_output)


def _problem(market: MarketConfig, steps: int) -> Problem:
    return Problem(market, TimeGrid(steps, market.horizon))


def _path(out: str, name: str) -> str:
    return os.path.join(out, name)


# ---------------------------------------------------------------- commands


def cmd_solve_pde(cfg: RunConfig, out: str) -> None:
    m, grid = _pde_grid(cfg)
    s = cfg.solver
    t0 = time.perf_counter()
    u, pi = solve_exploratory_hjb(m, grid, s.lam, tol=s.tol, max_newton=s.max_newton, e_max=s.e_max)
    log.info("exploratory solve: %d steps, %d nodes, max Newton %d, %.2fs", grid.n_steps,
             grid.n_nodes, max(u.newton_counts), time.perf_counter() - t0)
    u.to_csv(_path(out, "value_lambda.csv"), policy=pi)
    curves = {"lambda": extract_boundary(u, s.tol_boundary)}
    if s.classical:
        star = solve_classical_vi(m, grid, penalty=s.penalty, tol=s.tol, max_newton=s.max_newton)
        star.to_csv(_path(out, "value_star.csv"))
        curves["star"] = extract_boundary(star, s.tol_boundary)
        gap = sup_distance(u, star, row=0)
        log.info("sup_x |u_lambda - u_star| at t=0: %.6g", gap)
        print(f"sup gap at t=0: {gap:.6g}")
        print(f"u_lambda(s0, 0) = {u.at(m.s0[0]):.6f}, u_star(s0, 0) = {star.at(m.s0[0]):.6f}")
    write_boundaries(_path(out, "boundaries.csv"), curves)


def cmd_policy_iter(cfg: RunConfig, out: str) -> None:
    m, grid = _pde_grid(cfg)
    s = cfg.solver
    ref, _ = solve_exploratory_hjb(m, grid, s.lam, tol=s.tol, max_newton=s.max_newton, e_max=s.e_max)
    u, pi, trace = policy_iterate(m, grid, s.lam, n_iters=cfg.policy_iter.iters,
                                  tol=cfg.policy_iter.tol, reference=ref, e_max=s.e_max)
    trace.to_csv(_path(out, "trace.csv"))
    u.to_csv(_path(out, "value_pi.csv"), policy=pi)
    for r in trace.records:
        print(f"n={r.n:3d}  increment={r.increment:.3e}  error={r.error:.3e}")


def cmd_train(cfg: RunConfig, out: str) -> None:
    m = cfg.require_market()
    problem = _problem(m, cfg.training.steps)
    tcfg = _train_config(cfg)
    t0 = time.perf_counter()
    net, curve = train(problem, tcfg, reference=cfg.training.reference, progress=print)
    log.info("training finished in %.1fs", time.perf_counter() - t0)
    curve.to_csv(_path(out, "learning_curve.csv"))
    save_checkpoint(net, _path(out, "checkpoint.npz"))
    print(f"final estimate: {curve.final:.6f}")


def cmd_evaluate(cfg: RunConfig, out: str) -> None:
    m = cfg.require_market()
    ev = cfg.evaluation
    if ev.checkpoint:
        net = load_checkpoint(ev.checkpoint)
        steps, lam = net.L, net.lam
    else:
        steps = ev.steps
        lam = ev.lam if ev.lam is not None else cfg.solver.lam
    problem = _problem(m, steps)
    grid = problem.grid
    test = problem.simulate(ev.test_paths, cfg.seed, 0)
    g = problem.payoffs(test)
    if ev.checkpoint:
        V = np.column_stack([value(net, l, features(m.kind, test.values, l, g[:, l]), g[:, l])
                             for l in range(steps)])
    else:
        _, pgrid = _pde_grid(cfg)
        s = cfg.solver
        u, _ = solve_exploratory_hjb(m, pgrid, lam, tol=s.tol, max_newton=s.max_newton, e_max=s.e_max)
        V = field_path_values(u, test.values, grid)
    pi = policy_from_value(V, g[:, :-1], lam, grid.dt)
    reports = []
    for mode in ev.modes:
        if mode == "threshold":
            rep = threshold_stop_reward(g, V, grid, problem.rate)
        elif mode == "randomized":
            rep = randomized_reward(g, pi, grid, lam, problem.rate, ev.include_entropy)
        else:
            sample = sample_cox_times(pi, grid, cfg.seed, ev.hazard_rule)
            sample.to_csv(_path(out, "cox_sample.csv"))
            rep = cox_reward(g, pi, sample, grid, lam, problem.rate, ev.include_entropy)
        reports.append(rep)
    ref = ev.reference if ev.reference is not None else float("nan")
    comp = comparison_report(reports, ref)
    comp.to_csv(_path(out, "eval_report.csv"))
    text = comp.to_text()
    with atomic_writer(_path(out, "eval_report.txt")) as fh:
        fh.write(text + "\n")
    print(text)


def cmd_sim(cfg: RunConfig, out: str) -> None:
    m = cfg.require_market()
    batch = simulate(m, TimeGrid(cfg.sim.steps, m.horizon), cfg.sim.n_paths, cfg.seed)
    batch.to_csv(_path(out, "paths.csv"))
    print(f"wrote {batch.n_paths} paths x {batch.grid.L + 1} times x {batch.dim} coordinates")


def _row_market(base: MarketConfig, row: dict) -> MarketConfig:
    """Apply a table row: ``d``/``s0`` resize a symmetric basket, anything else overrides."""
    d = dict(base.to_dict())
    row = dict(row)
    if base.kind == "bs-multid" and ("d" in row or "s0" in row):
        dim = int(row.pop("d", base.dim))
        s0 = float(row.pop("s0", base.s0[0]))
        rho = base.corr[0][1] if base.dim > 1 else 0.0
        sym = MarketConfig.symmetric_bs(dim, s0, base.strike, base.rate, base.dividends[0],
                                        base.sigma[0], base.horizon, rho)
        d = sym.to_dict()
    d.update(row)
    return MarketConfig.from_dict(d)


def cmd_table(cfg: RunConfig, out: str) -> None:
    base = cfg.require_market()
    if not cfg.table.rows:
        raise ValueError("table.rows is empty")
    tcfg = _train_config(cfg)
    rows = []
    for row in cfg.table.rows:
        m = _row_market(base, row)
        problem = _problem(m, cfg.training.steps)
        t0 = time.perf_counter()
        net, curve = train(problem, tcfg)
        label = " ".join(f"{k}={v}" for k, v in row.items())
        rep = evaluate_net(net, problem, problem.simulate(tcfg.test_paths, cfg.seed, 0),
                           positive_only=tcfg.positive_only)
        secs = time.perf_counter() - t0
        rows.append((label, rep.estimate, rep.std_error, secs))
        print(f"{label:<24} estimate {rep.estimate:.4f}  se {rep.std_error:.4f}  ({secs:.0f}s)")
    write_csv(_path(out, "table.csv"), ["row", "estimate", "se", "seconds"], rows)


COMMANDS = {
    "solve-pde": (cmd_solve_pde, "exploratory HJB (and classical VI) values and boundaries"),
    "policy-iter": (cmd_policy_iter, "grid policy iteration with a convergence trace"),
    "train": (cmd_train, "TD training; learning curve and checkpoint"),
    "evaluate": (cmd_evaluate, "reward estimates from a checkpoint or the PDE solution"),
    "sim": (cmd_sim, "dump simulated paths"),
    "table": (cmd_table, "train and evaluate a list of market variants"),
}


# ---------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="explore-stop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="YAML run config")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--deterministic", action="store_true", default=None,
                        help="fixed reduction order (single worker)")
        sp.add_argument("--lambda", dest="lam", type=float, help="temperature override")
        sp.add_argument("--grid-n", type=int, help="space half-width in nodes (PDE)")
        sp.add_argument("--iters", type=int, help="training or policy iterations")
    return p


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg = cfg.replace(out=args.out)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.deterministic:
        cfg = cfg.replace(deterministic=True)
    if args.lam is not None:
        if not args.lam > 0:
            raise ValueError(f"--lambda must be > 0, got {args.lam}")
        cfg = cfg.with_section("solver", lam=args.lam).with_section("training", lam=args.lam)
        cfg = cfg.with_section("evaluation", lam=args.lam)
    if args.grid_n is not None:
        if args.grid_n < 2:
            raise ValueError(f"--grid-n must be >= 2, got {args.grid_n}")
        cfg = cfg.with_section("pde", dx=cfg.pde.x_halfwidth / args.grid_n)
    if args.iters is not None:
        if args.iters < 1:
            raise ValueError(f"--iters must be >= 1, got {args.iters}")
        cfg = cfg.with_section("training", iterations=args.iters)
        cfg = cfg.with_section("policy_iter", iters=args.iters)
    return cfg


def _setup_log(path: str) -> logging.Handler:
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("explore_stop")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    log_path = None
    handler = None
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out = cfg.output_dir()
        os.makedirs(out, exist_ok=True)
        log_path = _path(out, "run.log")
        handler = _setup_log(log_path)
        log.info("command %s, config %s", args.command, args.config)
        dump_config(cfg, _path(out, "config.yaml"))
        COMMANDS[args.command][0](cfg, out)
        return 0
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        cause = f"{type(exc).__name__}: {exc}".splitlines()[0]
        if log_path:
            log.exception("command failed")
            print(f"error: {cause} (details in {log_path})", file=sys.stderr)
        else:
            print(f"error: {cause}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            logging.getLogger("explore_stop").removeHandler(handler)
            handler.close()


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
