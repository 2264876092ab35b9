"""Command-line entry points: train, eval, verify-bounds.

Exit codes: 0 success, 2 config error, 3 training divergence,
4 checkpoint mismatch, 5 bound violation. Set SKYSEP_LOG to control the
log level (default INFO).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import bounds as bl
from . import network as nw
from .adversary import (CorruptionBounds, fo_perturbation, fo_value_drop,
                        brute_force_worst_case, estimate_lipschitz_grad,
                        remainder_bound_check)
from .config import (ConfigError, load_checkpoint_paths, load_scenario,
                     load_train_config, parse_kv)
from .evaluate import EvalConfig, evaluate_sweep, write_metrics_csv
from .network import CheckpointError, NetConfig
from .trainer import TeacherBundle, TrainingDiverged, pretrain_nominal, \
    robust_train

log = logging.getLogger("skysep")

CURVE_COLUMNS = ("phase", "iteration", "rate", "mean_return", "nmac",
                 "clip", "value", "entropy", "inv", "anchor", "total",
                 "kl_probe")


def _write_curve(path, rows):
    with open(path, "w") as f:
        f.write(",".join(CURVE_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(repr(float(row[c])) if isinstance(row[c], float)
                             else str(row[c]) for c in CURVE_COLUMNS) + "\n")


def cmd_train(args) -> int:
    kv = parse_kv(args.config)
    scenario = load_scenario(kv)
    cfg = load_train_config(kv)
    net_cfg = NetConfig(max_intruders=scenario.max_intruders)
    os.makedirs(args.out, exist_ok=True)
    rows = []

    def logger(phase):
        def emit(row):
            rows.append({"phase": phase, **row})
            log.info("%s it=%d rate=%.2f return=%.3f nmac=%d loss=%.4f",
                     phase, row["iteration"], row["rate"],
                     row["mean_return"], row["nmac"], row["total"])
        return emit

    teacher, _ = pretrain_nominal(
        scenario.make_env, scenario.detect_radius, scenario.max_intruders,
        scenario.corruption_bounds, scenario.feature_norms, net_cfg, cfg,
        log=logger("nominal"))
    nw.save_checkpoint(os.path.join(args.out, "teacher.ckpt"),
                       teacher.params, net_cfg, {"phase": "nominal"})
    robust_params, _ = robust_train(
        scenario.make_env, scenario.detect_radius, scenario.max_intruders,
        scenario.corruption_bounds, scenario.feature_norms, net_cfg, teacher,
        cfg, log=logger("robust"))
    nw.save_checkpoint(os.path.join(args.out, "robust.ckpt"),
                       robust_params, net_cfg, {"phase": "robust"})
    _write_curve(os.path.join(args.out, "training.csv"), rows)
    log.info("wrote checkpoints and training.csv to %s", args.out)
    return 0


def cmd_eval(args) -> int:
    kv = parse_kv(args.config)
    scenario = load_scenario(kv)
    paths = load_checkpoint_paths(kv)
    policies = {}
    for tag, path in paths["policies"].items():
        params, net_cfg, _ = nw.load_checkpoint(path)
        policies[tag] = (params, net_cfg)
    t_params, t_cfg, _ = nw.load_checkpoint(paths["teacher"])
    teacher = TeacherBundle(t_params, t_cfg)
    grid = tuple(float(g) for g in args.grid) if args.grid else \
        EvalConfig.__dataclass_fields__["grid"].default
    cfg = EvalConfig(checkpoints=paths["policies"],
                     teacher_checkpoint=paths["teacher"], grid=grid,
                     episodes=args.episodes, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    records = evaluate_sweep(
        policies, teacher, scenario, cfg,
        progress=lambda r: log.info(
            "R=%.2f %s: nmac %.2f±%.2f minsep %.1f", r.rate, r.policy,
            r.mean_nmac, r.std_nmac, r.mean_min_sep))
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), records)
    log.info("wrote metrics.csv to %s", args.out)
    return 0


def _verify_theorem1(trials, rng, rhs_scale):
    """Linear value functions: the closed-form perturbation is exact."""
    failures = 0
    rows_shape = (2, 6)
    for _ in range(trials):
        grad = rng.normal(size=rows_shape)
        grad[rng.random(rows_shape) < 0.15] = 0.0
        radius = rng.uniform(0.0, 2.0, rows_shape)
        radius[rng.random(rows_shape) < 0.2] = 0.0
        s = rng.normal(size=rows_shape)
        bias = rng.normal()
        bounds = CorruptionBounds(radius)

        def value_fn(batch):
            return bias + np.tensordot(batch, grad, axes=2)

        fo = fo_perturbation(s, grad, bounds, wrap_heading=False)
        oracle_min, _ = brute_force_worst_case(
            value_fn, s, bounds, max_grid_dims=0, refine_steps=0)
        fo_min = fo_value_drop(float(value_fn(s[None])[0]), grad, bounds)
        gap = abs(float(value_fn(fo.perturbed[None])[0]) - oracle_min)
        est_gap = abs(fo_min - oracle_min)
        if max(gap, est_gap) > 1e-12 * rhs_scale:
            failures += 1
    return failures


def _verify_theorem2(quad_trials, net_trials, rng, rhs_scale, out_rows):
    failures = 0
    for _ in range(quad_trials):
        n = 4
        a = rng.normal(size=(n, n))
        quad = (a + a.T) / 2
        lin = rng.normal(size=n)
        s = rng.normal(size=(1, n))
        radius = rng.uniform(0.0, 0.5, (1, n))
        bounds = CorruptionBounds(radius)

        def value_fn(batch):
            x = batch.reshape(batch.shape[0], n) - s.ravel()
            return x @ lin + 0.5 * np.einsum("bi,ij,bj->b", x, quad, x)

        def grad_fn(pt):
            x = pt.ravel() - s.ravel()
            return (lin + quad @ x).reshape(1, n)

        lipschitz = float(np.linalg.norm(quad, 2))
        rep = remainder_bound_check(value_fn, s, bounds,
                                    lipschitz * rhs_scale, grad_fn=grad_fn,
                                    max_grid_dims=4)
        out_rows.append(rep)
        failures += not rep.passed
    for trial in range(net_trials):
        n = 4
        w1 = rng.normal(0, 1.0, (n, 8))
        b1 = rng.normal(0, 0.3, 8)
        w2 = rng.normal(0, 1.0, (8, 1))
        s = rng.normal(size=(1, n))
        radius = rng.uniform(0.0, 0.3, (1, n))
        bounds = CorruptionBounds(radius)

        def value_fn(batch):
            x = batch.reshape(batch.shape[0], n)
            return (np.tanh(x @ w1 + b1) @ w2).ravel()

        def grad_fn(pt):
            h = pt.ravel() @ w1 + b1
            return (w1 @ ((1 - np.tanh(h)**2) * w2.ravel())).reshape(1, n)

        lipschitz = estimate_lipschitz_grad(
            value_fn, s, bounds, 24, rng, grad_fn=grad_fn) * 1.5
        rep = remainder_bound_check(value_fn, s, bounds,
                                    lipschitz * rhs_scale, grad_fn=grad_fn,
                                    max_grid_dims=4)
        out_rows.append(rep)
        failures += not rep.passed
    return failures


def _verify_pinsker(trials, rng, rhs_scale, out_rows):
    failures = 0
    for _ in range(trials):
        mdp = bl.random_mdp(rng, int(rng.integers(2, 8)),
                            int(rng.integers(2, 5)),
                            float(rng.uniform(0.3, 0.95)))
        p = bl.random_policy(rng, mdp.n_states, mdp.n_actions)
        q = bl.random_policy(rng, mdp.n_states, mdp.n_actions)
        rec = bl.check_performance_bound(mdp, p, q)
        rec = bl.BoundCheckRecord(rec.lhs, rec.rhs * rhs_scale,
                                  rec.kl_budget, rec.q_max,
                                  rec.lhs <= rec.rhs * rhs_scale + 1e-9,
                                  rec.context)
        out_rows.append(rec)
        failures += not rec.passed
    return failures


def _verify_contamination(trials, rollouts, rng, rhs_scale, out_rows):
    failures = 0
    for _ in range(trials):
        mdp = bl.random_mdp(rng, int(rng.integers(2, 8)),
                            int(rng.integers(2, 4)),
                            float(rng.uniform(0.5, 0.9)))
        p = bl.random_policy(rng, mdp.n_states, mdp.n_actions)
        q = bl.random_policy(rng, mdp.n_states, mdp.n_actions)
        for rate in (0.25, 0.5, 0.9):
            rec = bl.check_robust_value_bound(mdp, p, q, rate, rng,
                                              n_rollouts=rollouts)
            rhs = rec.rhs * rhs_scale
            rec = bl.BoundCheckRecord(
                rec.lhs, rhs, rec.kl_budget, rec.q_max,
                rec.lhs <= rhs + 3 * rec.mc_sigma + 1e-9, rec.context,
                rec.mc_sigma)
            out_rows.append(rec)
            failures += not rec.passed
    return failures


def cmd_verify_bounds(args) -> int:
    trials = args.trials if args.trials else (10 if args.quick else 200)
    rollouts = 2000 if args.quick else 20000
    rng = np.random.default_rng(args.seed)
    rows = []
    f1 = _verify_theorem1(trials, rng, args.rhs_scale)
    f2 = _verify_theorem2(trials, max(trials // 5, 1), rng, args.rhs_scale,
                          rows)
    f3 = _verify_pinsker(trials, rng, args.rhs_scale, rows)
    f4 = _verify_contamination(max(trials // 5, 1), rollouts, rng,
                               args.rhs_scale, rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bounds.csv"), "w") as f:
            f.write(bl.BoundCheckRecord.CSV_HEADER + "\n")
            for rec in rows:
                f.write(rec.csv_row() + "\n")
    total = f1 + f2 + f3 + f4
    for name, fails in (("first-order exactness", f1),
                        ("remainder bound", f2),
                        ("performance bound", f3),
                        ("contamination bound", f4)):
        print(f"{name}: {'PASS' if fails == 0 else f'FAIL ({fails})'}")
    if total:
        log.error("%d bound violations detected", total)
        return 5
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="skysep")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="two-phase training run")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="corruption-rate sweep")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--grid", nargs="*", type=float, default=None)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(fn=cmd_eval)

    p_ver = sub.add_parser("verify-bounds", help="randomized bound suites")
    p_ver.add_argument("--trials", type=int, default=None)
    p_ver.add_argument("--quick", action="store_true")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", default=None)
    # test hook: scale every right-hand side to prove violations are caught
    p_ver.add_argument("--rhs-scale", type=float, default=1.0,
                       help=argparse.SUPPRESS)
    p_ver.set_defaults(fn=cmd_verify_bounds)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SKYSEP_LOG", "INFO"))
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
