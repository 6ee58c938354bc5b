"""Command-line entry point: ``labsched <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import tomli

from .agents import TrainConfig, load_policy, save_policy, train
from .cohort import CohortConfig
from .errors import ConfigError, LabSchedError
from .experience import RewardParams, build_buffer, load_buffer, save_buffer
from .harness import datadir
from .harness.config import ExperimentConfig, resolve
from .harness.export import export_reports
from .harness.frontier import frontier
from .harness.sweep import (fit_phi, head, matched_random, prepare_inputs,
                            reference_reports, sweep)
from .policyeval import (PhiEstimator, PhiHParams, QPolicy, ReferencePolicy, eval_context,
                         evaluate_policy, read_reports, write_per_stay, write_reports)
from .trajectory import TrajectoryModel, TrajHParams, train_traj

log = logging.getLogger("labsched")


def _path(p) -> Path:
    """Data paths resolve against the data root when relative."""
    return resolve(p)


def cmd_synth(args) -> int:
    d = {}
    if args.config:
        with open(args.config, "rb") as fh:
            d = tomli.load(fh)
        d = d.get("cohort", d)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.n_stays is not None:
        d["n_stays"] = args.n_stays
    cfg = CohortConfig.from_dict(d)
    ds = datadir.synth_to_dir(cfg, args.out)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items())
    print(f"wrote cohort to {args.out} ({sizes})")
    return 0


def cmd_stats(args) -> int:
    ds = datadir.rebuild_from_raw(_path(args.input), args.split)
    out = Path(args.out) if args.out else _path(args.input) / datadir.STATS
    ds.stats.save(out)
    print("index,mean,std")
    for i, (m, s) in enumerate(zip(ds.stats.mean, ds.stats.std)):
        print(f"{i},{m!r},{s!r}")
    return 0


def cmd_train_traj(args) -> int:
    ds = datadir.load_dataset(_path(args.data))
    hp = TrajHParams(hidden=args.hidden, lr=args.lr, epochs=args.epochs,
                     batch_size=args.batch_size, patience=args.patience, seed=args.seed)
    model, hist = train_traj(ds["train"], ds["val"], hp, log=print)
    model.save(args.out)
    hist.write_csv(args.metrics or str(args.out) + ".metrics.csv")
    print(f"best epoch {hist.best_epoch}: val_auc {max(hist.val_auc):.4f}")
    return 0


def cmd_gen_exp(args) -> int:
    ds = datadir.load_dataset(_path(args.data))
    model = TrajectoryModel.load(args.model)
    eps = head(ds[args.split], args.max_stays)
    orderable = list(range(args.orderable)) if args.orderable else None
    buf = build_buffer(model, eps, RewardParams(args.lam, 0.99, args.sign_flip_time_passing),
                       args.seed, orderable)
    save_buffer(buf, args.out)
    print(f"wrote {len(buf)} tuples from {len(eps)} stays to {args.out}")
    return 0


def cmd_train(args) -> int:
    buf = load_buffer(args.buffer)
    cfg = TrainConfig(lr=args.lr, gamma=args.gamma, seed=args.seed, steps=args.steps,
                      batch_size=args.batch_size, cql_alpha=args.cql_alpha,
                      iql_tau=args.iql_tau, target_sync=args.target_sync,
                      soft_target=args.soft_target)
    result = train(args.algo, buf, cfg)
    save_policy(args.out, result, {"lr": args.lr, "lambda": buf.lam, "seed": args.seed})
    result.write_losses(args.losses or str(args.out) + ".loss.csv")
    print(f"{args.algo}: {cfg.steps} steps, final loss {result.losses[-1]!r}"
          if result.losses else f"{args.algo}: 0 steps")
    return 0


def cmd_train_phi(args) -> int:
    ds = datadir.load_dataset(_path(args.data))
    model = TrajectoryModel.load(args.traj)
    phi = fit_phi(model, ds, args.max_stays, hparams=PhiHParams(seed=args.seed))
    phi.save(args.out)
    print(f"wrote phi estimator to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ds = datadir.load_dataset(_path(args.data))
    model = TrajectoryModel.load(args.traj)
    phi = PhiEstimator.load(args.phi)
    ctx = eval_context(model, head(ds[args.split], args.max_stays))
    if args.policy:
        net, meta = load_policy(args.policy)
        rep = evaluate_policy(QPolicy(net), phi, ctx, args.gamma,
                              policy_id=Path(args.policy).stem, algo=meta.get("algo", ""),
                              lr=meta.get("lr"), lam=meta.get("lambda"), seed=meta.get("seed"))
    else:
        pol = ReferencePolicy(args.reference, args.p, args.seed)
        rep = evaluate_policy(pol, phi, ctx, args.gamma, policy_id=pol.name, algo=pol.kind)
    if args.literal_gamma and rep.G_literal_gamma is not None:
        rep.G, rep.G_literal_gamma = rep.G_literal_gamma, rep.G
    write_reports(args.out, [rep])
    if args.per_stay:
        write_per_stay(args.per_stay, ctx.episodes.stay_ids, rep)
    print(f"{rep.policy_id}: C={rep.C!r} G={rep.G!r}")
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.check_paths()
    ds = datadir.load_dataset(cfg.data)
    model = TrajectoryModel.load(cfg.traj_model)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    phi_path = cfg.phi if cfg.phi is not None else out / "phi.ckpt"
    phi = PhiEstimator.load(phi_path) if Path(phi_path).exists() else None
    inputs = prepare_inputs(cfg, ds, model, phi)
    if phi is None:
        inputs.phi.save(phi_path)

    def progress(res):
        state = "failed" if res.error else "trained" if res.trained else "skipped"
        print(f"{state}: {res.cell}", flush=True)

    result = sweep(cfg, inputs, progress)
    refs = reference_reports(inputs, cfg.gamma)
    write_reports(out / "references.csv", refs)
    write_reports(out / "matched_random.csv",
                  [matched_random(r, inputs, cfg.gamma) for r in result.reports])
    export_reports(frontier(result.reports, refs, cfg.box_edges), out / "frontier")
    print(f"{len(result.reports)} reports, {result.n_trained} trained, "
          f"{len(result.failures)} failed")
    return result.exit_code


def cmd_frontier(args) -> int:
    src = Path(args.input)
    reports_path = src / "reports.csv" if src.is_dir() else src
    reports = read_reports(reports_path)
    refs_path = reports_path.parent / "references.csv"
    refs = read_reports(refs_path) if refs_path.exists() else []
    edges = tuple(float(x) for x in args.edges.split(",")) if args.edges else (0.0, 10.0, 100.0)
    paths = export_reports(frontier(reports, refs, edges), args.out)
    for p in paths.values():
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="labsched",
                                 description="Offline RL for lab-test measurement scheduling")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort directory")
    p.add_argument("--config", help="TOML file with cohort keys (optionally under [cohort])")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-stays", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="recompute population statistics from raw stays")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-traj", help="train the LSTM mortality model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_train_traj)

    p = sub.add_parser("gen-exp", help="convert stays into an experience buffer")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--max-stays", type=int, default=0)
    p.add_argument("--orderable", type=int, default=0, help="number of orderable tests K")
    p.add_argument("--sign-flip-time-passing", action="store_true")
    p.set_defaults(func=cmd_gen_exp)

    p = sub.add_parser("train", help="train a scheduling policy on a buffer")
    p.add_argument("--algo", choices=["bc", "ddqn", "cql", "iql"], required=True)
    p.add_argument("--buffer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--target-sync", type=int, default=1000)
    p.add_argument("--soft-target", action="store_true")
    p.add_argument("--cql-alpha", type=float, default=1.0)
    p.add_argument("--iql-tau", type=float, default=0.7)
    p.add_argument("--losses")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-phi", help="fit the phi regression estimator")
    p.add_argument("--traj", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-stays", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_phi)

    p = sub.add_parser("evaluate", help="estimate (C, G) of a policy")
    p.add_argument("--policy")
    p.add_argument("--reference", choices=["physician", "random", "always-stop"],
                   default="physician")
    p.add_argument("--p", type=float, default=0.1, help="ordering probability for random")
    p.add_argument("--phi", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--literal-gamma", action="store_true")
    p.add_argument("--split", default="test")
    p.add_argument("--max-stays", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--per-stay")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a hyperparameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("frontier", help="export frontier tables and plots from reports")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edges", help="comma-separated cost interval edges")
    p.set_defaults(func=cmd_frontier)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (LabSchedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
