"""Command-line runner: generate / fit / inject / prune / augment / cv / sweep.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  ``ACD_SEED``
overrides ``--seed`` when set.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import em, pipelines, sampler
from .graph import load_attributes, load_edgelist, save_edgelist
from .model import Hyperparams


class UsageError(Exception):
    pass


def _add_fit_args(p):
    p.add_argument("--k", type=int, required=True, help="number of communities")
    p.add_argument("--seeds", type=int, default=5, help="random restarts")
    p.add_argument("--max-iter", type=int, default=1000, help="EM iteration cap")
    p.add_argument("--tol", type=float, default=1e-4, help="objective convergence tolerance")
    p.add_argument("--check-every", type=int, default=10, help="iterations between convergence checks")
    p.add_argument("--patience", type=int, default=3, help="consecutive small checks to converge")
    p.add_argument("--init-mu", type=float, default=0.5, help="initial anomaly prior mu")
    p.add_argument("--init-pi", type=float, default=None,
                   help="initial anomalous Poisson mean (default: half the mean positive weight)")
    p.add_argument("--a", type=float, default=1.0, help="Gamma prior shape on memberships")
    p.add_argument("--b", type=float, default=1.0, help="Gamma prior rate on memberships")
    p.add_argument("--cd", action="store_true", help="community-detection baseline (mu=pi=0 fixed)")
    p.add_argument("--pin-mu", action="store_true", help="keep mu fixed at --init-mu")
    p.add_argument("--single-factor", action="store_true",
                   help="one Poisson factor per undirected pair in the anomaly posterior")


def _add_input_args(p, attributes=False):
    p.add_argument("--input", required=True, help="edge-list file")
    p.add_argument("--directed", action="store_true", help="treat input as directed")
    p.add_argument("--weighted", action="store_true", help="third column carries weights")
    if attributes:
        p.add_argument("--attributes", default=None,
                       help="node category file for community ground truth")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acd",
        description="Joint community and edge-anomaly inference on networks.")
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed (env ACD_SEED overrides)")
    parser.add_argument("--out", default="acd-out", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for replicates/folds")
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("generate", formatter_class=fmt,
                       help="sample a synthetic network with planted communities and anomalies")
    p.add_argument("--n", type=int, required=True, help="number of nodes")
    p.add_argument("--k", type=int, required=True, help="number of communities")
    p.add_argument("--avg-degree", type=float, required=True, help="target average degree")
    p.add_argument("--rho-a", type=float, required=True, help="target anomalous edge ratio")
    p.add_argument("--pi", type=float, required=True, help="anomalous Poisson mean")
    p.add_argument("--overlapping", action="store_true", help="Dirichlet mixed memberships")
    p.add_argument("--directed", action="store_true", help="sample a directed network")

    p = sub.add_parser("fit", formatter_class=fmt, help="fit the model on an edge list")
    _add_input_args(p)
    _add_fit_args(p)

    p = sub.add_parser("inject", formatter_class=fmt,
                       help="anomaly-injection experiment (precision/recall/AUC)")
    _add_input_args(p, attributes=True)
    _add_fit_args(p)
    p.add_argument("--rho-a", type=float, required=True, help="injected edge ratio")
    p.add_argument("--replicates", type=int, default=20, help="independent repetitions")
    p.add_argument("--threshold", type=float, default=0.5, help="Q cut for the confusion matrix")
    p.add_argument("--auc-negatives", choices=["edges", "all-pairs"], default="edges",
                   help="negative class for the anomaly AUC")

    p = sub.add_parser("prune", formatter_class=fmt,
                       help="2-step removal: fit, drop flagged edges, refit CD")
    _add_input_args(p, attributes=True)
    _add_fit_args(p)
    p.add_argument("--n-remove", type=int, default=None, help="remove the top-k flagged edges")
    p.add_argument("--rel-threshold", type=float, default=0.7,
                   help="relative-to-max Q cut when --n-remove is unset")
    p.add_argument("--replicates", type=int, default=20, help="independent repetitions")
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds for the AUC")
    p.add_argument("--no-cv", action="store_true", help="skip the link-prediction AUC")

    p = sub.add_parser("augment", formatter_class=fmt,
                       help="2-step addition: fit, add top anomalous non-edges, refit CD")
    _add_input_args(p, attributes=True)
    _add_fit_args(p)
    p.add_argument("--n-add", type=int, required=True, help="non-edges to add")
    p.add_argument("--replicates", type=int, default=20, help="independent repetitions")

    p = sub.add_parser("cv", formatter_class=fmt, help="link-prediction cross-validation")
    _add_input_args(p)
    _add_fit_args(p)
    p.add_argument("--folds", type=int, default=5, help="number of folds")

    p = sub.add_parser("sweep", formatter_class=fmt,
                       help="synthetic sweep over the anomalous-edge ratio")
    p.add_argument("--n", type=int, required=True, help="number of nodes")
    p.add_argument("--k", type=int, required=True, help="number of communities")
    p.add_argument("--avg-degree", type=float, required=True, help="target average degree")
    p.add_argument("--pi", type=float, required=True, help="anomalous Poisson mean")
    p.add_argument("--rho-a", required=True,
                   help="grid as start:stop:step (inclusive) or comma list")
    p.add_argument("--replicates", type=int, default=20, help="samples per grid point")
    p.add_argument("--overlapping", action="store_true", help="Dirichlet mixed memberships")
    p.add_argument("--directed", action="store_true", help="sample directed networks")
    _add_fit_args(p)

    return parser


def _parse_grid(text):
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("--rho-a grid must be start:stop:step")
        start, stop, step = (float(t) for t in parts)
        if step <= 0:
            raise UsageError("--rho-a step must be positive")
        return [round(x, 10) for x in np.arange(start, stop + step / 2, step)]
    return [float(t) for t in text.split(",")]


def _check(cond, message):
    if not cond:
        raise UsageError(message)


def _fit_config(args, seed):
    _check(args.k >= 1, "--k must be >= 1")
    _check(args.seeds >= 1, "--seeds must be >= 1")
    _check(args.tol > 0, "--tol must be positive")
    _check(0 < args.init_mu < 1, "--init-mu must lie in (0, 1)")
    _check(args.a >= 1, "--a must be >= 1")
    _check(args.b >= 0, "--b must be >= 0")
    hyper = Hyperparams(k=args.k, a=args.a, b=args.b)
    opts = em.FitOptions(
        n_seeds=args.seeds, max_iter=args.max_iter, tol=args.tol,
        check_every=args.check_every, patience=args.patience,
        init_mu=args.init_mu, init_pi=args.init_pi, fixed_mu_pi=args.cd,
        rng_seed=seed, pin_mu=args.pin_mu,
        undirected_single_factor=args.single_factor)
    return hyper, opts


def _load_input(args):
    _check(os.path.exists(args.input), f"--input file not found: {args.input}")
    net = load_edgelist(args.input, directed=args.directed, weighted=args.weighted)
    if getattr(args, "attributes", None):
        _check(os.path.exists(args.attributes),
               f"--attributes file not found: {args.attributes}")
        net = load_attributes(args.attributes, net)
    return net


def _run_dir(args, config):
    path = os.path.join(args.out, f"{args.command}-{pipelines.config_hash(config)}")
    os.makedirs(path, exist_ok=True)
    return path


def _cmd_generate(args, seed):
    _check(args.k >= 1, "--k must be >= 1")
    _check(0 <= args.rho_a < 1, "--rho-a must lie in [0, 1)")
    _check(args.pi > 0 or args.rho_a == 0, "--pi must be positive when --rho-a > 0")
    cfg = sampler.PlantedConfig(
        n_nodes=args.n, k=args.k, avg_degree=args.avg_degree, rho_a=args.rho_a,
        pi=args.pi, overlapping=args.overlapping, directed=args.directed,
        rng_seed=seed)
    net, labeling, params, stats = sampler.generate(cfg)
    config = {"command": "generate", "n": args.n, "k": args.k,
              "avg_degree": args.avg_degree, "rho_a": args.rho_a, "pi": args.pi,
              "overlapping": args.overlapping, "directed": args.directed, "seed": seed}
    run = _run_dir(args, config)
    save_edgelist(net, os.path.join(run, "network.tsv"))
    with open(os.path.join(run, "labels.json"), "w") as fh:
        json.dump(labeling.to_json() | {"stats": stats}, fh)
    params.save(os.path.join(run, "planted_params.json"))
    with open(os.path.join(run, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2)
    print(run)
    return 0


def _cmd_fit(args, seed):
    hyper, opts = _fit_config(args, seed)
    net = _load_input(args)
    res = em.fit(net, hyper, opts)
    os.makedirs(args.out, exist_ok=True)
    res.params.save(os.path.join(args.out, "params.json"))
    res.q.to_csv(os.path.join(args.out, "Q.csv"))
    report = {
        "command": "fit", "input": args.input, "seed": seed,
        "hyper": pipelines._hyper_dict(hyper), "fit": pipelines._opts_dict(opts),
        "converged": res.converged, "n_iters": res.n_iters,
        "seed_used": res.seed_used, "log_posterior": res.logpost_trace[-1],
        "logpost_trace": res.logpost_trace, "diagnostics": res.diagnostics,
    }
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(args.out)
    return 0


def _cmd_inject(args, seed):
    hyper, opts = _fit_config(args, seed)
    _check(0 <= args.rho_a < 1, "--rho-a must lie in [0, 1)")
    _check(args.replicates >= 1, "--replicates must be >= 1")
    net = _load_input(args)
    config = {"command": "inject", "input": args.input, "rho_a": args.rho_a,
              "threshold": args.threshold, "auc_negatives": args.auc_negatives,
              "replicates": args.replicates, "seed": seed,
              "fit": pipelines._opts_dict(opts), "hyper": pipelines._hyper_dict(hyper)}
    run = _run_dir(args, config)
    pipelines.run_injection(
        net, args.rho_a, hyper, opts, replicates=args.replicates, seed=seed,
        threshold=args.threshold, auc_negatives=args.auc_negatives,
        threads=args.threads, out_dir=run)
    print(run)
    return 0


def _cmd_prune(args, seed):
    hyper, opts = _fit_config(args, seed)
    _check(args.attributes, "--attributes is required for prune")
    net = _load_input(args)
    config = {"command": "prune", "input": args.input, "n_remove": args.n_remove,
              "rel_threshold": args.rel_threshold, "replicates": args.replicates,
              "folds": args.folds, "no_cv": args.no_cv, "seed": seed,
              "fit": pipelines._opts_dict(opts), "hyper": pipelines._hyper_dict(hyper)}
    run = _run_dir(args, config)
    pipelines.run_remove_2step(
        net, hyper, opts, n_remove=args.n_remove, rel_threshold=args.rel_threshold,
        replicates=args.replicates, seed=seed, cv_folds=args.folds,
        do_cv=not args.no_cv, threads=args.threads, out_dir=run)
    print(run)
    return 0


def _cmd_augment(args, seed):
    hyper, opts = _fit_config(args, seed)
    _check(args.attributes, "--attributes is required for augment")
    _check(args.n_add >= 0, "--n-add must be >= 0")
    net = _load_input(args)
    config = {"command": "augment", "input": args.input, "n_add": args.n_add,
              "replicates": args.replicates, "seed": seed,
              "fit": pipelines._opts_dict(opts), "hyper": pipelines._hyper_dict(hyper)}
    run = _run_dir(args, config)
    pipelines.run_add_2step(net, hyper, opts, n_add=args.n_add,
                            replicates=args.replicates, seed=seed,
                            threads=args.threads, out_dir=run)
    print(run)
    return 0


def _cmd_cv(args, seed):
    hyper, opts = _fit_config(args, seed)
    _check(args.folds >= 2, "--folds must be >= 2")
    net = _load_input(args)
    config = {"command": "cv", "input": args.input, "folds": args.folds, "seed": seed,
              "fit": pipelines._opts_dict(opts), "hyper": pipelines._hyper_dict(hyper)}
    run = _run_dir(args, config)
    pipelines.run_link_prediction_cv(net, hyper, opts, folds=args.folds, seed=seed,
                                     threads=args.threads, out_dir=run)
    print(run)
    return 0


def _cmd_sweep(args, seed):
    hyper, opts = _fit_config(args, seed)
    grid = _parse_grid(args.rho_a)
    _check(all(0 <= r < 1 for r in grid), "--rho-a values must lie in [0, 1)")
    _check(args.replicates >= 1, "--replicates must be >= 1")
    cfg = sampler.PlantedConfig(
        n_nodes=args.n, k=args.k, avg_degree=args.avg_degree, rho_a=grid[0],
        pi=args.pi, overlapping=args.overlapping, directed=args.directed,
        rng_seed=seed)
    config = {"command": "sweep", "n": args.n, "k": args.k,
              "avg_degree": args.avg_degree, "pi": args.pi, "rho_grid": grid,
              "replicates": args.replicates, "seed": seed,
              "fit": pipelines._opts_dict(opts), "hyper": pipelines._hyper_dict(hyper)}
    run = _run_dir(args, config)
    pipelines.run_synthetic_sweep(cfg, grid, hyper, opts, replicates=args.replicates,
                                  seed=seed, threads=args.threads, out_dir=run)
    print(run)
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "inject": _cmd_inject,
    "prune": _cmd_prune,
    "augment": _cmd_augment,
    "cv": _cmd_cv,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    seed = args.seed
    if os.environ.get("ACD_SEED"):
        try:
            seed = int(os.environ["ACD_SEED"])
        except ValueError:
            print("ACD_SEED must be an integer", file=sys.stderr)
            return 1
    try:
        return _COMMANDS[args.command](args, seed)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main(sys.argv[1:]))
