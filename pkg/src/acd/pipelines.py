"""The experiment procedures: anomaly injection, 2-step removal/addition,
synthetic sweeps, and link-prediction cross-validation.

Every pipeline is a pure function of (inputs, config, seed): replicate seeds
are derived up front from the master seed, so reruns produce identical reports
and replicates may execute in parallel without changing the result.
"""

import csv
import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import em, metrics, sampler
from .graph import add_pairs, inject_anomalies, remove_pairs, save_edgelist


@dataclass(frozen=True)
class MetricSummary:
    name: str
    mean: float
    std: float  # None when a single replicate
    n_replicates: int
    values: tuple

    @classmethod
    def of(cls, name, values):
        vals = [float(x) for x in values]
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
        return cls(name, float(np.mean(vals)), std, len(vals), tuple(vals))


@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    config: dict
    metrics: list
    artifacts: dict

    def metric(self, name):
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    @property
    def run_id(self):
        return config_hash(self.config)

    def to_json(self):
        return {
            "experiment": self.experiment,
            "run_id": self.run_id,
            "config": self.config,
            "metrics": [
                {"name": m.name, "mean": m.mean, "std": m.std,
                 "n_replicates": m.n_replicates, "values": list(m.values)}
                for m in self.metrics
            ],
            "artifacts": self.artifacts,
        }

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
        with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run_id", "experiment", "metric", "mean", "std", "n_replicates"])
            for m in sorted(self.metrics, key=lambda m: m.name):
                writer.writerow([self.run_id, self.experiment, m.name,
                                 m.mean, "" if m.std is None else m.std, m.n_replicates])


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _child_seed(master, *key):
    return int(np.random.SeedSequence([int(master), *[int(k) for k in key]]).generate_state(1)[0])


def _map_indexed(fn, n, threads):
    """fn(i) for i in range(n), optionally on a thread pool; order preserved."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _attr_matrix(net):
    if net.attributes is None:
        return None
    onehot, _ = metrics.one_hot_from_attributes(net.attributes)
    return onehot


def marginal_edge_score(params, i, j):
    """Model marginal probability that the unordered pair (i, j) carries an edge."""
    m = float(params.u[i] * params.w @ params.v[j])
    m_t = float(params.u[j] * params.w @ params.v[i])
    m_bar = 0.5 * (m + m_t)
    return float(params.mu * -np.expm1(-params.pi)
                 + (1.0 - params.mu) * -np.expm1(-m_bar))


def run_synthetic_sweep(base_cfg, rho_grid, hyper, opts, replicates, seed=0,
                        threads=1, out_dir=None):
    """Per rho_a: sample, fit the anomaly-aware model and the CD baseline,
    report community cosine similarity for both and anomaly F1 (Q >= 0.5 on
    realized edges)."""
    rho_grid = [float(r) for r in rho_grid]
    cd_opts = replace(opts, fixed_mu_pi=True)

    def one_cell(gi, rho, rep):
        cfg = replace(base_cfg, rho_a=rho, rng_seed=_child_seed(seed, gi, rep, 0))
        net, truth, planted, stats = sampler.generate(cfg)
        acd = em.fit(net, hyper, replace(opts, rng_seed=_child_seed(seed, gi, rep, 1)))
        cd = em.fit(net, hyper, replace(cd_opts, rng_seed=_child_seed(seed, gi, rep, 2)))
        cs_acd = metrics.cosine_similarity_matched(acd.params.u, planted.u)
        cs_cd = metrics.cosine_similarity_matched(cd.params.u, planted.u)
        edges = net.adjacent_pairs()
        if edges:
            pred = em.classify_anomalies(acd.q, "threshold_abs", 0.5, em.EDGES_ONLY, net)
            f1 = metrics.confusion(pred, truth, edges).f1
        else:
            f1 = 0.0
        return {"cs_acd": cs_acd, "cs_cd": cs_cd, "anomaly_f1": f1,
                "realized_rho_a": stats["realized_rho_a"]}

    out = []
    for gi, rho in enumerate(rho_grid):
        cells = _map_indexed(lambda rep: one_cell(gi, rho, rep), replicates, threads)
        for name in ("cs_acd", "cs_cd", "anomaly_f1", "realized_rho_a"):
            out.append(MetricSummary.of(f"{name}@rho_a={rho:g}", [c[name] for c in cells]))

    config = {"experiment": "synthetic_sweep", "n_nodes": base_cfg.n_nodes,
              "k": base_cfg.k, "avg_degree": base_cfg.avg_degree, "pi": base_cfg.pi,
              "overlapping": base_cfg.overlapping, "directed": base_cfg.directed,
              "rho_grid": rho_grid, "replicates": replicates, "seed": seed,
              "fit": _opts_dict(opts), "hyper": _hyper_dict(hyper)}
    report = ExperimentReport("synthetic_sweep", config, out, {})
    if out_dir:
        report.save(out_dir)
    return report


def run_injection(net, rho_a, hyper, opts, replicates=20, seed=0, threshold=0.5,
                  auc_negatives="edges", threads=1, out_dir=None):
    """Inject anomalies, fit, classify at an absolute Q threshold, score.

    AUC positives are the injected pairs; negatives default to the
    pre-existing edges (``auc_negatives='all-pairs'`` widens them to every
    non-injected pair).
    """
    truth_attrs = _attr_matrix(net)

    def one(rep):
        injected_net, truth = inject_anomalies(net, rho_a, _child_seed(seed, rep, 0))
        res = em.fit(injected_net, hyper, replace(opts, rng_seed=_child_seed(seed, rep, 1)))
        edges = injected_net.adjacent_pairs()
        pred = em.classify_anomalies(res.q, "threshold_abs", threshold, em.EDGES_ONLY,
                                     injected_net)
        conf = metrics.confusion(pred, truth, edges)
        injected = truth.anomalous
        if auc_negatives == "all-pairs":
            n = net.n_nodes
            negs = [(i, j) for i in range(n) for j in range(i + 1, n)
                    if (i, j) not in injected]
        else:
            negs = sorted(truth.regular)
        row = {"precision": conf.precision, "recall": conf.recall, "f1": conf.f1}
        if injected and negs:
            scores = {p: res.q.values[p] for p in list(injected) + list(negs)}
            row["auc"] = metrics.auc_ranking(scores, injected, negs)
        if truth_attrs is not None:
            row["cs"] = metrics.cosine_similarity_matched(res.params.u, truth_attrs)
        return row, injected_net, truth

    results = _map_indexed(one, replicates, threads)
    rows = [t[0] for t in results]
    injected0, truth0 = results[0][1], results[0][2]

    names = sorted({k for row in rows for k in row})
    summaries = [MetricSummary.of(name, [row[name] for row in rows if name in row])
                 for name in names]
    config = {"experiment": "injection", "rho_a": rho_a, "replicates": replicates,
              "seed": seed, "threshold": threshold, "auc_negatives": auc_negatives,
              "n_nodes": net.n_nodes, "n_edges": net.n_edges,
              "fit": _opts_dict(opts), "hyper": _hyper_dict(hyper)}
    artifacts = {}
    report = ExperimentReport("injection", config, summaries, artifacts)
    if out_dir:
        report.save(out_dir)
        net_path = os.path.join(out_dir, "injected_rep0.tsv")
        save_edgelist(injected0, net_path)
        lab_path = os.path.join(out_dir, "truth_rep0.json")
        with open(lab_path, "w") as fh:
            json.dump(truth0.to_json(), fh)
        artifacts.update({"injected_network": net_path, "truth_labels": lab_path})
        report.save(out_dir)
    return report


def run_remove_2step(net, hyper, opts, n_remove=None, rel_threshold=0.7,
                     replicates=20, seed=0, cv_folds=5, do_cv=True,
                     threads=1, out_dir=None):
    """Fit the anomaly model, remove the edges it flags, refit plain CD.

    Reports community similarity before (CD on the original network) and after
    (CD on the pruned network), and link-prediction AUC on original and pruned
    networks via cross-validation (one CV per network, on replicate 0's
    pruning).
    """
    truth_attrs = _attr_matrix(net)
    if truth_attrs is None:
        raise ValueError("remove-2step needs node attributes for community scores")
    cd_opts = replace(opts, fixed_mu_pi=True)

    def one(rep):
        cd_before = em.fit(net, hyper, replace(cd_opts, rng_seed=_child_seed(seed, rep, 0)))
        acd = em.fit(net, hyper, replace(opts, rng_seed=_child_seed(seed, rep, 1)))
        if n_remove is not None:
            pred = em.classify_anomalies(acd.q, "top_k", n_remove, em.EDGES_ONLY, net)
        else:
            pred = em.classify_anomalies(acd.q, "threshold_relmax", rel_threshold,
                                         em.EDGES_ONLY, net)
        flagged = sorted(pred.anomalous)
        cs_before = metrics.cosine_similarity_matched(cd_before.params.u, truth_attrs)
        if flagged:
            pruned = remove_pairs(net, flagged)
            cd_after = em.fit(pruned, hyper, replace(cd_opts, rng_seed=_child_seed(seed, rep, 2)))
            cs_after = metrics.cosine_similarity_matched(cd_after.params.u, truth_attrs)
        else:
            pruned = net
            cs_after = cs_before
        return {"cs_before": cs_before, "cs_after": cs_after,
                "n_removed": len(flagged)}, pruned, flagged

    rows_full = _map_indexed(lambda r: one(r), replicates, threads)
    rows = [r[0] for r in rows_full]
    pruned0, flagged0 = rows_full[0][1], rows_full[0][2]

    summaries = [MetricSummary.of(name, [row[name] for row in rows])
                 for name in ("cs_before", "cs_after", "n_removed")]
    if not any(row["n_removed"] for row in rows):
        warnings.warn("no edges cleared the anomaly cut; CS-after equals CS-before")
    if do_cv:
        cv_before = run_link_prediction_cv(net, hyper, opts, folds=cv_folds,
                                           seed=_child_seed(seed, 10**6), threads=threads)
        summaries.append(MetricSummary.of("auc_before", cv_before.metric("auc").values))
        if flagged0:
            cv_after = run_link_prediction_cv(pruned0, hyper, opts, folds=cv_folds,
                                              seed=_child_seed(seed, 10**6 + 1),
                                              threads=threads)
            summaries.append(MetricSummary.of("auc_after", cv_after.metric("auc").values))

    config = {"experiment": "remove2step", "n_remove": n_remove,
              "rel_threshold": rel_threshold, "replicates": replicates, "seed": seed,
              "cv_folds": cv_folds, "n_nodes": net.n_nodes, "n_edges": net.n_edges,
              "fit": _opts_dict(opts), "hyper": _hyper_dict(hyper)}
    artifacts = {}
    report = ExperimentReport("remove2step", config, summaries, artifacts)
    if out_dir:
        report.save(out_dir)
        pruned_path = os.path.join(out_dir, "pruned_rep0.tsv")
        save_edgelist(pruned0, pruned_path)
        removed_path = os.path.join(out_dir, "removed_rep0.json")
        with open(removed_path, "w") as fh:
            json.dump([list(p) for p in flagged0], fh)
        artifacts.update({"pruned_network": pruned_path, "removed_pairs": removed_path})
        report.save(out_dir)
    return report


def run_add_2step(net, hyper, opts, n_add, replicates=20, seed=0,
                  threads=1, out_dir=None):
    """Fit the anomaly model, add its top-scoring non-edges, refit plain CD."""
    truth_attrs = _attr_matrix(net)
    if truth_attrs is None:
        raise ValueError("add-2step needs node attributes for community scores")
    if n_add > 0.05 * net.n_edges:
        raise ValueError(f"n_add={n_add} exceeds 5% of the {net.n_edges} edges")
    cd_opts = replace(opts, fixed_mu_pi=True)

    def one(rep):
        cd_before = em.fit(net, hyper, replace(cd_opts, rng_seed=_child_seed(seed, rep, 0)))
        acd = em.fit(net, hyper, replace(opts, rng_seed=_child_seed(seed, rep, 1)))
        pred = em.classify_anomalies(acd.q, "top_k", n_add, em.NONEDGES_ONLY, net)
        added = sorted(pred.anomalous)
        augmented = add_pairs(net, added) if added else net
        cd_after = em.fit(augmented, hyper, replace(cd_opts, rng_seed=_child_seed(seed, rep, 2)))
        return {
            "cs_before": metrics.cosine_similarity_matched(cd_before.params.u, truth_attrs),
            "cs_after": metrics.cosine_similarity_matched(cd_after.params.u, truth_attrs),
            "f1_before": metrics.macro_f1_matched(cd_before.params.u, truth_attrs),
            "f1_after": metrics.macro_f1_matched(cd_after.params.u, truth_attrs),
            "cs_acd": metrics.cosine_similarity_matched(acd.params.u, truth_attrs),
        }, augmented, added

    rows_full = _map_indexed(lambda r: one(r), replicates, threads)
    rows = [r[0] for r in rows_full]
    augmented0, added0 = rows_full[0][1], rows_full[0][2]
    summaries = [MetricSummary.of(name, [row[name] for row in rows])
                 for name in ("cs_before", "cs_after", "f1_before", "f1_after", "cs_acd")]
    config = {"experiment": "add2step", "n_add": n_add, "replicates": replicates,
              "seed": seed, "n_nodes": net.n_nodes, "n_edges": net.n_edges,
              "fit": _opts_dict(opts), "hyper": _hyper_dict(hyper)}
    artifacts = {}
    report = ExperimentReport("add2step", config, summaries, artifacts)
    if out_dir:
        report.save(out_dir)
        aug_path = os.path.join(out_dir, "augmented_rep0.tsv")
        save_edgelist(augmented0, aug_path)
        added_path = os.path.join(out_dir, "added_rep0.json")
        with open(added_path, "w") as fh:
            json.dump([list(p) for p in added0], fh)
        artifacts.update({"augmented_network": aug_path, "added_pairs": added_path})
        report.save(out_dir)
    return report


def _make_folds(net, folds, seed, max_attempts=10):
    """Partition edges and an equal-count non-edge sample into folds.

    Returns a list of (test_edges, test_nonedges) with every fold holding at
    least one edge; refolds with a fresh seed up to max_attempts otherwise.
    """
    edges = sorted(net.adjacent_pairs())
    nonedges = net.nonadjacent_pairs()
    if len(edges) < folds:
        raise ValueError(f"{len(edges)} edges cannot fill {folds} folds")
    n_sample = min(len(edges), len(nonedges))
    for attempt in range(max_attempts):
        rng = np.random.default_rng(_child_seed(seed, attempt))
        eperm = rng.permutation(len(edges))
        nchoice = rng.choice(len(nonedges), size=n_sample, replace=False)
        esplit = np.array_split(eperm, folds)
        nsplit = np.array_split(nchoice, folds)
        if all(len(es) > 0 and len(ns) > 0 for es, ns in zip(esplit, nsplit)):
            return [
                ([edges[t] for t in es], [nonedges[t] for t in ns])
                for es, ns in zip(esplit, nsplit)
            ]
    raise ValueError(f"could not build {folds} folds with edges in each after {max_attempts} tries")


def run_link_prediction_cv(net, hyper, opts, folds=5, seed=0, threads=1, out_dir=None):
    """K-fold link prediction: held-out pairs leave every E/M sum; AUC on the
    held-out edges against the held-out non-edge sample using the model's
    marginal edge probability."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    fold_sets = _make_folds(net, folds, seed)

    def one(fi):
        test_edges, test_nonedges = fold_sets[fi]
        mask = list(test_edges) + list(test_nonedges)
        res = em.fit(net, hyper, replace(opts, rng_seed=_child_seed(seed, fi, 7)), mask=mask)
        scores = {p: marginal_edge_score(res.params, *p) for p in mask}
        return metrics.auc_ranking(scores, test_edges, test_nonedges)

    aucs = _map_indexed(one, folds, threads)
    config = {"experiment": "cv", "folds": folds, "seed": seed,
              "n_nodes": net.n_nodes, "n_edges": net.n_edges,
              "fit": _opts_dict(opts), "hyper": _hyper_dict(hyper)}
    report = ExperimentReport("cv", config, [MetricSummary.of("auc", aucs)], {})
    if out_dir:
        report.save(out_dir)
    return report


def _opts_dict(opts):
    return {
        "n_seeds": opts.n_seeds, "max_iter": opts.max_iter, "tol": opts.tol,
        "check_every": opts.check_every, "patience": opts.patience,
        "init_mu": opts.init_mu, "init_pi": opts.init_pi,
        "fixed_mu_pi": opts.fixed_mu_pi, "rng_seed": opts.rng_seed,
        "pin_mu": opts.pin_mu,
        "undirected_single_factor": opts.undirected_single_factor,
    }


def _hyper_dict(hyper):
    return {"k": hyper.k, "a": hyper.a, "b": hyper.b}
