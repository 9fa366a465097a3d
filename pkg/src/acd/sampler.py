"""Generative sampler: planted communities, anomaly-ratio calibration, network draws.

Calibration works in ordered-entry units (sums over ordered pairs i != j, N^2
in the anomalous-count formula, as the count formulas are written); an
undirected edge corresponds to two ordered entries, so a target of E
undirected edges enters calibration as 2E.  ``entry_target`` does the
conversion from average degree.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import ANOMALOUS, REGULAR, Network, PairLabeling
from .model import ModelParams, rate_matrix

BISECT_MAX_ITER = 200
RESIDUAL_EDGE_TOL = 0.5


@dataclass(frozen=True)
class PlantedConfig:
    """Ground-truth layout of a synthetic network."""

    n_nodes: int
    k: int
    avg_degree: float
    rho_a: float
    pi: float
    overlapping: bool = False
    directed: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_nodes < self.k:
            raise ValueError("need n_nodes >= K")
        if not 0 <= self.rho_a < 1:
            raise ValueError("rho_a must lie in [0, 1)")
        if self.pi < 0:
            raise ValueError("pi must be nonnegative")
        if not 0 < self.avg_degree < self.n_nodes - 1:
            raise ValueError("avg_degree must fit a simple graph")


def entry_target(cfg):
    """Target number of nonzero ordered adjacency entries: N<k> in both conventions."""
    return cfg.n_nodes * cfg.avg_degree


def plant_parameters(cfg, rng=None):
    """Community parameters only; pi and mu are filled in by calibration.

    Hard mode: K near-equal blocks (the first N mod K blocks take the extra
    node), one-hot u = v, unit diagonal affinity to be rescaled by the sparsity
    constant.  Mixed mode: rows drawn from a symmetric Dirichlet(1).
    """
    n, k = cfg.n_nodes, cfg.k
    if cfg.overlapping:
        rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
        u = rng.dirichlet(np.ones(k), size=n)
        v = rng.dirichlet(np.ones(k), size=n) if cfg.directed else u.copy()
    else:
        sizes = [n // k + (1 if b < n % k else 0) for b in range(k)]
        u = np.zeros((n, k))
        start = 0
        for b, size in enumerate(sizes):
            u[start:start + size, b] = 1.0
            start += size
        v = u.copy()
    return ModelParams(u, v, np.ones(k), 0.0, 0.0)


def calibrate_sparsity(m, e_target, rho_a, pi):
    """Solve for the anomaly prior mu and the rate multiplier c.

    mu comes from the anomalous-count formula E*rho_a = N^2 mu (1 - e^-pi);
    c solves f(c) = (1-mu) sum_ij (1 - e^{-c M_ij}) - E (1 - rho_a) = 0 by
    bisection (f is strictly increasing in c).  The bracket doubles from 1
    until it straddles the root; bisection runs to bracket collapse, capped at
    200 iterations, and the residual must clear |f| < 0.5 edge.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    m = m.copy()
    np.fill_diagonal(m, 0.0)
    if m.sum() <= 0:
        raise ValueError("rate matrix has no positive entries")
    if rho_a > 0 and pi == 0:
        raise ValueError("rho_a > 0 requires pi > 0")

    if rho_a == 0:
        mu = 0.0
    else:
        mu = e_target * rho_a / (n * n * -np.expm1(-pi))
        if mu >= 1:
            warnings.warn(f"calibrated mu={mu:.4g} clipped below 1")
            mu = np.nextafter(1.0, 0.0)

    target_reg = e_target * (1.0 - rho_a)
    n_pos = int((m > 0).sum())
    if target_reg >= (1.0 - mu) * n_pos:
        raise ValueError(
            f"infeasible: {target_reg:.1f} regular entries requested but the "
            f"rate matrix supports at most {(1.0 - mu) * n_pos:.1f}"
        )

    def f(c):
        return (1.0 - mu) * -np.expm1(-c * m).sum() - target_reg

    # f must be increasing on the bracket; sample before trusting bisection
    probe = np.linspace(0.1, 1.0, 10)
    vals = [f(c) for c in probe]
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise ValueError("calibration objective is not increasing in c")

    c_hi = 1.0
    while f(c_hi) <= 0:
        c_hi *= 2.0
        if c_hi > 2.0**60:
            raise ValueError("no bracket for the sparsity constant")
    c_lo = 0.0
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (c_lo + c_hi)
        if mid == c_lo or mid == c_hi:
            break
        if f(mid) > 0:
            c_hi = mid
        else:
            c_lo = mid
    c = 0.5 * (c_lo + c_hi)
    if abs(f(c)) > RESIDUAL_EDGE_TOL:
        raise ValueError(f"bisection residual {f(c):.3g} exceeds {RESIDUAL_EDGE_TOL} edges")
    return mu, c


def calibrate_parameters(cfg, rng=None):
    """plant -> calibrate -> fold the sparsity constant into w."""
    base = plant_parameters(cfg, rng)
    m = rate_matrix(base.u, base.v, base.w)
    np.fill_diagonal(m, 0.0)
    mu, c = calibrate_sparsity(m, entry_target(cfg), cfg.rho_a, cfg.pi)
    return ModelParams(base.u, base.v, base.w * c, cfg.pi, mu)


def sample_network_with_stats(params, cfg, rng=None):
    """Draw (Network, realized-edge labeling, params, stats).

    Per unordered pair: Z ~ Bern(mu); anomalous pairs draw from Pois(pi)
    (independently per orientation when directed, one mirrored draw when
    undirected), regular pairs from Pois(c M_ij) (mirrored draw uses the
    symmetrized rate).  Ground-truth labels cover realized edges only; stats
    carries the planted Z count so unrealized anomalies stay accounted for.
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    n = cfg.n_nodes
    m = rate_matrix(params.u, params.v, params.w)
    iu, ju = np.triu_indices(n, 1)
    z = rng.random(len(iu)) < params.mu

    entries = {}

    def put(i, j, a):
        if a > 0:
            entries[(int(i), int(j))] = int(a)

    anom_i, anom_j = iu[z], ju[z]
    if cfg.directed:
        a_fwd = rng.poisson(params.pi, size=len(anom_i))
        a_bwd = rng.poisson(params.pi, size=len(anom_i))
    else:
        a_fwd = rng.poisson(params.pi, size=len(anom_i))
        a_bwd = a_fwd
    reg_i, reg_j = iu[~z], ju[~z]
    if cfg.directed:
        r_fwd = rng.poisson(m[reg_i, reg_j])
        r_bwd = rng.poisson(m[reg_j, reg_i])
    else:
        r_fwd = rng.poisson(0.5 * (m[reg_i, reg_j] + m[reg_j, reg_i]))
        r_bwd = r_fwd

    for i, j, a, b in zip(anom_i, anom_j, a_fwd, a_bwd):
        put(i, j, a)
        put(j, i, b)
    for i, j, a, b in zip(reg_i, reg_j, r_fwd, r_bwd):
        put(i, j, a)
        put(j, i, b)

    attributes = None
    if not cfg.overlapping:
        attributes = tuple(str(int(np.argmax(params.u[i]))) for i in range(n))
    net = Network(n, cfg.directed, entries, None, attributes)

    adj = net.adjacent_pairs()
    anom_realized = sorted({(int(i), int(j)) for i, j in zip(anom_i, anom_j)} & adj)
    reg_realized = sorted(adj - set(anom_realized))
    labeling = PairLabeling(
        tuple(anom_realized) + tuple(reg_realized),
        (ANOMALOUS,) * len(anom_realized) + (REGULAR,) * len(reg_realized),
    )
    stats = {
        "n_pairs_planted_anomalous": int(z.sum()),
        "n_anomalous_realized": len(anom_realized),
        "n_regular_realized": len(reg_realized),
        "realized_rho_a": len(anom_realized) / len(adj) if adj else 0.0,
    }
    return net, labeling, params, stats


def sample_network(params, cfg, rng=None):
    """Spec surface: (Network, PairLabeling, ModelParams)."""
    net, labeling, params, _ = sample_network_with_stats(params, cfg, rng)
    return net, labeling, params


def generate(cfg):
    """plant -> calibrate -> sample, all from the config seed."""
    rng = np.random.default_rng(cfg.rng_seed)
    params = calibrate_parameters(cfg, rng)
    return sample_network_with_stats(params, cfg, rng)
