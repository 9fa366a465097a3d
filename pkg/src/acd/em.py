"""EM engine: E-step responsibilities, M-step updates, ELBO, and the fit driver.

One EM iteration computes rho and Q from the current parameters, then updates
u, v, w (cyclic, each block seeing the freshest others and the iteration-start
rho and Q), then pi and mu.  The recorded objective is the Jensen lower bound
on the log-posterior (entropy of the pair posterior + expected complete-data
terms + Gamma prior terms), shifted by the constant log(A!) data term.

The pair posterior Q is a dense N x N object; fits above ``n_max`` nodes are
refused up front because of the N^2 memory and time cost.
"""

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit, xlogy

from .graph import ANOMALOUS, REGULAR, PairLabeling
from .model import ModelParams, poisson_logpmf_matrix, rate_matrix

EDGES_ONLY = "edges_only"
NONEDGES_ONLY = "nonedges_only"
ALL_PAIRS = "all_pairs"


class FitError(RuntimeError):
    """No random restart produced a finite objective."""


class UnboundedUpdateError(RuntimeError):
    """An M-step denominator vanished with a positive numerator (b=0 pathology)."""


@dataclass(frozen=True)
class QMatrix:
    """Symmetric pairwise anomaly posterior, values in [0, 1], zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", q)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("Q must be square")
        if np.any(np.diag(q) != 0):
            raise ValueError("Q diagonal must be zero")
        if not np.array_equal(q, q.T):
            raise ValueError("Q must be symmetric")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("Q entries must lie in [0, 1]")

    @property
    def n_nodes(self):
        return self.values.shape[0]

    def to_csv(self, path):
        np.savetxt(path, self.values, delimiter=",")


@dataclass(frozen=True)
class FitOptions:
    """Knobs of the EM loop; defaults follow the documented design choices."""

    n_seeds: int = 5
    max_iter: int = 1000
    tol: float = 1e-4
    check_every: int = 10
    patience: int = 3
    init_mu: float = 0.5
    init_pi: float = None  # None: 0.5 * mean positive weight of the input
    fixed_mu_pi: bool = False  # CD baseline: mu = pi = 0, Q pinned to 0
    rng_seed: int = 0
    pin_mu: bool = False  # keep mu at init_mu for all iterations
    undirected_single_factor: bool = False  # one Poisson factor per undirected pair in Q
    n_max: int = 20000

    def __post_init__(self):
        if self.n_seeds < 1 or self.max_iter < 1 or self.check_every < 1:
            raise ValueError("n_seeds, max_iter, check_every must be positive")
        if self.tol <= 0 or self.patience < 1:
            raise ValueError("tol must be > 0 and patience >= 1")
        if not 0 < self.init_mu < 1:
            raise ValueError("init_mu must lie in (0, 1)")
        if self.init_pi is not None and self.init_pi <= 0:
            raise ValueError("init_pi must be positive")


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    q: QMatrix
    logpost_trace: list
    converged: bool
    seed_used: int
    n_iters: int
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "params": self.params.to_json(),
            "q": self.q.values.ravel().tolist(),
            "logpost_trace": list(self.logpost_trace),
            "converged": self.converged,
            "seed_used": self.seed_used,
            "n_iters": self.n_iters,
            "diagnostics": dict(self.diagnostics),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def e_step_rho(params, i, j):
    """Responsibilities rho_ijk = u_ik v_jk w_k / M_ij; uniform when M_ij = 0.

    The uniform fallback is harmless: every use of rho is weighted by
    A_ij (1 - Q_ij), and A_ij > 0 with M_ij = 0 drives the objective to -inf,
    which the monotonicity guard surfaces.
    """
    raw = params.u[i] * params.v[j] * params.w
    s = raw.sum()
    if s <= 0:
        return np.full(params.k, 1.0 / params.k)
    return raw / s


def rho_tensor(u, v, w):
    """Dense rho over all ordered pairs, shape (N, N, K); uniform rows at M = 0."""
    raw = u[:, None, :] * v[None, :, :] * w
    m = raw.sum(axis=2)
    k = w.shape[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = raw / m[:, :, None]
    rho[m == 0] = 1.0 / k
    return rho


def _zero_coef(coef, term):
    """coef * term with the 0 * (-inf) := 0 convention."""
    with np.errstate(invalid="ignore"):
        prod = coef * term
    return np.where(coef == 0, 0.0, prod)


@lru_cache(maxsize=8)
def _triu_idx(n):
    return np.triu_indices(n, 1)


def _q_from_logps(lp_anom, lp_reg, mu, single_factor=False):
    """Pair posterior from per-entry branch log-likelihoods.

    Returns (Q, zero_zero_count): entries where both branches have zero
    likelihood are defined as 0 and counted.
    """
    log_mu = np.log(mu) if mu > 0 else -np.inf
    log_1mu = np.log1p(-mu) if mu < 1 else -np.inf
    if single_factor:
        la = 0.5 * (lp_anom + lp_anom.T)  # symmetrized single factor
        lr = 0.5 * (lp_reg + lp_reg.T)
    else:
        la = lp_anom + lp_anom.T
        lr = lp_reg + lp_reg.T
    sa = la + log_mu
    sr = lr + log_1mu
    with np.errstate(invalid="ignore"):
        d = sa - sr
        q = expit(d)
    q[np.isposinf(d)] = 1.0
    q[np.isneginf(sa)] = 0.0  # covers the both-branches-zero case too
    np.fill_diagonal(q, 0.0)
    q = np.triu(q, 1)
    q = q + q.T
    zz = int(np.triu(np.isneginf(sa) & np.isneginf(sr), 1).sum())
    return q, zz


def e_step_Q(params, net, single_factor=False, n_max=20000):
    """Posterior anomaly probability for every unordered pair (dense, symmetric)."""
    n = net.n_nodes
    if n > n_max:
        raise ValueError(f"N={n} exceeds the dense-Q cap n_max={n_max}")
    a = net.to_dense()
    m = rate_matrix(params.u, params.v, params.w)
    lp_anom = poisson_logpmf_matrix(a, params.pi)
    lp_reg = poisson_logpmf_matrix(a, m)
    q, _ = _q_from_logps(lp_anom, lp_reg, params.mu, single_factor)
    return QMatrix(q)


def _offdiag(n):
    d = np.ones((n, n))
    np.fill_diagonal(d, 0.0)
    return d


def _safe_update(num, den, what):
    """num/den elementwise; 0/0 -> 0; positive/0 is an unbounded direction."""
    zero_den = den == 0
    if np.any(zero_den & (num > 0)):
        raise UnboundedUpdateError(
            f"{what} update has positive numerator over zero denominator "
            "(b = 0 with an isolated nonzero row?)"
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[zero_den] = 0.0
    return out


def m_step_u(params, net, q, rho, hyper):
    """u_ik = (a-1 + sum_j (1-Q_ij) A_ij rho_ijk) / (b + sum_j (1-Q_ij) v_jk w_k)."""
    a_mat = net.to_dense()
    oneq = (1.0 - q.values) * _offdiag(net.n_nodes)
    num = (hyper.a - 1.0) + np.einsum("ij,ijk->ik", oneq * a_mat, rho)
    den = hyper.b + oneq @ (params.v * params.w)
    return _safe_update(num, den, "u")


def m_step_v(params, net, q, rho, hyper):
    """Transpose-symmetric analogue of the u update."""
    a_mat = net.to_dense()
    oneq = (1.0 - q.values) * _offdiag(net.n_nodes)
    num = (hyper.a - 1.0) + np.einsum("ij,ijk->jk", oneq * a_mat, rho)
    den = hyper.b + oneq.T @ (params.u * params.w)
    return _safe_update(num, den, "v")


def m_step_w(params, net, q, rho):
    """w_k = sum_ij (1-Q_ij) A_ij rho_ijk / sum_ij (1-Q_ij) u_ik v_jk."""
    a_mat = net.to_dense()
    oneq = (1.0 - q.values) * _offdiag(net.n_nodes)
    num = np.einsum("ij,ijk->k", oneq * a_mat, rho)
    den = np.einsum("ij,ik,jk->k", oneq, params.u, params.v)
    return _safe_update(num, den, "w")


def m_step_pi(net, q, prev_pi=0.0):
    """Q-weighted mean of A over ordered pairs; previous value when sum Q = 0."""
    a_mat = net.to_dense()
    sq = q.values.sum()
    if sq == 0:
        return prev_pi
    return float((q.values * a_mat).sum() / sq)


def m_step_mu(q, n):
    """Mean of Q over the N(N-1)/2 unordered pairs."""
    return float(np.triu(q.values, 1).sum() / (n * (n - 1) / 2))


def _elbo(a_mat, m, q, mu, u, v, hyper, w_mask, lp_anom=None):
    """Jensen lower bound, up to the dropped log(A!) constant.

    ``w_mask`` is the ordered-pair observation mask (zero diagonal); held-out
    pairs in cross-validation are excluded from every sum.  ``lp_anom`` is
    None for the community-detection baseline (its Q is identically zero, so
    the anomaly branch contributes nothing).
    """
    ut = np.triu(w_mask, 1)
    ent = -np.where(ut > 0, xlogy(q, q) + xlogy(1.0 - q, 1.0 - q), 0.0).sum()

    lp_reg = poisson_logpmf_matrix(a_mat, m)
    pois = _zero_coef(1.0 - q, lp_reg)
    if lp_anom is not None:
        pois = pois + _zero_coef(q, lp_anom)
    pois_sum = np.where(w_mask > 0, pois, 0.0).sum()

    log_mu = np.log(mu) if mu > 0 else -np.inf
    log_1mu = np.log1p(-mu) if mu < 1 else -np.inf
    bern = _zero_coef(q, log_mu) + _zero_coef(1.0 - q, log_1mu)
    bern_sum = np.where(ut > 0, bern, 0.0).sum()

    prior = 0.0
    if hyper.a > 1:
        with np.errstate(divide="ignore"):
            prior += (hyper.a - 1.0) * (np.log(u).sum() + np.log(v).sum())
    if hyper.b > 0:
        prior -= hyper.b * (u.sum() + v.sum())
    return float(ent + pois_sum + bern_sum + prior)


def log_posterior(params, net, q, hyper, mask=None):
    """ELBO of the current parameters and pair posterior on a network."""
    a_mat = net.to_dense()
    m = rate_matrix(params.u, params.v, params.w)
    w_mask = _mask_matrix(net.n_nodes, mask)
    lp_anom = poisson_logpmf_matrix(a_mat, params.pi)
    return _elbo(a_mat, m, q.values, params.mu,
                 params.u, params.v, hyper, w_mask, lp_anom)


def _mask_matrix(n, heldout):
    w = _offdiag(n)
    if heldout:
        for i, j in heldout:
            w[i, j] = 0.0
            w[j, i] = 0.0
    return w


def init_params(rng, n, k, a_mat, opts):
    """Random start: u, v uniform scaled to unit mean row sum; w uniform on (0,1)."""
    u = rng.random((n, k))
    u /= u.sum(axis=1).mean()
    v = rng.random((n, k))
    v /= v.sum(axis=1).mean()
    w = rng.random(k)
    if opts.fixed_mu_pi:
        pi, mu = 0.0, 0.0
    else:
        pi = opts.init_pi if opts.init_pi is not None else 0.5 * a_mat[a_mat > 0].mean()
        mu = opts.init_mu
    return u, v, w, float(pi), float(mu)


class _SeedFailure(Exception):
    pass


def _fit_single(a_mat, w_mask, hyper, opts, rng):
    u, v, w, pi, mu = init_params(rng, a_mat.shape[0], hyper.k, a_mat, opts)
    return _em_loop(a_mat, w_mask, hyper, opts, u, v, w, pi, mu)


def _em_loop(a_mat, w_mask, hyper, opts, u, v, w, pi, mu):
    n = a_mat.shape[0]
    k = hyper.k
    cd = opts.fixed_mu_pi
    diags = {"q_zero_zero": 0, "pi_frozen": 0}
    trace = []
    converged = False
    last_check = None
    streak = 0
    it = 0

    while True:
        m = rate_matrix(u, v, w)
        if cd:
            q = np.zeros((n, n))
            lp_anom = None
        else:
            lp_anom = poisson_logpmf_matrix(a_mat, pi)
            lp_reg = poisson_logpmf_matrix(a_mat, m)
            q, zz = _q_from_logps(lp_anom, lp_reg, mu,
                                  opts.undirected_single_factor)
            diags["q_zero_zero"] += zz
        lp = _elbo(a_mat, m, q, mu, u, v, hyper, w_mask, lp_anom)
        trace.append(lp)
        if not np.isfinite(lp):
            raise _SeedFailure(f"non-finite log-posterior at iteration {it}")

        if it == 0:
            last_check = lp
        elif it % opts.check_every == 0:
            streak = streak + 1 if abs(lp - last_check) < opts.tol else 0
            last_check = lp
            if streak >= opts.patience:
                converged = True
                break
        if it >= opts.max_iter:
            break

        # M-step; rho enters through B = (1-Q) A / M factored against u, v, w.
        oneq = (1.0 - q) * w_mask
        good = m > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            b_mat = np.where(good, oneq * a_mat / np.where(good, m, 1.0), 0.0)
        bad = (a_mat > 0) & ~good & (w_mask > 0)
        if bad.any():
            # pairs with positive count but dead rate: rho falls back to 1/K
            bad_w = oneq * a_mat * bad
            cu, cv, cw = bad_w.sum(axis=1) / k, bad_w.sum(axis=0) / k, bad_w.sum() / k
        else:
            cu = cv = cw = 0.0

        t_u = b_mat @ v
        t_v = b_mat.T @ u
        num_u = (hyper.a - 1.0) + u * (t_u * w) + np.atleast_1d(cu)[:, None]
        den_u = hyper.b + oneq @ (v * w)
        u_new = _safe_update(num_u, den_u, "u")

        num_v = (hyper.a - 1.0) + v * (t_v * w) + np.atleast_1d(cv)[:, None]
        den_v = hyper.b + oneq.T @ (u_new * w)
        v_new = _safe_update(num_v, den_v, "v")

        num_w = w * (u * t_u).sum(axis=0) + cw
        den_w = (u_new * (oneq @ v_new)).sum(axis=0)
        w_new = _safe_update(num_w, den_w, "w")

        u, v, w = u_new, v_new, w_new
        if not cd:
            sq = (q * w_mask).sum()
            if sq == 0:
                diags["pi_frozen"] += 1
            else:
                pi = float((q * w_mask * a_mat).sum() / sq)
            if not opts.pin_mu:
                ut = np.triu(w_mask, 1)
                mu = float((q * ut).sum() / ut.sum())
        it += 1

    params = ModelParams(u, v, w, pi, mu)
    return params, QMatrix(q), trace, converged, it, diags


def fit(net, hyper, opts=FitOptions(), mask=None):
    """Best-of-seeds EM fit.

    ``mask``: optional iterable of unordered held-out pairs excluded from every
    E/M sum (cross-validation).  With ``opts.fixed_mu_pi`` the fit is the plain
    community-detection baseline (mu = pi = 0, Q pinned to 0).
    """
    if hyper.k > net.n_nodes:
        raise ValueError(f"K={hyper.k} exceeds N={net.n_nodes}")
    if net.n_nodes > opts.n_max:
        raise ValueError(f"N={net.n_nodes} exceeds the dense-Q cap n_max={opts.n_max}")
    a_mat = net.to_dense()
    if not np.any(a_mat > 0):
        raise ValueError("network has no edges")
    w_mask = _mask_matrix(net.n_nodes, mask)

    children = np.random.SeedSequence(opts.rng_seed).spawn(opts.n_seeds)
    best = None
    failures = []
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)
        try:
            params, q, trace, converged, n_iters, diags = _fit_single(
                a_mat, w_mask, hyper, opts, rng)
        except _SeedFailure as exc:
            failures.append(f"seed {s}: {exc}")
            continue
        res = FitResult(params, q, trace, converged, s, n_iters, diags)
        if best is None or res.logpost_trace[-1] > best.logpost_trace[-1]:
            best = res
    if best is None:
        raise FitError("all seeds failed: " + "; ".join(failures))
    return best


def classify_anomalies(q, mode, value, restrict, net):
    """Label pairs whose posterior clears the cut.

    mode: 'threshold_abs' (Q >= value), 'threshold_relmax' (Q >= value * max Q
    over the restriction set), or 'top_k' (the `value` pairs with highest Q,
    ties broken by Q descending then lexicographic pair order).
    restrict: 'edges_only', 'nonedges_only', or 'all_pairs'.
    """
    adj = net.adjacent_pairs()
    n = net.n_nodes
    if restrict == EDGES_ONLY:
        cand = sorted(adj)
    elif restrict == NONEDGES_ONLY:
        cand = net.nonadjacent_pairs()
    elif restrict == ALL_PAIRS:
        cand = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        raise ValueError(f"unknown restriction {restrict!r}")
    if not cand:
        warnings.warn(f"empty restriction set {restrict!r}; empty labeling returned")
        return PairLabeling((), ())

    qv = q.values
    scores = np.array([qv[i, j] for i, j in cand])
    if mode == "threshold_abs":
        chosen = {p for p, s in zip(cand, scores) if s >= value}
    elif mode == "threshold_relmax":
        cut = value * scores.max()
        chosen = {p for p, s in zip(cand, scores) if s >= cut}
    elif mode == "top_k":
        k = min(int(value), len(cand))
        order = sorted(range(len(cand)), key=lambda t: (-scores[t], cand[t]))
        chosen = {cand[t] for t in order[:k]}
    else:
        raise ValueError(f"unknown mode {mode!r}")

    labels = tuple(ANOMALOUS if p in chosen else REGULAR for p in cand)
    return PairLabeling(tuple(cand), labels)
