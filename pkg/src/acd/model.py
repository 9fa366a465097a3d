"""Parameter container and the Poisson-mixture probability kernel.

All log-likelihoods use the unnormalized convention -lam + a*log(lam): the
log(a!) term is constant in the parameters, cancels inside the anomaly
posterior, and dropping it avoids large-factorial overflow.  The reported
log-posterior is therefore shifted by a data-only constant.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Latent parameters: memberships u, v (N x K), diagonal affinity w (K),
    anomalous Poisson mean pi, and anomaly prior mu."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    pi: float
    mu: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        if u.ndim != 2 or v.ndim != 2 or w.ndim != 1:
            raise ValueError("u, v must be N x K and w length K")
        if not (u.shape == v.shape and u.shape[1] == w.shape[0] and w.shape[0] >= 1):
            raise ValueError("inconsistent K across u, v, w")
        if np.any(u < 0) or np.any(v < 0) or np.any(w < 0) or self.pi < 0:
            raise ValueError("parameters must be nonnegative")
        if not 0 <= self.mu <= 1:
            raise ValueError("mu must lie in [0, 1]")

    @property
    def n_nodes(self):
        return self.u.shape[0]

    @property
    def k(self):
        return self.w.shape[0]

    def to_json(self):
        return {
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "w": self.w.tolist(),
            "pi": self.pi,
            "mu": self.mu,
            "K": self.k,
        }

    @classmethod
    def from_json(cls, obj):
        p = cls(np.array(obj["u"]), np.array(obj["v"]), np.array(obj["w"]),
                float(obj["pi"]), float(obj["mu"]))
        if p.k != obj["K"]:
            raise ValueError("K field inconsistent with w length")
        return p

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Hyperparams:
    """Gamma prior shape/rate on memberships and the community count.

    a >= 1 keeps the membership-update numerators (a - 1 + ...) nonnegative.
    Only the assortative (diagonal affinity) model is supported.
    """

    k: int
    a: float = 1.0
    b: float = 1.0
    assortative: bool = field(default=True)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.a < 1:
            raise ValueError("a must be >= 1")
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if not self.assortative:
            raise ValueError("only the assortative (diagonal w) model is supported")


def rate(params, i, j):
    """Community Poisson rate M_ij = sum_k u_ik v_jk w_k."""
    if i == j:
        raise ValueError("rate undefined for i == j")
    return float(np.dot(params.u[i] * params.w, params.v[j]))


def rate_matrix(u, v, w):
    """All rates at once: M = (u * w) @ v.T.  The diagonal is not meaningful."""
    return (u * w) @ v.T


def poisson_logpmf_unnormalized(a_val, lam):
    """-lam + a*log(lam) with 0*log(0) := 0; -inf when a > 0 and lam == 0."""
    if a_val < 0 or lam < 0:
        raise ValueError("count and rate must be nonnegative")
    if a_val == 0:
        return -lam
    if lam == 0.0:
        return -np.inf
    return -lam + a_val * np.log(lam)


def poisson_logpmf_matrix(a, lam):
    """Vectorized unnormalized log-pmf with the same boundary conventions."""
    a = np.asarray(a, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = np.full(np.broadcast_shapes(a.shape, lam.shape), -np.inf)
    pos = lam > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        np.copyto(out, -lam + a * np.log(np.where(pos, lam, 1.0)), where=pos)
    np.copyto(out, np.broadcast_to(-lam, out.shape), where=(a == 0))
    return out


def edge_loglik_mixture(params, i, j, a_ij):
    """The two branch log-likelihoods of an entry: (regular, anomalous).

    Returns (log Pois(a_ij; M_ij), log Pois(a_ij; pi)) in the unnormalized
    convention; the first is the community branch, the second the anomaly one.
    """
    m_ij = rate(params, i, j)
    return (
        poisson_logpmf_unnormalized(a_ij, m_ij),
        poisson_logpmf_unnormalized(a_ij, params.pi),
    )
