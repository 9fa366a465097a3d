"""Evaluation: confusion scores, permutation-matched cosine similarity, ranking AUC."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionScores:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp, fp, fn, tn):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        return cls(tp, fp, fn, tn, precision, recall, f1)


def confusion(pred, truth, universe):
    """Counts over the pair universe; anomalous is the positive class."""
    uni = {tuple(sorted(p)) for p in universe}
    if set(pred.pairs) != uni or set(truth.pairs) != uni:
        raise ValueError("labelings must cover exactly the given universe")
    pa, ta = pred.anomalous, truth.anomalous
    tp = len(pa & ta)
    fp = len(pa - ta)
    fn = len(ta - pa)
    tn = len(uni) - tp - fp - fn
    return ConfusionScores.from_counts(tp, fp, fn, tn)


def _pad_columns(x, k):
    if x.shape[1] >= k:
        return x
    return np.hstack([x, np.zeros((x.shape[0], k - x.shape[1]))])


def _row_normalize(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        out = x / norms
    out[norms.ravel() == 0] = 0.0  # zero rows contribute similarity 0
    return out


def one_hot_from_attributes(attributes):
    """(N x K' indicator matrix, sorted category list) from category strings."""
    cats = sorted(set(attributes))
    idx = {c: k for k, c in enumerate(cats)}
    out = np.zeros((len(attributes), len(cats)))
    for i, c in enumerate(attributes):
        out[i, idx[c]] = 1.0
    return out, cats


def cosine_similarity_matched(u_inf, u_true):
    """Node-averaged row cosine, maximized over a column matching.

    The per-node cosine is invariant to which permutation convention is used,
    so the best column permutation reduces to a linear assignment on the K x K
    matrix of mean products of normalized columns; the Hungarian solver gives
    the exact maximum for any K.  Columns are zero-padded when the two K differ.
    """
    u_inf = np.asarray(u_inf, dtype=float)
    u_true = np.asarray(u_true, dtype=float)
    if u_inf.shape[0] != u_true.shape[0]:
        raise ValueError("row counts differ")
    k = max(u_inf.shape[1], u_true.shape[1])
    a = _row_normalize(_pad_columns(u_inf, k))
    b = _row_normalize(_pad_columns(u_true, k))
    cross = a.T @ b / a.shape[0]
    rows, cols = linear_sum_assignment(cross, maximize=True)
    return float(cross[rows, cols].sum())


def hard_assignments(u):
    """Row argmax (ties to the lowest community index)."""
    return np.argmax(np.asarray(u), axis=1)


def macro_f1_matched(u_inf, u_true):
    """Macro-F1 of hard assignments, maximized over a class matching."""
    u_inf = np.asarray(u_inf, dtype=float)
    u_true = np.asarray(u_true, dtype=float)
    k = max(u_inf.shape[1], u_true.shape[1])
    pred = hard_assignments(_pad_columns(u_inf, k))
    true = hard_assignments(_pad_columns(u_true, k))
    f1 = np.zeros((k, k))
    for p in range(k):
        for t in range(k):
            tp = int(np.sum((pred == p) & (true == t)))
            fp = int(np.sum((pred == p) & (true != t)))
            fn = int(np.sum((pred != p) & (true == t)))
            f1[p, t] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    rows, cols = linear_sum_assignment(f1, maximize=True)
    n_true = len(set(true.tolist()))
    return float(f1[rows, cols].sum() / n_true)


def auc_ranking(scores, positives, negatives):
    """P(random positive outscores random negative), ties counting 1/2.

    Average ranks make the rank-sum formula exact under ties, matching the
    brute-force pairwise computation.
    """
    pos = [tuple(sorted(p)) for p in positives]
    neg = [tuple(sorted(p)) for p in negatives]
    if not pos or not neg:
        raise ValueError("positive and negative sets must be nonempty")
    if set(pos) & set(neg):
        raise ValueError("positive and negative sets overlap")
    keyed = {tuple(sorted(p)): s for p, s in scores.items()}
    missing = [p for p in pos + neg if p not in keyed]
    if missing:
        raise ValueError(f"unscored pairs: {missing[:5]}")
    vals = np.array([keyed[p] for p in pos] + [keyed[p] for p in neg])
    ranks = rankdata(vals)
    rank_pos = ranks[: len(pos)].sum()
    return float((rank_pos - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))
