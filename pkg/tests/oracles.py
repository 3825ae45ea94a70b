"""Brute-force reference implementations used to check the metrics."""
import itertools


def ap_oracle(scores, labels):
    """Retrieval AP by counting, with negatives ranked first inside ties.

    For a tie group holding t_pos positives behind t_neg negatives, preceded by
    `above` items of which `pos_above` are positive, the j-th positive of the
    group sits at rank above + t_neg + j with pos_above + j hits.
    """
    n_pos = sum(labels)
    total = 0.0
    for s in set(scores):
        above = sum(1 for x in scores if x > s)
        pos_above = sum(1 for x, y in zip(scores, labels) if x > s and y)
        t_pos = sum(1 for x, y in zip(scores, labels) if x == s and y)
        t_neg = sum(1 for x, y in zip(scores, labels) if x == s and not y)
        for j in range(1, t_pos + 1):
            total += (pos_above + j) / (above + t_neg + j)
    return total / n_pos


def auc_oracle(scores, labels):
    pairs = [(p, n) for p, yp in zip(scores, labels) if yp for n, yn in zip(scores, labels) if not yn]
    won = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in pairs)
    return won / len(pairs)


def all_labelings(n):
    return itertools.product((0, 1), repeat=n)
