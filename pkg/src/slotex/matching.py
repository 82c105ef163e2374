"""Hungarian alignment of slot predictions to gold triples and the set loss.

Predictions are an unordered set, so the target each slot trains against
is chosen per forward pass by minimum-cost bipartite matching on negative
log-probabilities (the same quantities the loss sums). The assignment is
a forward-pass decision: it is held constant during backward and
recomputed at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CapacityError, ContractError, NumericError

NA_TARGET = -1

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class GoldTriple:
    """Annotated triple; token indices include the boundary markers."""

    ss: int
    se: int
    os: int
    oe: int
    rel: int

    @property
    def subject_span(self):
        return (self.ss, self.se)

    @property
    def object_span(self):
        return (self.os, self.oe)

    def key(self):
        return (self.ss, self.se, self.rel, self.os, self.oe)


@dataclass
class Assignment:
    """mapping[slot] is a gold index, or NA_TARGET for unmatched slots."""

    mapping: list
    total_cost: float

    def matched(self):
        return [(slot, gold) for slot, gold in enumerate(self.mapping) if gold != NA_TARGET]


def _solve_min_cost(a):
    """Potentials-based shortest augmenting path; a is (rows x cols), rows <= cols.

    Returns col_of_row: the column assigned to each row, minimizing total cost.
    """
    nr, nc = a.shape
    INF = np.inf
    u = np.zeros(nr + 1)
    v = np.zeros(nc + 1)
    p = np.zeros(nc + 1, dtype=np.intp)  # p[j]: row (1-based) matched to column j
    way = np.zeros(nc + 1, dtype=np.intp)
    for i in range(1, nr + 1):
        p[0] = i
        j0 = 0
        minv = np.full(nc + 1, INF)
        used = np.zeros(nc + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, nc + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(nc + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(nr, -1, dtype=np.intp)
    for j in range(1, nc + 1):
        if p[j] != 0:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian(cost):
    """Minimum-cost injective mapping of gold columns into slot rows.

    ``cost`` is k x m with k >= m; unmatched slots map to NA_TARGET.
    Worst-case cubic in k.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be 2-D, got shape {cost.shape}")
    k, m = cost.shape
    if m == 0:
        return Assignment([NA_TARGET] * k, 0.0)
    if m > k:
        raise CapacityError(
            f"{m} gold triples but only {k} slots; raise num_generated_triples")
    if not np.all(np.isfinite(cost)):
        raise NumericError("hungarian requires finite costs")
    slot_of_gold = _solve_min_cost(cost.T)  # rows = golds, cols = slots
    mapping = [NA_TARGET] * k
    total = 0.0
    for gold, slot in enumerate(slot_of_gold):
        mapping[slot] = gold
        total += float(cost[slot, gold])
    return Assignment(mapping, total)


def pairwise_cost(outputs, golds, floor=PROB_FLOOR):
    """k x m matrix of negative log-likelihood matching costs.

    cost[i][j] sums -log p over the five components of gold j under slot i,
    with probabilities floored to keep early-training costs finite.
    """
    m = len(golds)
    k = outputs.num_slots
    cost = np.zeros((k, m))
    span_mats = [mat.data for mat in outputs.span_matrices()]
    rel_mat = outputs.relation.data
    for j, g in enumerate(golds):
        col = -np.log(np.maximum(rel_mat[:, g.rel], floor))
        for mat, idx in zip(span_mats, (g.ss, g.se, g.os, g.oe)):
            col = col - np.log(np.maximum(mat[:, idx], floor))
        cost[:, j] = col
    return cost


def match(outputs, golds):
    """Convenience: pairwise cost then hungarian."""
    return hungarian(pairwise_cost(outputs, golds))


def set_loss(outputs, golds, assignment):
    """Masked cross-entropy over the assigned targets (differentiable).

    Every slot pays -log p_rel(target); slots matched to a real gold add
    the four span negative log-likelihoods; unmatched slots train toward
    the reserved no-relation class.
    """
    k = outputs.num_slots
    if len(assignment.mapping) != k:
        raise ContractError("assignment length does not match slot count")
    na = outputs.na_index
    rel_targets = np.full(k, na, dtype=np.intp)
    span_targets = np.zeros((4, k), dtype=np.intp)
    mask = np.zeros(k)
    for slot, gold in enumerate(assignment.mapping):
        if gold == NA_TARGET:
            continue
        if gold < 0 or gold >= len(golds):
            raise ContractError(f"assignment references missing gold {gold}")
        g = golds[gold]
        rel_targets[slot] = g.rel
        span_targets[:, slot] = (g.ss, g.se, g.os, g.oe)
        mask[slot] = 1.0
    loss = ad.neg(ad.sum_(ad.log(ad.take_per_row(outputs.relation, rel_targets))))
    mask_t = ad.Tensor(mask)
    for mat, targets in zip(outputs.span_matrices(), span_targets):
        picked = ad.log(ad.take_per_row(mat, targets))
        loss = ad.sub(loss, ad.sum_(ad.mul(picked, mask_t)))
    return loss
