"""Shared test utilities: in-memory graph construction and independent oracles.

The oracles here deliberately avoid the library's vectorized code paths:
ranking is an exhaustive per-entity loop over plain Python arithmetic,
co-occurrence is a quadratic scan, and gradients come from central finite
differences.
"""

from __future__ import annotations

import math

import numpy as np

from kgrerank.kg import KnowledgeGraph, Triple


def build_kg(n_entities, n_relations, train, valid=(), test=(), descriptions=None):
    keys = [f"E{i}" for i in range(n_entities)]
    names = [f"entity {i}" for i in range(n_entities)]
    if descriptions is None:
        descriptions = [f"about entity {i}" for i in range(n_entities)]
    rel_keys = [f"R{j}" for j in range(n_relations)]
    rel_names = [f"relation {j}" for j in range(n_relations)]
    return KnowledgeGraph(
        keys,
        names,
        descriptions,
        rel_keys,
        rel_names,
        [Triple(*t) for t in train],
        [Triple(*t) for t in valid],
        [Triple(*t) for t in test],
    )


def brute_force_score(table, h, r, t):
    eh = table.entity_vecs[h]
    er = table.relation_vecs[r]
    et = table.entity_vecs[t]
    if table.norm == "L1":
        return -sum(abs(float(eh[i]) + float(er[i]) - float(et[i])) for i in range(len(eh)))
    return -math.sqrt(
        sum((float(eh[i]) + float(er[i]) - float(et[i])) ** 2 for i in range(len(eh)))
    )


def brute_force_rank(table, kg, q, m, filtered=True):
    """Exhaustive ranking oracle: per-entity scores, filtering, explicit sort."""
    scores = {}
    for e in range(kg.num_entities):
        h, r, t = q.completed(e)
        scores[e] = brute_force_score(table, h, r, t)
    if filtered:
        for e in range(kg.num_entities):
            if e != q.gold and q.completed(e) in kg.all_true:
                scores[e] = float("-inf")
    order = sorted(range(kg.num_entities), key=lambda e: (-scores[e], e))
    gold_rank = order.index(q.gold) + 1 if q.gold is not None else None
    return order, order[:m], gold_rank


def brute_force_cooc(kg):
    counts = np.zeros((kg.num_relations, kg.num_relations), dtype=np.int64)
    for r1 in range(kg.num_relations):
        for r2 in range(kg.num_relations):
            n = 0
            for e in range(kg.num_entities):
                has_r1 = any(
                    f.relation == r1 and e in (f.head, f.tail) for f in kg.train
                )
                has_r2 = any(
                    f.relation == r2 and e in (f.head, f.tail) for f in kg.train
                )
                if has_r1 and has_r2:
                    n += 1
            counts[r1, r2] = n
    return counts


def rel_err(a, b):
    """Guarded relative error for gradient checks."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at 1-D or 2-D array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad
