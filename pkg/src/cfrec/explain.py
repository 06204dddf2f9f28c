"""Search for a minimal set of a user's interactions whose removal flips
the top-1 recommendation, under the additive influence model: the estimated
score of an item after removing a set is its current score minus the sum of
the removed interactions' influence scores on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import models
from .data import Dataset
from .influence import InfluenceTable, influence_table

ALGORITHMS = ("greedy", "iterative_greedy")


@dataclass(frozen=True)
class SearchConfig:
    k: int = 5
    algorithm: str = "iterative_greedy"
    max_removals: int | None = None  # None -> all of the user's interactions

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2 (the pool holds the current "
                             "recommendation plus at least one candidate)")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.max_removals is not None and self.max_removals < 1:
            raise ValueError("max_removals must be >= 1")


@dataclass
class Explanation:
    """Outcome of one explanation search.

    ``removed`` holds interaction positions in removal order;
    ``estimated_diff_trace`` holds the running score margin after each
    removal (positive while the original recommendation still leads).
    """

    user: int
    rec: int
    rec_star: int | None
    removed: list
    estimated_diff_trace: list
    status: str  # "found" | "exhausted"


def _pool(influences: InfluenceTable, ds: Dataset, u, cfg: SearchConfig):
    if influences.user != u:
        raise ValueError("influence table belongs to a different user")
    expected = np.sort(np.asarray(ds.per_user[u]))
    if not np.array_equal(np.sort(influences.positions), expected):
        raise ValueError("influence table does not cover the user's "
                         "interactions")
    if len(influences.items) < 2:
        raise ValueError("empty candidate pool")
    k = min(cfg.k, len(influences.items))
    return (influences.items[:k], influences.base_scores[:k],
            influences.i_scores[:, :k])


def greedy_explain(params, ds: Dataset, u, influences: InfluenceTable,
                   cfg: SearchConfig) -> Explanation:
    """Remove interactions in order of their influence on the current top-1
    item until some pool candidate's estimated score overtakes it.

    Ties in the removal order are broken by ascending interaction position;
    ties among overtaking candidates by ascending item id.
    """
    pool_items, base, iscores = _pool(influences, ds, u, cfg)
    positions = influences.positions
    if len(positions) == 0:
        raise ValueError(f"user {u} has no interactions")
    rec = int(pool_items[0])
    cap = cfg.max_removals if cfg.max_removals is not None else len(positions)

    order = np.lexsort((positions, -iscores[:, 0]))
    removed, trace = [], []
    cum = np.zeros(len(pool_items))
    for row in order[:cap]:
        removed.append(int(positions[row]))
        cum += iscores[row]
        est = base - cum
        best_cand = est[1:].max()
        trace.append(float(est[0] - best_cand))
        if best_cand > est[0]:
            tied = pool_items[1:][est[1:] == best_cand]
            return Explanation(int(u), rec, int(tied.min()), removed, trace,
                               "found")
    return Explanation(int(u), rec, None, removed, trace, "exhausted")


def iterative_greedy_explain(params, ds: Dataset, u,
                             influences: InfluenceTable,
                             cfg: SearchConfig) -> Explanation:
    """Per-candidate greedy search over the pool.

    For each candidate the score gap to the current top-1 is walked down by
    removing interactions in descending order of their influence on that
    gap, skipping non-positive contributions; the candidate flips once the
    gap goes negative. The candidate needing the fewest removals wins (ties:
    larger final margin, then ascending item id).
    """
    pool_items, base, iscores = _pool(influences, ds, u, cfg)
    positions = influences.positions
    if len(positions) == 0:
        raise ValueError(f"user {u} has no interactions")
    rec = int(pool_items[0])
    cap = cfg.max_removals if cfg.max_removals is not None else len(positions)

    best = None
    for col in range(1, len(pool_items)):
        diff = float(base[0] - base[col])
        pair = iscores[:, 0] - iscores[:, col]
        order = np.lexsort((positions, -pair))
        removed_rows, trace = [], []
        for row in order:
            if diff <= 0 or pair[row] <= 0 or len(removed_rows) >= cap:
                break
            diff -= float(pair[row])
            removed_rows.append(row)
            trace.append(diff)
        if diff < 0:
            key = (len(removed_rows), diff, int(pool_items[col]))
            if best is None or key < best[0]:
                best = (key, col, removed_rows, trace)
    if best is None:
        return Explanation(int(u), rec, None, [], [], "exhausted")
    _, col, removed_rows, trace = best
    removed = [int(positions[row]) for row in removed_rows]
    return Explanation(int(u), rec, int(pool_items[col]), removed, trace,
                       "found")


def explain_user(params, ds: Dataset, u, search_cfg: SearchConfig,
                 influence_cfg, train_cfg=None) -> Explanation:
    """Rank the user's top-k pool, price all removals, and run the
    configured search."""
    preds = models.top_k(params, u, ds, search_cfg.k)
    items = np.array([p.item_id for p in preds], dtype=np.int64)
    table = influence_table(params, ds, u, items, influence_cfg, train_cfg)
    if search_cfg.algorithm == "greedy":
        return greedy_explain(params, ds, u, table, search_cfg)
    return iterative_greedy_explain(params, ds, u, table, search_cfg)


def explanation_record(expl: Explanation, ds: Dataset, algorithm, method,
                       k) -> dict:
    return {
        "user": expl.user,
        "rec": expl.rec,
        "rec_star": expl.rec_star,
        "removed": [{"user": int(ds.users[p]), "item": int(ds.items[p])}
                    for p in expl.removed],
        "algorithm": algorithm,
        "method": method,
        "K": k,
        "status": expl.status,
    }


def write_explanations_jsonl(path, explanations, ds: Dataset, algorithm,
                             method, k):
    """One JSON record per explanation, flushed per line so interrupted
    runs keep their partial output."""
    with open(path, "w") as fh:
        for expl in explanations:
            fh.write(json.dumps(explanation_record(expl, ds, algorithm,
                                                   method, k)))
            fh.write("\n")
            fh.flush()
