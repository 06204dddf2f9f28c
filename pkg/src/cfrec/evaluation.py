"""Ground-truth verification of explanations by retraining, and the
experiment harness around it: explanation success percentage (ESP), average
explanation size (AES), multi-explainer comparisons, and the embedding
dimension sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.stats

from . import models
from .data import Dataset
from .explain import (Explanation, SearchConfig, greedy_explain,
                      iterative_greedy_explain)
from .influence import InfluenceConfig, influence_table
from .models import DivergenceError, TrainConfig
from .seeding import derive_seed


@dataclass
class VerifiedExplanation:
    explanation: Explanation
    actual_new_top1: int | None
    success: bool
    diverged: bool = False


@dataclass(frozen=True)
class ExperimentReport:
    label: str
    mse: float
    per_k: dict  # K -> (esp_percent, aes_or_None)
    num_users_sampled: int
    seeds: tuple


def sample_users(ds: Dataset, n: int, seed) -> np.ndarray:
    """Uniform sample without replacement of users that still have at least
    one uninteracted item; returned sorted ascending."""
    eligible = [u for u in range(ds.num_users)
                if len(np.unique(ds.items_of(u))) < ds.num_items]
    if n > len(eligible):
        raise ValueError(f"requested {n} users, only {len(eligible)} eligible")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(np.asarray(eligible, dtype=np.int64), size=n,
                        replace=False)
    return np.sort(chosen)


def _retrained_params(kind, ds, removed, train_cfg):
    reduced = ds.drop_positions(list(removed))
    params, _ = models.train(kind, reduced, train_cfg)
    return params, reduced


def _new_top1(params, ds, reduced, expl):
    """Top-1 after retraining, excluding both the still-interacted items and
    the removed ones (a forgotten item must not become its own replacement).
    """
    exclude = set(int(v) for v in np.unique(reduced.items_of(expl.user)))
    exclude |= {int(ds.items[p]) for p in expl.removed}
    candidates = np.array(sorted(set(range(ds.num_items)) - exclude),
                          dtype=np.int64)
    if len(candidates) == 0:
        raise ValueError(f"user {expl.user} has no candidate items left")
    scores = models.score_items(params, expl.user, candidates)
    return int(candidates[np.lexsort((candidates, -scores))[0]])


def retrain_verify(kind, ds: Dataset, expl: Explanation,
                   train_cfg: TrainConfig,
                   cache: dict | None = None) -> VerifiedExplanation:
    """Retrain from scratch without the explanation's removal set (same
    configuration and seed) and check that the predicted replacement item
    actually becomes the new top-1.

    An optional cache maps (kind, cfg, user, removal set) to the retrained
    model; reuse cannot change results since training is deterministic.
    """
    if expl.status != "found":
        raise ValueError("explanation search did not find a removal set")
    key = (kind, train_cfg, expl.user, tuple(sorted(expl.removed)))
    if cache is None or key not in cache:
        try:
            retrained = _retrained_params(kind, ds, expl.removed, train_cfg)
        except DivergenceError:
            retrained = None
        if cache is not None:
            cache[key] = retrained
    else:
        retrained = cache[key]
    if retrained is None:
        return VerifiedExplanation(expl, None, False, diverged=True)
    params, reduced = retrained
    top1 = _new_top1(params, ds, reduced, expl)
    return VerifiedExplanation(expl, top1, top1 == expl.rec_star)


def esp(results, attempted: int) -> float:
    """Explanation success percentage over all attempted users (searches
    that found nothing count as failures)."""
    if attempted == 0:
        raise ValueError("attempted must be positive")
    successes = sum(1 for r in results if r.success)
    if successes > attempted:
        raise ValueError("more successes than attempted users")
    return 100.0 * successes / attempted


def aes(results):
    """Average removal-set size over successful explanations; None when
    nothing succeeded (undefined, not zero)."""
    sizes = [len(r.explanation.removed) for r in results if r.success]
    if not sizes:
        return None
    return float(np.mean(sizes))


@dataclass(frozen=True)
class ExplainerSpec:
    """One column of a comparison: a base model plus an explainer setup."""

    label: str
    model_kind: str
    train_cfg: TrainConfig
    algorithm: str  # "greedy" | "iterative_greedy"
    influence: InfluenceConfig


def evaluate_explainers(ds: Dataset, specs, k_values, n_users, seeds,
                        progress=None):
    """Run each explainer over sampled users for each seed, verify by
    retraining, and aggregate.

    Per seed, the base-model training seed and the user-sample seed are
    derived from the run seed. Trained base models and verification retrains
    are cached within a seed (identical inputs give identical results, so
    caching cannot change any output).

    Returns (reports, details): one ExperimentReport per spec with results
    pooled across seeds, plus one plain-dict record per (spec, seed, user,
    K) for the full per-user dump.
    """
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values:
        raise ValueError("k_values must be non-empty")
    kmax = max(k_values)
    details = []
    spec_mses = {spec.label: [] for spec in specs}
    for seed in seeds:
        base_cache = {}
        verify_cache = {}
        users = None
        for spec in specs:
            tc = replace(spec.train_cfg, seed=derive_seed(seed, "train"))
            base_key = (spec.model_kind, tc)
            if base_key not in base_cache:
                base_cache[base_key] = models.train(spec.model_kind, ds, tc)
            params, _ = base_cache[base_key]
            spec_mses[spec.label].append(models.mse(params, ds))
            if users is None:
                users = sample_users(ds, n_users, derive_seed(seed, "sample"))
            for u in users:
                preds = models.top_k(params, u, ds, kmax)
                items = np.array([p.item_id for p in preds], dtype=np.int64)
                table = influence_table(params, ds, u, items, spec.influence,
                                        tc)
                for k in k_values:
                    cfg_k = SearchConfig(k=k, algorithm=spec.algorithm)
                    if spec.algorithm == "greedy":
                        expl = greedy_explain(params, ds, u, table, cfg_k)
                    else:
                        expl = iterative_greedy_explain(params, ds, u, table,
                                                        cfg_k)
                    record = {
                        "explainer": spec.label,
                        "seed": int(seed),
                        "user": int(u),
                        "K": int(k),
                        "status": expl.status,
                        "rec": int(expl.rec),
                        "rec_star": (None if expl.rec_star is None
                                     else int(expl.rec_star)),
                        "size": len(expl.removed),
                        "success": False,
                        "actual_new_top1": None,
                        "diverged": False,
                    }
                    if expl.status == "found":
                        verified = retrain_verify(spec.model_kind, ds, expl,
                                                  tc, cache=verify_cache)
                        record["diverged"] = verified.diverged
                        record["actual_new_top1"] = verified.actual_new_top1
                        record["success"] = verified.success
                    details.append(record)
                    if progress is not None:
                        progress(record)
    reports = []
    for spec in specs:
        per_k = {}
        for k in k_values:
            rows = [r for r in details
                    if r["explainer"] == spec.label and r["K"] == k]
            successes = [r for r in rows if r["success"]]
            esp_val = 100.0 * len(successes) / len(rows) if rows else 0.0
            sizes = [r["size"] for r in successes]
            per_k[k] = (esp_val, float(np.mean(sizes)) if sizes else None)
        reports.append(ExperimentReport(
            label=spec.label,
            mse=float(np.mean(spec_mses[spec.label])),
            per_k=per_k,
            num_users_sampled=int(n_users),
            seeds=tuple(int(s) for s in seeds)))
    return reports, details


def sweep_embedding(ds: Dataset, dims, train_cfg: TrainConfig,
                    influence_cfg: InfluenceConfig,
                    algorithm="iterative_greedy", k=5, n_users=10, seed=0,
                    progress=None):
    """Train one model per embedding dimension and measure fit quality
    against explanation quality. Returns rows of (d, mse, esp, aes)."""
    dims = [int(d) for d in dims]
    if not dims:
        raise ValueError("dims must be non-empty")
    if any(d < 1 for d in dims):
        raise ValueError("dims must be >= 1")
    rows = []
    for d in dims:
        tc = replace(train_cfg, d=d, hidden_widths=None)
        spec = ExplainerSpec(label=f"d={d}", model_kind="ncf", train_cfg=tc,
                             algorithm=algorithm, influence=influence_cfg)
        reports, _ = evaluate_explainers(ds, [spec], [k], n_users, [seed],
                                         progress=progress)
        esp_val, aes_val = reports[0].per_k[k]
        rows.append((d, reports[0].mse, esp_val, aes_val))
    return rows


def sweep_correlations(rows):
    """Spearman rank correlation of training MSE against ESP and AES over
    sweep rows; None where undefined (constant series or missing AES)."""
    def rho(xs, ys):
        pairs = [(x, y) for x, y in zip(xs, ys) if y is not None]
        if len(pairs) < 2:
            return None
        if (len({p[0] for p in pairs}) < 2 or len({p[1] for p in pairs}) < 2):
            return None  # rank correlation undefined on constant series
        r = scipy.stats.spearmanr([p[0] for p in pairs],
                                  [p[1] for p in pairs]).statistic
        return None if np.isnan(r) else float(r)

    mses = [r[1] for r in rows]
    return {
        "mse_vs_esp": rho(mses, [r[2] for r in rows]),
        "mse_vs_aes": rho(mses, [r[3] for r in rows]),
    }
