"""Influence of a single training interaction on a model score.

The influence of removing interaction z on the score of pair (u, v) is the
difference between the current score and the score the model would give
after z's removal. Two estimators of the post-removal score are provided:

* gradient_based: a damped inverse-Hessian step on the removed point's
  loss gradient, restricted to a small parameter block around the user,
  followed by a plain forward pass on the perturbed parameters.
* data_based: continued SGD for a few epochs on the log with z deleted,
  starting from the trained parameters, then a forward pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import models
from .data import Dataset
from .seeding import derive_seed

METHODS = ("gradient_based", "data_based")
PARAM_SCOPES = ("user_block", "user_and_items_block")
N_CONVENTIONS = ("user_n", "global_n")

# Ridge applied to the block Hessian when no explicit damping is configured:
# 1e-3 times the mean diagonal, floored so that an all-zero block (a user the
# score locally does not depend on) yields a zero update instead of a
# singular solve.
AUTO_DAMPING_SCALE = 1e-3
AUTO_DAMPING_FLOOR = 1e-8

_COND_LIMIT = 1e12


class IllConditionedError(RuntimeError):
    """Damped block Hessian is numerically singular."""


@dataclass(frozen=True)
class InfluenceConfig:
    method: str = "gradient_based"
    param_scope: str = "user_block"
    damping: float | None = None  # None -> auto_damping_scale * mean diag
    n_convention: str = "user_n"
    t2_epochs: int = 1            # data_based only
    continuation_lr: float | None = None  # data_based only; None -> train lr
    # relative ridge used when damping is None; larger values trade
    # estimate magnitude for conditioning (heavier damping suits larger,
    # sparser models whose block Hessians have near-null directions)
    auto_damping_scale: float = AUTO_DAMPING_SCALE

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.param_scope not in PARAM_SCOPES:
            raise ValueError(f"param_scope must be one of {PARAM_SCOPES}")
        if self.damping is not None and self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.n_convention not in N_CONVENTIONS:
            raise ValueError(f"n_convention must be one of {N_CONVENTIONS}")
        if self.t2_epochs < 1:
            raise ValueError("t2_epochs must be >= 1")
        if self.continuation_lr is not None and self.continuation_lr <= 0:
            raise ValueError("continuation_lr must be > 0")
        if self.auto_damping_scale <= 0:
            raise ValueError("auto_damping_scale must be > 0")


@dataclass(frozen=True)
class InfluenceEstimate:
    """Priced removal of one interaction against one target pair."""

    z_pos: int
    user: int
    z_item: int
    target_item: int
    i_score: float
    y_minus_z: float
    method: str


@dataclass(frozen=True)
class ParamBlock:
    """The parameter coordinates perturbed for one user's influence math.

    ``segments`` lists (attribute, row, length) pieces of the flattened
    block vector, in order; the attribute names match both the parameter
    and the gradient containers.
    """

    user: int
    items: np.ndarray | None  # ascending item ids, or None for user_block
    segments: tuple
    size: int

    def extract(self, struct) -> np.ndarray:
        out = np.empty(self.size)
        off = 0
        for attr, row, length in self.segments:
            arr = getattr(struct, attr)
            out[off:off + length] = arr[row]
            off += length
        return out

    def replace(self, params, vec):
        """Deep copy of params with the block coordinates set to vec."""
        out = models.clone_params(params)
        off = 0
        for attr, row, length in self.segments:
            arr = getattr(out, attr)
            if arr.ndim == 1 and length == 1:
                arr[row] = vec[off]
            else:
                arr[row] = vec[off:off + length]
            off += length
        return models.freeze_params(out)


def make_block(params, ds: Dataset, u: int, param_scope: str) -> ParamBlock:
    d = params.d
    items = None
    if param_scope == "user_and_items_block":
        items = np.unique(ds.items_of(u))
    if params.kind == "ncf":
        segments = [("user_emb", u, d)]
        if items is not None:
            segments += [("item_emb", int(v), d) for v in items]
    else:
        segments = [("b_user", u, 1), ("v_user", u, d)]
        if items is not None:
            for v in items:
                segments += [("b_item", int(v), 1), ("v_item", int(v), d)]
    size = sum(length for _, _, length in segments)
    return ParamBlock(int(u), items, tuple(segments), size)


def _touching_positions(ds: Dataset, block: ParamBlock) -> np.ndarray:
    """Positions of interactions whose loss depends on block coordinates."""
    if block.items is None:
        return np.asarray(ds.per_user[block.user])
    mask = (ds.users == block.user) | np.isin(ds.items, block.items)
    return np.flatnonzero(mask)


def _pair_score_grads(params, users, items):
    """Per-pair (yhat, d g/d user_row, d g/d item_row) where g is the
    pre-activation score; for FM the rows are the factor vectors and the
    constant bias derivative is handled by the caller."""
    if params.kind == "ncf":
        return models.ncf_input_grads(params, users, items)
    yhat = models.score_batch(params, users, items)
    return yhat, params.v_item[items], params.v_user[users]


def _block_score_grad(params, block, u_id, v_id, du_row, dv_row):
    """Assemble the block-restricted gradient of the pre-activation score."""
    d = params.d
    vec = np.zeros(block.size)
    if u_id == block.user:
        if params.kind == "ncf":
            vec[0:d] = du_row
        else:
            vec[0] = 1.0
            vec[1:1 + d] = du_row
    if block.items is not None:
        j = np.searchsorted(block.items, v_id)
        if j < len(block.items) and block.items[j] == v_id:
            if params.kind == "ncf":
                off = d * (1 + j)
                vec[off:off + d] = dv_row
            else:
                off = (1 + d) * (1 + j)
                vec[off] = 1.0
                vec[off + 1:off + 1 + d] = dv_row
    return vec


def hessian_block(params, ds: Dataset, u: int, cfg: InfluenceConfig,
                  block: ParamBlock | None = None) -> np.ndarray:
    """Damped average Hessian of the squared-error loss over the
    interactions touching the block.

    The average runs over exactly those interactions whose loss depends on
    a block coordinate (the user's own interactions for user_block). The
    result includes the ridge term and is exactly symmetric.
    """
    if block is None:
        block = make_block(params, ds, u, cfg.param_scope)
    positions = _touching_positions(ds, block)
    if len(positions) == 0:
        raise ValueError(f"user {u} has no interactions")
    users = ds.users[positions]
    items = ds.items[positions]
    targets = models.scaled_targets(ds.ratings[positions], params.rating_scale)
    yhat, du, dv = _pair_score_grads(params, users, items)
    a1, a2 = models.act_derivatives(params, yhat)
    resid = yhat - targets

    p = block.size
    h = np.zeros((p, p))
    d = params.d
    for row in range(len(positions)):
        grad = _block_score_grad(params, block, users[row], items[row],
                                 du[row], dv[row])
        weight = 2.0 * (a1[row] * a1[row] + resid[row] * a2[row])
        h += weight * np.outer(grad, grad)
        if (params.kind == "fm" and block.items is not None
                and users[row] == block.user):
            j = np.searchsorted(block.items, items[row])
            if j < len(block.items) and block.items[j] == items[row]:
                # cross second derivative of <v_user, v_item> is the identity
                cross = 2.0 * resid[row]
                off_u = 1
                off_v = (1 + d) * (1 + j) + 1
                for c in range(d):
                    h[off_u + c, off_v + c] += cross
                    h[off_v + c, off_u + c] += cross
    h /= len(positions)

    lam = cfg.damping
    if lam is None:
        lam = max(cfg.auto_damping_scale * float(np.mean(np.diag(h))),
                  AUTO_DAMPING_FLOOR)
    h[np.diag_indices_from(h)] += lam

    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise IllConditionedError(
            f"block Hessian condition estimate {cond:.3e} exceeds "
            f"{_COND_LIMIT:.0e}; increase damping (current {lam!r})")
    return h


def _loss_grad_block(params, ds, block, z_pos):
    """Gradient of the single-interaction loss restricted to the block."""
    u_id = int(ds.users[z_pos])
    v_id = int(ds.items[z_pos])
    target = float(models.scaled_targets(ds.ratings[z_pos],
                                         params.rating_scale))
    yhat, du, dv = _pair_score_grads(params, np.array([u_id]),
                                     np.array([v_id]))
    a1, _ = models.act_derivatives(params, yhat)
    grad = _block_score_grad(params, block, u_id, v_id, du[0], dv[0])
    return 2.0 * (yhat[0] - target) * a1[0] * grad


def _removal_n(ds, u, cfg):
    if cfg.n_convention == "global_n":
        return len(ds)
    return len(ds.per_user[u])


def perturbed_params(params, ds: Dataset, z_pos: int, cfg: InfluenceConfig):
    """Parameters estimated for the log without interaction ``z_pos``:
    the block coordinates move by (1/n) (H + lambda I)^-1 grad L(z); all
    other coordinates are bit-identical copies.
    """
    u = int(ds.users[z_pos])
    block = make_block(params, ds, u, cfg.param_scope)
    h = hessian_block(params, ds, u, cfg, block=block)
    grad = _loss_grad_block(params, ds, block, z_pos)
    step = scipy.linalg.solve(h, grad, assume_a="sym")
    step /= _removal_n(ds, u, cfg)
    return block.replace(params, block.extract(params) + step)


def _continuation_scores(params, ds, z_pos, u, items, cfg, train_cfg):
    reduced = ds.drop_positions([int(z_pos)])
    lr = cfg.continuation_lr if cfg.continuation_lr is not None else train_cfg.lr
    # one shared continuation seed: with content-keyed batching, the SGD
    # paths for different removals then differ only through the removal
    # itself, not through unrelated reshuffling
    seed = derive_seed(train_cfg.seed, "continue")
    cont = models.continue_training(params, reduced, cfg.t2_epochs, lr,
                                    train_cfg.batch_size, seed)
    return models.score_items(cont, u, items)


def score_after_removal(params, ds: Dataset, z_pos: int, target,
                        cfg: InfluenceConfig,
                        train_cfg=None) -> InfluenceEstimate:
    """Influence estimate of removing one interaction on one target pair.

    The target user must own the removed interaction. For data_based
    estimation the original training configuration must be supplied; the
    continuation shuffle seed is derived from its seed and the removed
    position, so estimates are pure functions of their inputs.
    """
    u, v = int(target[0]), int(target[1])
    if int(ds.users[z_pos]) != u:
        raise ValueError("target user does not own the removed interaction")
    yhat = models.forward(params, u, v)
    if cfg.method == "gradient_based":
        pert = perturbed_params(params, ds, z_pos, cfg)
        y_minus = models.forward(pert, u, v)
    else:
        if train_cfg is None:
            raise ValueError("data_based estimation requires train_cfg")
        y_minus = float(_continuation_scores(params, ds, z_pos, u,
                                             np.array([v]), cfg,
                                             train_cfg)[0])
    return InfluenceEstimate(int(z_pos), u, int(ds.items[z_pos]), v,
                             yhat - y_minus, y_minus, cfg.method)


def pair_influence(est_v: InfluenceEstimate, est_w: InfluenceEstimate) -> float:
    """Influence of one removal on the score difference between two items."""
    if est_v.z_pos != est_w.z_pos:
        raise ValueError("estimates price different removals")
    if est_v.user != est_w.user:
        raise ValueError("estimates target different users")
    if est_v.method != est_w.method:
        raise ValueError("estimates mix estimation methods")
    return est_v.i_score - est_w.i_score


@dataclass(frozen=True)
class InfluenceTable:
    """Per-removal influence scores for one user against a target pool.

    Column 0 of ``i_scores`` corresponds to ``items[0]``, by convention the
    user's current top-1 recommendation.
    """

    user: int
    method: str
    positions: np.ndarray   # the user's interaction positions, log order
    items: np.ndarray       # target item ids
    base_scores: np.ndarray
    i_scores: np.ndarray    # (len(positions), len(items))

    def estimate(self, row: int, col: int, ds: Dataset) -> InfluenceEstimate:
        pos = int(self.positions[row])
        i_score = float(self.i_scores[row, col])
        base = float(self.base_scores[col])
        return InfluenceEstimate(pos, int(self.user), int(ds.items[pos]),
                                 int(self.items[col]), i_score,
                                 base - i_score, self.method)


def _scores_with_block(params, block, vec, u, items):
    """Scores of (u, items) with the block coordinates replaced by vec,
    without copying the full parameter set. Bitwise identical to scoring
    ``block.replace(params, vec)``.
    """
    d = params.d
    items = np.asarray(items, dtype=np.int64)
    if params.kind == "ncf":
        user_row = vec[0:d]
        item_rows = params.item_emb[items].copy()
    else:
        b_u = vec[0]
        user_row = vec[1:1 + d]
        item_rows = params.v_item[items].copy()
        b_items = params.b_item[items].copy()
    if block.items is not None:
        j = np.searchsorted(block.items, items)
        inside = (j < len(block.items)) & (block.items[np.minimum(
            j, len(block.items) - 1)] == items)
        for t in np.flatnonzero(inside):
            jj = j[t]
            if params.kind == "ncf":
                off = d * (1 + jj)
                item_rows[t] = vec[off:off + d]
            else:
                off = (1 + d) * (1 + jj)
                b_items[t] = vec[off]
                item_rows[t] = vec[off + 1:off + 1 + d]
    if params.kind == "ncf":
        x = np.concatenate(
            [np.broadcast_to(user_row, (len(items), d)), item_rows], axis=1)
        h = x
        for w, b in params.layers[:-1]:
            h = np.maximum(h @ w + b, 0.0)
        w_out, b_out = params.layers[-1]
        g = (h @ w_out)[:, 0] + b_out[0]
        return models._sigmoid(g) if params.rating_scale == "unit" else g
    return params.w0 + b_u + b_items + item_rows @ user_row


def influence_table(params, ds: Dataset, u: int, items,
                    cfg: InfluenceConfig, train_cfg=None) -> InfluenceTable:
    """Influence of every interaction of user u on each target item.

    Shares the Hessian factorization (gradient_based) or the per-removal
    continuation run (data_based) across targets; results are identical to
    calling ``score_after_removal`` per cell.
    """
    items = np.asarray(items, dtype=np.int64)
    positions = np.asarray(ds.per_user[u])
    if len(positions) == 0:
        raise ValueError(f"user {u} has no interactions")
    base = models.score_items(params, u, items)
    i_scores = np.empty((len(positions), len(items)))
    if cfg.method == "gradient_based":
        block = make_block(params, ds, u, cfg.param_scope)
        h = hessian_block(params, ds, u, cfg, block=block)
        grads = np.stack([_loss_grad_block(params, ds, block, pos)
                          for pos in positions], axis=1)
        steps = scipy.linalg.solve(h, grads, assume_a="sym")
        steps /= _removal_n(ds, u, cfg)
        base_vec = block.extract(params)
        for row in range(len(positions)):
            y_minus = _scores_with_block(params, block,
                                         base_vec + steps[:, row], u, items)
            i_scores[row] = base - y_minus
    else:
        if train_cfg is None:
            raise ValueError("data_based estimation requires train_cfg")
        for row, pos in enumerate(positions):
            y_minus = _continuation_scores(params, ds, pos, u, items, cfg,
                                           train_cfg)
            i_scores[row] = base - y_minus
    return InfluenceTable(int(u), cfg.method, positions, items, base,
                          i_scores)


def write_influence_csv(path, estimates):
    """Audit dump: one row per (removal, target) estimate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_user", "z_item", "target_item", "method",
                         "i_score", "y_minus_z"])
        for est in estimates:
            writer.writerow([est.user, est.z_item, est.target_item,
                             est.method, repr(est.i_score),
                             repr(est.y_minus_z)])
