"""Shared test oracles: parameter flattening for finite differences,
leave-one-out retraining deltas, exhaustive minimal-subset search, and a
planted-cause dataset where the driver of a recommendation is known by
construction.
"""

import itertools

import numpy as np

from cfrec import models
from cfrec.data import Dataset


def to_vector(struct, kind):
    """Flatten a parameter or gradient container into one coordinate vector.

    Field names match between the two container families, so the same
    ordering serves both.
    """
    if kind == "ncf":
        parts = [struct.user_emb.ravel(), struct.item_emb.ravel()]
        for w, b in struct.layers:
            parts += [w.ravel(), b.ravel()]
    else:
        parts = [np.array([struct.w0], dtype=np.float64),
                 struct.b_user.ravel(), struct.b_item.ravel(),
                 struct.v_user.ravel(), struct.v_item.ravel()]
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def from_vector(params, vec):
    """Writable clone of params with all coordinates replaced from vec."""
    out = models.clone_params(params)
    off = 0

    def take(arr):
        nonlocal off
        flat = vec[off:off + arr.size]
        off += arr.size
        return flat.reshape(arr.shape)

    if params.kind == "ncf":
        out.user_emb = take(out.user_emb)
        out.item_emb = take(out.item_emb)
        out.layers = [(take(w), take(b)) for w, b in out.layers]
    else:
        out.w0 = float(vec[0])
        off = 1
        out.b_user = take(out.b_user)
        out.b_item = take(out.b_item)
        out.v_user = take(out.v_user)
        out.v_item = take(out.v_item)
    assert off == len(vec)
    return out


def point_loss(params, z):
    target = float(models.scaled_targets(z.rating, params.rating_scale))
    return (models.forward(params, z.user_id, z.item_id) - target) ** 2


def fd_gradient(params, z, h=1e-5):
    """Central finite differences of the single-point loss, every coordinate."""
    base = to_vector(params, params.kind)
    grad = np.empty_like(base)
    for i in range(len(base)):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        grad[i] = (point_loss(from_vector(params, plus), z)
                   - point_loss(from_vector(params, minus), z)) / (2 * h)
    return grad


def loo_delta(params_full, kind, ds, train_cfg, z_pos, target):
    """Ground-truth influence: full from-scratch retrain without one point."""
    reduced = ds.drop_positions([z_pos])
    params_loo, _ = models.train(kind, reduced, train_cfg)
    u, v = target
    return models.forward(params_full, u, v) - models.forward(params_loo, u, v)


def exhaustive_min_flip_size(base_scores, i_scores, k, cap):
    """Smallest removal-set size flipping the top-1 to any pool candidate
    under the additive score model, by subset enumeration; None if no
    subset within the cap flips anything."""
    n = i_scores.shape[0]
    k = min(k, len(base_scores))
    best = None
    for col in range(1, k):
        diff0 = base_scores[0] - base_scores[col]
        pair = i_scores[:, 0] - i_scores[:, col]
        for size in range(1, min(n, cap) + 1):
            if best is not None and size >= best:
                break
            hit = any(diff0 - pair[list(subset)].sum() < 0
                      for subset in itertools.combinations(range(n), size))
            if hit:
                best = size if best is None or size < best else best
                break
    return best


def planted_dataset(seed, n_planted=7, n_group=30, n_neutral=20, wanted=4.2,
                    counter=2.6, jitter=0.1):
    """Rank-1 rating log where one interaction provably drives a user's
    top-1 recommendation.

    Ratings follow r(u, i) = 3 + t_u * s_i + q_i + noise, clipped to [1, 5]:
    a single latent cause axis (t: group G = +1, group H = -1, others 0;
    s: contested item C and G's signature SG load +1.9, H's signature SH
    loads -1.9) plus an item-quality offset (the "wanted" item W sits at a
    flat `wanted` level for everyone, neutral fillers at 3).

    Each planted user rates one strong cause edge (SG at 5.0), one mild
    counter edge (SH) that keeps the cause's residual alive, and four
    neutral fillers. With the cause present the model places the user on
    G's side, so the contested item C wins; removing the cause drops the
    user to near-neutral, where C reverts toward its mid-level anchor and
    W takes over as top-1.

    Returns (ds, planted, contested, wanted_item): planted maps each
    planted user to the log position of its cause edge; the item ids are
    dense.
    """
    rng = np.random.default_rng(seed)
    c_item, w_item, sg, sh = 0, 1, 2, 3
    neutrals = list(range(4, 11))
    loading = {c_item: 1.9, sg: 1.9, sh: -1.9}
    quality = {w_item: wanted - 3.0}

    def rating(t_u, i):
        value = (3.0 + t_u * loading.get(i, 0.0) + quality.get(i, 0.0)
                 + rng.normal(0, jitter))
        return float(np.clip(value, 1.0, 5.0))

    records = []
    user = 0
    for _ in range(n_group):           # group G
        for i in [sg, c_item, sh, w_item] + list(
                rng.choice(neutrals, 3, replace=False)):
            records.append((user, int(i), rating(+1.0, int(i)), 0))
        user += 1
    for _ in range(n_group):           # group H
        for i in [sh, c_item, sg, w_item] + list(
                rng.choice(neutrals, 3, replace=False)):
            records.append((user, int(i), rating(-1.0, int(i)), 0))
        user += 1
    for _ in range(n_neutral):         # anchor the no-signature profile
        for i in [c_item, w_item] + list(
                rng.choice(neutrals, 4, replace=False)):
            records.append((user, int(i), rating(0.0, int(i)), 0))
        user += 1
    planted_users = []
    for _ in range(n_planted):
        records.append((user, sg, 5.0, 0))
        records.append((user, sh,
                        float(np.clip(counter + rng.normal(0, jitter), 1, 5)),
                        0))
        for i in rng.choice(neutrals, 4, replace=False):
            records.append((user, int(i), rating(0.0, int(i)), 0))
        planted_users.append(user)
        user += 1

    ds = Dataset.from_records(records)
    cause_dense = ds.item_index[sg]
    planted = {}
    for u in planted_users:
        du = ds.user_index[u]
        for pos in ds.per_user[du]:
            if int(ds.items[pos]) == cause_dense:
                planted[du] = int(pos)
    return ds, planted, ds.item_index[c_item], ds.item_index[w_item]


def planted_train_config(seed):
    """Training setup under which the planted cause is recoverable."""
    from cfrec.models import TrainConfig
    return TrainConfig(d=4, lr=0.05, epochs=400, batch_size=32, seed=seed,
                       rating_scale="raw")
