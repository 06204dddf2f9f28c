"""Two small recommenders (an embedding-MLP scorer and a factorization
machine) with in-repo analytic gradients, trained by mini-batch SGD on
squared rating error.

Scores are always produced in the configured rating scale: ``raw`` regresses
the 1-5 ratings directly; ``unit`` maps ratings to [0, 1] via (y - 1) / 4 and,
for the MLP model only, squashes the output through a sigmoid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Interaction
from .seeding import derive_seed

MODEL_KINDS = ("ncf", "fm")
RATING_SCALES = ("raw", "unit")

_CHUNK = 8192


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch):
        super().__init__(f"divergence at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    d: int = 8
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    hidden_widths: tuple | None = None  # NCF only; None -> (2d, d)
    rating_scale: str = "unit"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rating_scale not in RATING_SCALES:
            raise ValueError(f"rating_scale must be one of {RATING_SCALES}")
        if self.hidden_widths is not None:
            object.__setattr__(self, "hidden_widths",
                               tuple(int(w) for w in self.hidden_widths))
            if any(w < 1 for w in self.hidden_widths):
                raise ValueError("hidden widths must be >= 1")


@dataclass(frozen=True)
class Prediction:
    item_id: int
    score: float


@dataclass
class NcfParams:
    """Embedding tables plus an MLP over the concatenated pair embedding.

    ``layers`` chains (in, out) weight matrices with (out,) biases from width
    2d down to a single output; hidden activations are ReLU, the output is
    linear (sigmoid on top when rating_scale is ``unit``).
    """

    user_emb: np.ndarray
    item_emb: np.ndarray
    layers: list
    rating_scale: str = "unit"
    seed: int = 0
    kind = "ncf"

    @property
    def d(self):
        return self.user_emb.shape[1]

    @property
    def num_users(self):
        return self.user_emb.shape[0]

    @property
    def num_items(self):
        return self.item_emb.shape[0]

    @property
    def hidden_widths(self):
        return tuple(w.shape[1] for w, _ in self.layers[:-1])


@dataclass
class FmParams:
    """Factorization machine restricted to one-hot user and item inputs:
    score = w0 + b_user[u] + b_item[v] + <v_user[u], v_item[v]>.
    """

    w0: float
    b_user: np.ndarray
    b_item: np.ndarray
    v_user: np.ndarray
    v_item: np.ndarray
    rating_scale: str = "unit"
    seed: int = 0
    kind = "fm"

    @property
    def d(self):
        return self.v_user.shape[1]

    @property
    def num_users(self):
        return self.v_user.shape[0]

    @property
    def num_items(self):
        return self.v_item.shape[0]


@dataclass
class NcfGrads:
    user_emb: np.ndarray
    item_emb: np.ndarray
    layers: list


@dataclass
class FmGrads:
    w0: float
    b_user: np.ndarray
    b_item: np.ndarray
    v_user: np.ndarray
    v_item: np.ndarray


def scaled_targets(ratings, rating_scale):
    """Map raw 1-5 ratings into the model's regression scale."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if rating_scale == "unit":
        return (ratings - 1.0) / 4.0
    return ratings


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def act_derivatives(params, yhat):
    """First and second derivative of the output activation, as functions
    of the activated score. Identity unless NCF in unit scale."""
    if params.kind == "ncf" and params.rating_scale == "unit":
        a1 = yhat * (1.0 - yhat)
        return a1, a1 * (1.0 - 2.0 * yhat)
    return np.ones_like(yhat), np.zeros_like(yhat)


def init(kind, ds: Dataset, cfg: TrainConfig):
    """Fresh parameters; embeddings iid uniform in [-1/sqrt(d), 1/sqrt(d)],
    MLP weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.

    Draw order is fixed (user table, item table, then layer weights in
    order) so the same seed is bit-reproducible.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / np.sqrt(cfg.d)
    if kind == "ncf":
        user_emb = rng.uniform(-bound, bound, (ds.num_users, cfg.d))
        item_emb = rng.uniform(-bound, bound, (ds.num_items, cfg.d))
        widths = cfg.hidden_widths
        if widths is None:
            widths = (2 * cfg.d, cfg.d)
        dims = (2 * cfg.d, *widths, 1)
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            wb = 1.0 / np.sqrt(fan_in)
            layers.append((rng.uniform(-wb, wb, (fan_in, fan_out)),
                           np.zeros(fan_out)))
        return NcfParams(user_emb, item_emb, layers, cfg.rating_scale, cfg.seed)
    v_user = rng.uniform(-bound, bound, (ds.num_users, cfg.d))
    v_item = rng.uniform(-bound, bound, (ds.num_items, cfg.d))
    return FmParams(0.0, np.zeros(ds.num_users), np.zeros(ds.num_items),
                    v_user, v_item, cfg.rating_scale, cfg.seed)


def clone_params(params):
    """Writable deep copy."""
    if params.kind == "ncf":
        return NcfParams(params.user_emb.copy(), params.item_emb.copy(),
                         [(w.copy(), b.copy()) for w, b in params.layers],
                         params.rating_scale, params.seed)
    return FmParams(float(params.w0), params.b_user.copy(),
                    params.b_item.copy(), params.v_user.copy(),
                    params.v_item.copy(), params.rating_scale, params.seed)


def freeze_params(params):
    for arr in _param_arrays(params):
        arr.flags.writeable = False
    return params


def _param_arrays(params):
    if params.kind == "ncf":
        yield params.user_emb
        yield params.item_emb
        for w, b in params.layers:
            yield w
            yield b
    else:
        yield params.b_user
        yield params.b_item
        yield params.v_user
        yield params.v_item


def _check_ids(params, users, items):
    users = np.asarray(users)
    items = np.asarray(items)
    if users.size and (users.min() < 0 or users.max() >= params.num_users):
        raise ValueError("user id out of range")
    if items.size and (items.min() < 0 or items.max() >= params.num_items):
        raise ValueError("item id out of range")


def _ncf_forward(params, users, items, want_acts=False):
    x = np.concatenate([params.user_emb[users], params.item_emb[items]],
                       axis=1)
    acts = [x]
    h = x
    for w, b in params.layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    w_out, b_out = params.layers[-1]
    g = (h @ w_out)[:, 0] + b_out[0]
    yhat = _sigmoid(g) if params.rating_scale == "unit" else g
    if want_acts:
        return yhat, acts
    return yhat


def _fm_forward(params, users, items):
    return (params.w0 + params.b_user[users] + params.b_item[items]
            + np.einsum("ij,ij->i", params.v_user[users],
                        params.v_item[items]))


def score_batch(params, users, items):
    """Model scores for parallel arrays of user and item ids."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    _check_ids(params, users, items)
    if params.kind == "ncf":
        return _ncf_forward(params, users, items)
    return _fm_forward(params, users, items)


def score_items(params, u, items):
    """Scores of one user against an array of items."""
    items = np.asarray(items, dtype=np.int64)
    users = np.full(len(items), u, dtype=np.int64)
    return score_batch(params, users, items)


def forward(params, u, v) -> float:
    """Preference score for a single user-item pair."""
    return float(score_batch(params, np.array([u]), np.array([v]))[0])


def _ncf_backward(params, acts, dg):
    """Backprop dg (per-sample dL/d pre-activation output) through the MLP.

    Returns per-layer (dW, db) summed over the batch and the gradient at the
    concatenated embedding input.
    """
    delta = dg[:, None]
    layer_grads = [None] * len(params.layers)
    for li in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[li]
        a_in = acts[li]
        layer_grads[li] = (a_in.T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
        if li > 0:
            delta = delta * (acts[li] > 0)
    return layer_grads, delta


def ncf_input_grads(params, users, items):
    """Batched scores plus gradients of the pre-activation MLP output with
    respect to the user and item embedding rows."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    _check_ids(params, users, items)
    yhat, acts = _ncf_forward(params, users, items, want_acts=True)
    _, dx = _ncf_backward(params, acts, np.ones(len(users)))
    d = params.d
    return yhat, dx[:, :d], dx[:, d:]


def loss_and_grad(params, z: Interaction):
    """Squared-error loss of one interaction and its gradient over all
    parameters (dense arrays; only the touched embedding rows are nonzero).
    """
    users = np.array([z.user_id], dtype=np.int64)
    items = np.array([z.item_id], dtype=np.int64)
    _check_ids(params, users, items)
    target = float(scaled_targets(z.rating, params.rating_scale))
    if params.kind == "ncf":
        yhat, acts = _ncf_forward(params, users, items, want_acts=True)
        resid = yhat[0] - target
        a1, _ = act_derivatives(params, yhat)
        dg = np.array([2.0 * resid * a1[0]])
        layer_grads, dx = _ncf_backward(params, acts, dg)
        g_user = np.zeros_like(params.user_emb)
        g_item = np.zeros_like(params.item_emb)
        d = params.d
        g_user[z.user_id] = dx[0, :d]
        g_item[z.item_id] = dx[0, d:]
        return float(resid * resid), NcfGrads(g_user, g_item, layer_grads)
    yhat = _fm_forward(params, users, items)[0]
    resid = yhat - target
    dg = 2.0 * resid
    g_bu = np.zeros_like(params.b_user)
    g_bi = np.zeros_like(params.b_item)
    g_vu = np.zeros_like(params.v_user)
    g_vi = np.zeros_like(params.v_item)
    g_bu[z.user_id] = dg
    g_bi[z.item_id] = dg
    g_vu[z.user_id] = dg * params.v_item[z.item_id]
    g_vi[z.item_id] = dg * params.v_user[z.user_id]
    return float(resid * resid), FmGrads(dg, g_bu, g_bi, g_vu, g_vi)


def _sgd_step(params, users, items, targets, lr):
    b = len(users)
    if params.kind == "ncf":
        yhat, acts = _ncf_forward(params, users, items, want_acts=True)
        a1, _ = act_derivatives(params, yhat)
        dg = 2.0 * (yhat - targets) * a1 / b
        layer_grads, dx = _ncf_backward(params, acts, dg)
        for (w, bias), (gw, gb) in zip(params.layers, layer_grads):
            w -= lr * gw
            bias -= lr * gb
        d = params.d
        np.subtract.at(params.user_emb, users, lr * dx[:, :d])
        np.subtract.at(params.item_emb, items, lr * dx[:, d:])
    else:
        yhat = _fm_forward(params, users, items)
        dg = 2.0 * (yhat - targets) / b
        vu, vi = params.v_user[users], params.v_item[items]
        params.w0 -= lr * dg.sum()
        np.subtract.at(params.b_user, users, lr * dg)
        np.subtract.at(params.b_item, items, lr * dg)
        np.subtract.at(params.v_user, users, lr * dg[:, None] * vi)
        np.subtract.at(params.v_item, items, lr * dg[:, None] * vu)


def _mix64(x):
    # splitmix64 finalizer, vectorized on uint64
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def _shuffle_order(ds, shuffle_seed, epoch):
    """Epoch shuffle keyed on interaction content rather than position.

    Each (user, item) pair hashes to a stable slot for a given seed and
    epoch, so retraining after removing a few interactions keeps the
    remaining batches nearly intact: score changes then reflect the removal
    itself rather than a wholesale recomposition of the SGD path.
    """
    keys = ds.users.astype(np.uint64) * np.uint64(ds.num_items) \
        + ds.items.astype(np.uint64)
    salt = _mix64(np.uint64(shuffle_seed & 0xFFFFFFFFFFFFFFFF)
                  + _mix64(np.uint64(epoch)))
    return np.argsort(_mix64(keys ^ salt), kind="stable")


def _run_epochs(params, ds, targets, epochs, lr, batch_size, shuffle_seed,
                mse_trace=None):
    n = len(ds)
    bs = min(batch_size, n)
    # arithmetic may overflow once parameters diverge; the per-epoch
    # finiteness check is the signal, so keep the updates silent
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            perm = _shuffle_order(ds, shuffle_seed, epoch)
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                _sgd_step(params, ds.users[idx], ds.items[idx], targets[idx],
                          lr)
            if mse_trace is not None:
                epoch_mse = mse(params, ds)
                if not np.isfinite(epoch_mse):
                    raise DivergenceError(epoch)
                mse_trace.append(epoch_mse)


def train(kind, ds: Dataset, cfg: TrainConfig):
    """Mini-batch SGD over shuffled interactions.

    Pure function of (kind, ds, cfg): the init draws from cfg.seed and the
    per-epoch shuffle order from a sub-seed of it hashed with interaction
    content (see _shuffle_order). Returns the final parameters and the
    per-epoch training MSE trace.
    """
    params = init(kind, ds, cfg)
    shuffle_seed = derive_seed(cfg.seed, "sgd-shuffle")
    targets = scaled_targets(ds.ratings, cfg.rating_scale)
    trace = []
    _run_epochs(params, ds, targets, cfg.epochs, cfg.lr, cfg.batch_size,
                shuffle_seed, mse_trace=trace)
    freeze_params(params)
    return params, np.array(trace)


def continue_training(params, ds: Dataset, epochs, lr, batch_size, seed):
    """Further SGD epochs from existing parameters, on a private copy.

    Used by data-based influence estimation; the caller supplies the
    (already derived) shuffle seed so results are pure in their inputs.
    """
    out = clone_params(params)
    targets = scaled_targets(ds.ratings, params.rating_scale)
    _run_epochs(out, ds, targets, epochs, lr, batch_size, int(seed))
    if not all(np.isfinite(a).all() for a in _param_arrays(out)):
        raise DivergenceError(epochs - 1)
    return freeze_params(out)


def mse(params, ds: Dataset) -> float:
    """Mean squared error over the full interaction log, in the model's
    rating scale."""
    targets = scaled_targets(ds.ratings, params.rating_scale)
    total = 0.0
    # overflow on diverged parameters is expected; inf/nan is the signal
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(ds), _CHUNK):
            sl = slice(start, start + _CHUNK)
            pred = score_batch(params, ds.users[sl], ds.items[sl])
            diff = pred - targets[sl]
            total += float(diff @ diff)
    return total / len(ds)


def top_k(params, u, ds: Dataset, k: int):
    """Top-k uninteracted items for user u, scores descending, ties broken
    by ascending item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    interacted = np.unique(ds.items_of(u))
    candidates = np.setdiff1d(np.arange(ds.num_items), interacted,
                              assume_unique=True)
    if len(candidates) == 0:
        raise ValueError(f"user {u} has no uninteracted items")
    scores = score_items(params, u, candidates)
    order = np.lexsort((candidates, -scores))[:min(k, len(candidates))]
    return [Prediction(int(candidates[i]), float(scores[i])) for i in order]


def save_checkpoint(params, path, train_cfg=None):
    """Write `<path>.npz` (tensors) and `<path>.json` (shape manifest).

    Loading reproduces forward outputs bit-exactly (float64 throughout).
    When the training configuration is supplied, its optimizer settings are
    recorded under a "train" key so downstream stages (data-based influence,
    verification retraining) can reproduce it.
    """
    path = str(path)
    if path.endswith(".npz"):
        path = path[:-4]
    manifest = {
        "model_kind": params.kind,
        "d": int(params.d),
        "hidden_widths": (list(params.hidden_widths)
                          if params.kind == "ncf" else None),
        "num_users": int(params.num_users),
        "num_items": int(params.num_items),
        "seed": int(params.seed),
        "rating_scale": params.rating_scale,
    }
    if train_cfg is not None:
        manifest["train"] = {
            "lr": train_cfg.lr,
            "epochs": train_cfg.epochs,
            "batch_size": train_cfg.batch_size,
        }
    arrays = {}
    if params.kind == "ncf":
        arrays["user_emb"] = params.user_emb
        arrays["item_emb"] = params.item_emb
        for i, (w, b) in enumerate(params.layers):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
    else:
        arrays["w0"] = np.array([params.w0])
        arrays["b_user"] = params.b_user
        arrays["b_item"] = params.b_item
        arrays["v_user"] = params.v_user
        arrays["v_item"] = params.v_item
    np.savez(path + ".npz", **arrays)
    with open(path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    path = str(path)
    if path.endswith(".npz"):
        path = path[:-4]
    with open(path + ".json") as fh:
        manifest = json.load(fh)
    with np.load(path + ".npz") as arrays:
        if manifest["model_kind"] == "ncf":
            n_layers = len(manifest["hidden_widths"]) + 1
            layers = [(arrays[f"w{i}"], arrays[f"b{i}"])
                      for i in range(n_layers)]
            params = NcfParams(arrays["user_emb"], arrays["item_emb"], layers,
                               manifest["rating_scale"], manifest["seed"])
        else:
            params = FmParams(float(arrays["w0"][0]), arrays["b_user"],
                              arrays["b_item"], arrays["v_user"],
                              arrays["v_item"], manifest["rating_scale"],
                              manifest["seed"])
    return freeze_params(params)
