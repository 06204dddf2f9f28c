"""User-item rating data: ingestion, filtering, synthesis, CSV round trips."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

RATING_MIN = 1.0
RATING_MAX = 5.0

CANONICAL_HEADER = ("user", "item", "rating", "timestamp")


class ParseError(ValueError):
    """Malformed input record; carries the 1-based line number when known."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DatasetError(ValueError):
    """Dataset-level contract violation (empty result, bad configuration)."""


@dataclass(frozen=True)
class Interaction:
    """One (user, item, rating) training record; the unit explainers remove."""

    user_id: int
    item_id: int
    rating: float
    timestamp: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable interaction log with dense ids and per-user adjacency.

    ``per_user[u]`` holds the positions of user u's interactions in the log,
    in log order; flattened, the lists partition ``range(len(ds))``. Equality
    compares dense content (ids, ratings, timestamps, counts) and ignores the
    external-id maps, so a serialize/parse round trip compares equal.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    num_users: int
    num_items: int
    user_index: dict
    item_index: dict
    per_user: tuple

    @classmethod
    def from_dense(cls, users, items, ratings, timestamps=None,
                   num_users=None, num_items=None,
                   user_index=None, item_index=None):
        """Build from parallel arrays that already use dense integer ids.

        Duplicate (user, item) pairs are resolved by keeping the last
        occurrence; log order of the kept rows is preserved.
        """
        users = np.array(users, dtype=np.int64)
        items = np.array(items, dtype=np.int64)
        ratings = np.array(ratings, dtype=np.float64)
        if timestamps is None:
            timestamps = np.zeros(len(users), dtype=np.int64)
        timestamps = np.array(timestamps, dtype=np.int64)
        n = len(users)
        if not (len(items) == len(ratings) == len(timestamps) == n):
            raise DatasetError("parallel arrays differ in length")
        if n == 0:
            raise DatasetError("empty dataset")
        if users.min() < 0 or items.min() < 0:
            raise DatasetError("negative ids")
        if ratings.min() < RATING_MIN or ratings.max() > RATING_MAX:
            raise DatasetError(
                f"ratings outside [{RATING_MIN}, {RATING_MAX}]")

        if num_users is None:
            num_users = int(users.max()) + 1
        if num_items is None:
            num_items = int(items.max()) + 1
        if users.max() >= num_users or items.max() >= num_items:
            raise DatasetError("id exceeds declared count")

        # Keep-last dedupe of (user, item), preserving order of kept rows.
        key = users * np.int64(num_items) + items
        _, first_of_reversed = np.unique(key[::-1], return_index=True)
        keep = np.sort(n - 1 - first_of_reversed)
        if len(keep) != n:
            users, items = users[keep], items[keep]
            ratings, timestamps = ratings[keep], timestamps[keep]
            n = len(keep)

        order = np.argsort(users, kind="stable")
        counts = np.bincount(users, minlength=num_users)
        per_user = tuple(np.split(order.astype(np.int64), np.cumsum(counts)[:-1]))

        if user_index is None:
            user_index = {i: i for i in range(num_users)}
        if item_index is None:
            item_index = {i: i for i in range(num_items)}

        for arr in (users, items, ratings, timestamps, *per_user):
            arr.flags.writeable = False
        return cls(users, items, ratings, timestamps, int(num_users),
                   int(num_items), dict(user_index), dict(item_index), per_user)

    @classmethod
    def from_records(cls, records):
        """Build from (external_user, external_item, rating, timestamp) rows.

        External ids may be arbitrary hashables; dense ids are assigned in
        order of first appearance.
        """
        user_index, item_index = {}, {}
        users, items, ratings, timestamps = [], [], [], []
        for ext_u, ext_v, rating, ts in records:
            if ext_u not in user_index:
                user_index[ext_u] = len(user_index)
            if ext_v not in item_index:
                item_index[ext_v] = len(item_index)
            users.append(user_index[ext_u])
            items.append(item_index[ext_v])
            ratings.append(float(rating))
            timestamps.append(int(ts))
        if not users:
            raise DatasetError("empty dataset")
        return cls.from_dense(users, items, ratings, timestamps,
                              num_users=len(user_index),
                              num_items=len(item_index),
                              user_index=user_index, item_index=item_index)

    def __len__(self):
        return len(self.users)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.num_users == other.num_users
                and self.num_items == other.num_items
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings)
                and np.array_equal(self.timestamps, other.timestamps))

    @property
    def density(self):
        return len(self) / (self.num_users * self.num_items)

    def interaction(self, pos) -> Interaction:
        return Interaction(int(self.users[pos]), int(self.items[pos]),
                           float(self.ratings[pos]), int(self.timestamps[pos]))

    def items_of(self, u) -> np.ndarray:
        """Item ids user u interacted with, in log order."""
        return self.items[self.per_user[u]]

    def drop_positions(self, positions) -> "Dataset":
        """Copy without the given log positions, keeping the id space intact.

        Ids are not re-densified: retraining on the result uses the same
        user/item index space as the original, even if an item loses its
        last interaction.
        """
        mask = np.ones(len(self), dtype=bool)
        mask[np.asarray(positions, dtype=np.int64)] = False
        if not mask.any():
            raise DatasetError("all interactions dropped")
        return Dataset.from_dense(
            self.users[mask], self.items[mask], self.ratings[mask],
            self.timestamps[mask], num_users=self.num_users,
            num_items=self.num_items, user_index=self.user_index,
            item_index=self.item_index)

    def to_csv(self, path):
        """Write the canonical CSV form (dense ids, header user,item,rating,timestamp)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CANONICAL_HEADER)
            for u, v, r, t in zip(self.users, self.items, self.ratings,
                                  self.timestamps):
                writer.writerow([int(u), int(v), repr(float(r)), int(t)])


def read_csv(path) -> Dataset:
    """Read the canonical CSV form. Ids are taken verbatim as dense ids."""
    users, items, ratings, timestamps = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file")
        if tuple(header) != CANONICAL_HEADER:
            raise ParseError(f"expected header {','.join(CANONICAL_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line_no)
            try:
                users.append(int(row[0]))
                items.append(int(row[1]))
                timestamps.append(int(row[3]))
            except ValueError:
                raise ParseError("non-integer id or timestamp", line_no) from None
            try:
                ratings.append(float(row[2]))
            except ValueError:
                raise ParseError("non-numeric rating", line_no) from None
            if not (RATING_MIN <= ratings[-1] <= RATING_MAX):
                raise ParseError(
                    f"rating {ratings[-1]} outside [{RATING_MIN}, {RATING_MAX}]",
                    line_no)
    if not users:
        raise ParseError("no records")
    return Dataset.from_dense(users, items, ratings, timestamps)


def parse_movielens(path) -> Dataset:
    """Parse a MovieLens-style log: one `user<TAB>item<TAB>rating<TAB>timestamp`
    record of ASCII decimal integers per non-empty line.
    """
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(
                    f"expected 4 tab-separated fields, got {len(fields)}",
                    line_no)
            try:
                ext_u, ext_v = int(fields[0]), int(fields[1])
                rating, ts = int(fields[2]), int(fields[3])
            except ValueError:
                raise ParseError("non-integer field", line_no) from None
            if not (RATING_MIN <= rating <= RATING_MAX):
                raise ParseError(
                    f"rating {rating} outside [{RATING_MIN}, {RATING_MAX}]",
                    line_no)
            records.append((ext_u, ext_v, float(rating), ts))
    if not records:
        raise ParseError("empty file")
    return Dataset.from_records(records)


def filter_min_actions(ds: Dataset, min_actions: int) -> Dataset:
    """Drop users with fewer than ``min_actions`` interactions, then items
    left with none; ids are re-densified in order of first appearance.
    """
    if min_actions < 0:
        raise DatasetError("min_actions must be >= 0")
    counts = np.array([len(p) for p in ds.per_user])
    keep_user = counts >= min_actions
    row_mask = keep_user[ds.users]
    if not row_mask.any():
        raise DatasetError("dataset exhausted by filter")
    users, items = ds.users[row_mask], ds.items[row_mask]

    # Order-preserving compaction: surviving ids keep their relative order,
    # so a filter that drops nothing is the identity.
    kept_users = np.unique(users)
    kept_items = np.unique(items)
    user_map = np.full(ds.num_users, -1, dtype=np.int64)
    user_map[kept_users] = np.arange(len(kept_users))
    item_map = np.full(ds.num_items, -1, dtype=np.int64)
    item_map[kept_items] = np.arange(len(kept_items))

    user_index = {ext: int(user_map[dense])
                  for ext, dense in ds.user_index.items()
                  if user_map[dense] >= 0}
    item_index = {ext: int(item_map[dense])
                  for ext, dense in ds.item_index.items()
                  if item_map[dense] >= 0}
    return Dataset.from_dense(
        user_map[users], item_map[items], ds.ratings[row_mask],
        ds.timestamps[row_mask], num_users=len(kept_users),
        num_items=len(kept_items), user_index=user_index,
        item_index=item_index)


@dataclass(frozen=True)
class SynthConfig:
    """Shape of a synthetic low-rank rating log."""

    num_users: int
    num_items: int
    density: float
    num_latent_causes: int = 4
    noise_std: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.num_items < 1:
            raise DatasetError("num_users and num_items must be >= 1")
        if not (0.0 < self.density <= 1.0):
            raise DatasetError("density must be in (0, 1]")
        if self.num_latent_causes < 1:
            raise DatasetError("num_latent_causes must be >= 1")
        if self.noise_std < 0:
            raise DatasetError("noise_std must be >= 0")


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Deterministic synthetic rating log from a low-rank latent model.

    Each user and item draws ``num_latent_causes`` nonnegative factors whose
    inner product lands in [1, 5] by construction; Gaussian noise is added
    and clipped back to the rating range. Observed cells are an exact-count
    uniform sample of the user-item grid, so the achieved density matches
    the target up to rounding.
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.num_latent_causes
    lo, hi = np.sqrt(1.0 / k), np.sqrt(RATING_MAX / k)
    user_f = rng.uniform(lo, hi, size=(cfg.num_users, k))
    item_f = rng.uniform(lo, hi, size=(cfg.num_items, k))

    total_cells = cfg.num_users * cfg.num_items
    num_obs = int(round(cfg.density * total_cells))
    if num_obs == 0:
        raise DatasetError("configuration yields zero interactions")
    cells = np.sort(rng.choice(total_cells, size=num_obs, replace=False))
    users = cells // cfg.num_items
    items = cells % cfg.num_items

    scores = np.einsum("ik,ik->i", user_f[users], item_f[items])
    if cfg.noise_std > 0:
        scores = scores + rng.normal(0.0, cfg.noise_std, size=num_obs)
        scores = np.clip(scores, RATING_MIN, RATING_MAX)
    return Dataset.from_dense(users, items, scores,
                              num_users=cfg.num_users,
                              num_items=cfg.num_items)
