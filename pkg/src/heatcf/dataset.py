"""Implicit-feedback interaction sets: parsing, epoch enumeration, histories.

Interactions are stored as a compressed per-user adjacency (CSR-style):
``items[offsets[u]:offsets[u+1]]`` is user u's positive item list, sorted
ascending and deduplicated.  The structure is immutable after construction
and safe for unrestricted concurrent reads.

Two text formats are accepted, UTF-8 with LF or CRLF line endings:

    adjacency: one user per line, "user item item item ..."
    pairs:     one interaction per line, "user item"
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    """Malformed interaction file; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


@dataclass
class InteractionSet:
    """Compressed per-user adjacency of positive items."""

    num_users: int
    num_items: int
    offsets: np.ndarray  # int64, length num_users + 1, nondecreasing
    items: np.ndarray    # int32, sorted ascending within each user slice

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        self.items = np.ascontiguousarray(self.items, dtype=np.int32)
        if len(self.offsets) != self.num_users + 1:
            raise ValueError("offsets length must be num_users + 1")
        if self.offsets[-1] != len(self.items):
            raise ValueError("offsets[-1] must equal len(items)")

    def slice(self, user: int) -> np.ndarray:
        """User's item slice (read-only view)."""
        return self.items[self.offsets[user]:self.offsets[user + 1]]

    @property
    def num_pairs(self) -> int:
        return int(len(self.items))


def from_user_lists(lists: dict[int, list[int] | np.ndarray],
                    num_users: int | None = None,
                    num_items: int | None = None) -> InteractionSet:
    """Build an InteractionSet from {user: item ids}; dedupes and sorts slices."""
    max_user = max(lists.keys(), default=-1)
    n_users = num_users if num_users is not None else max_user + 1
    if max_user >= n_users:
        raise ValueError(f"user id {max_user} out of range for num_users={n_users}")
    offsets = np.zeros(n_users + 1, dtype=np.int64)
    per_user = []
    max_item = -1
    for u in range(n_users):
        ids = np.unique(np.asarray(lists.get(u, []), dtype=np.int64))
        if len(ids) and ids[0] < 0:
            raise ValueError(f"negative item id for user {u}")
        if len(ids):
            max_item = max(max_item, int(ids[-1]))
        per_user.append(ids.astype(np.int32))
        offsets[u + 1] = offsets[u] + len(ids)
    n_items = num_items if num_items is not None else max_item + 1
    if max_item >= n_items:
        raise ValueError(f"item id {max_item} out of range for num_items={n_items}")
    items = np.concatenate(per_user) if per_user else np.empty(0, dtype=np.int32)
    return InteractionSet(n_users, n_items, offsets, items.astype(np.int32))


def _parse_int(token: str, lineno: int, path: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: non-integer token {token!r}", lineno) from None
    if value < 0:
        raise ParseError(f"{path}:{lineno}: negative id {value}", lineno)
    return value


def parse_interactions(path: str, format: str = "adjacency") -> InteractionSet:
    """Parse an interaction file into an InteractionSet.

    Ids are the integers found in the file; num_users and num_items are
    1 + the maximum id seen.  Duplicate (user, item) entries are dropped.
    Callers aligning train/test universes should rebuild with the joint
    maxima via `with_universe`.
    """
    if format not in ("adjacency", "pairs"):
        raise ValueError(f"unknown format: {format!r}")
    lists: dict[int, list[int]] = {}
    saw_line = False
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            saw_line = True
            tokens = line.split()
            if format == "pairs" and len(tokens) != 2:
                raise ParseError(
                    f"{path}:{lineno}: expected 'user item', got {len(tokens)} tokens",
                    lineno,
                )
            user = _parse_int(tokens[0], lineno, path)
            bucket = lists.setdefault(user, [])
            for tok in tokens[1:]:
                bucket.append(_parse_int(tok, lineno, path))
    if not saw_line:
        raise ParseError(f"{path}: empty interaction file", 1)
    return from_user_lists(lists)


def with_universe(s: InteractionSet, num_users: int, num_items: int) -> InteractionSet:
    """Re-frame a set into a (possibly larger) user/item universe."""
    if num_users < s.num_users or num_items < s.num_items:
        raise ValueError("universe must not shrink")
    offsets = np.zeros(num_users + 1, dtype=np.int64)
    offsets[: s.num_users + 1] = s.offsets
    offsets[s.num_users + 1:] = s.offsets[-1]
    return InteractionSet(num_users, num_items, offsets, s.items)


def serialize_interactions(s: InteractionSet, path: str, format: str = "adjacency") -> None:
    """Write a set in the given text format; inverse of parse_interactions."""
    with open(path, "w", encoding="utf-8") as f:
        for u in range(s.num_users):
            ids = s.slice(u)
            if format == "adjacency":
                f.write(" ".join([str(u)] + [str(i) for i in ids]) + "\n")
            else:
                for i in ids:
                    f.write(f"{u} {i}\n")


def epoch_pairs(train: InteractionSet, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One epoch's (user, positive item) pairs in seed-determined random order.

    Returns parallel int32 arrays (users, items): a permutation of every
    pair in the training set.  Users with empty slices contribute nothing.
    """
    if train.num_pairs == 0:
        raise ValueError("training set has no pairs")
    counts = np.diff(train.offsets)
    users = np.repeat(np.arange(train.num_users, dtype=np.int32), counts)
    items = train.items
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(train.num_pairs)
    return users[perm], items[perm].astype(np.int32)


def history_of(train: InteractionSet, user: int, max_history: int) -> np.ndarray:
    """First min(|slice|, max_history) train items of a user, ascending-id order."""
    if user < 0 or user >= train.num_users:
        raise ValueError(f"user {user} out of range [0, {train.num_users})")
    return train.slice(user)[:max_history]
