from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


@dataclass(frozen=True)
class Assignment:
    """Offloading decision: ``server_of[i]`` is the server of user i, or None if local.

    A user maps to at most one server by construction, so exclusivity and
    binarity of the implied x matrix always hold.
    """

    server_of: tuple[Optional[int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "server_of", tuple(None if s is None else int(s) for s in self.server_of)
        )
        for s in self.server_of:
            if s is not None and s < 0:
                raise ValueError(f"negative server index {s}")

    @classmethod
    def local(cls, n_users: int) -> "Assignment":
        return cls((None,) * n_users)

    @classmethod
    def from_array(cls, idx: Iterable[int]) -> "Assignment":
        """Build from an integer vector where -1 means local."""
        return cls(tuple(None if int(s) < 0 else int(s) for s in idx))

    @classmethod
    def from_matrix(cls, x) -> "Assignment":
        x = np.asarray(x)
        if not np.isin(x, (0, 1)).all():
            raise ValueError("x must be binary")
        if (x.sum(axis=1) > 1).any():
            raise ValueError("a user is assigned to more than one server")
        return cls(tuple(int(np.argmax(row)) if row.any() else None for row in x))

    @property
    def n_users(self) -> int:
        return len(self.server_of)

    def to_array(self) -> np.ndarray:
        return np.array([-1 if s is None else s for s in self.server_of], dtype=np.int64)

    def to_matrix(self, n_servers: int) -> np.ndarray:
        x = np.zeros((self.n_users, n_servers), dtype=np.int8)
        for i, s in enumerate(self.server_of):
            if s is not None:
                x[i, s] = 1
        return x

    def offloaded(self) -> frozenset[int]:
        return frozenset(i for i, s in enumerate(self.server_of) if s is not None)

    @property
    def offload_count(self) -> int:
        return sum(s is not None for s in self.server_of)

    def with_user(self, i: int, j: Optional[int]) -> "Assignment":
        s = list(self.server_of)
        s[i] = j
        return Assignment(tuple(s))

    def check(self, n_users: int, n_servers: int) -> None:
        if self.n_users != n_users:
            raise ValueError(f"assignment has {self.n_users} users, instance has {n_users}")
        for i, s in enumerate(self.server_of):
            if s is not None and not 0 <= s < n_servers:
                raise ValueError(f"user {i} assigned to server {s}, valid range is [0, {n_servers})")
