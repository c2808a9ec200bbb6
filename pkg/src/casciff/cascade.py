"""Core domain types: users, activations, cascades and observation settings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Activation:
    user: int
    parent: int | None
    time: float


@dataclass(frozen=True)
class Cascade:
    """One diffusion event.

    ``activations`` are sorted by time with ties in file order; the first is
    the root at time 0.  ``horizon_size`` is the number of activations at the
    prediction horizon.
    """

    cascade_id: str
    root: int
    publish_time: float
    activations: tuple[Activation, ...]
    horizon_size: int

    def __post_init__(self):
        if not self.activations:
            raise DataError(f"cascade {self.cascade_id}: no activations")
        first = self.activations[0]
        if first.user != self.root or first.parent is not None or first.time != 0:
            raise DataError(f"cascade {self.cascade_id}: first activation must be the root at time 0")
        if self.horizon_size < 1:
            raise DataError(f"cascade {self.cascade_id}: horizon_size must be positive")

    def __len__(self) -> int:
        return len(self.activations)

    def count_until(self, t: float) -> int:
        """Number of activations with time <= t."""
        return sum(1 for a in self.activations if a.time <= t)

    def clip(self, t: float) -> "Cascade":
        """Activations up to and including time ``t``; horizon_size becomes that count."""
        kept = tuple(a for a in self.activations if a.time <= t)
        return Cascade(self.cascade_id, self.root, self.publish_time, kept, len(kept))


@dataclass(frozen=True)
class ObservationConfig:
    window: float
    horizon: float
    decay_interval: float
    min_nodes: int = 10
    max_nodes: int = 100
    # False: the ">min_nodes" filter counts activations inside the window.
    count_at_horizon: bool = False

    def __post_init__(self):
        if not 0 < self.window < self.horizon:
            raise ConfigError(f"need 0 < window < horizon, got window={self.window}, horizon={self.horizon}")
        if self.min_nodes < 1:
            raise ConfigError("min_nodes must be >= 1")
        if self.max_nodes < self.min_nodes:
            raise ConfigError("max_nodes must be >= min_nodes")
        if self.decay_interval <= 0:
            raise ConfigError("decay_interval must be positive")

    @property
    def num_decay_intervals(self) -> int:
        return math.ceil(self.window / self.decay_interval)


# window, horizon, decay bucket (seconds) for the public corpora settings
PRESETS = {
    "weibo-0.5h": (1800.0, 86400.0, 300.0),
    "weibo-1h": (3600.0, 86400.0, 600.0),
    "twitter-1d": (86400.0, 32 * 86400.0, 3 * 3600.0),
    "twitter-2d": (2 * 86400.0, 32 * 86400.0, 3 * 3600.0),
    "aps-3y": (3 * 365 * 86400.0, 20 * 365 * 86400.0, 91 * 86400.0),
    "aps-5y": (5 * 365 * 86400.0, 20 * 365 * 86400.0, 91 * 86400.0),
}


def preset(name: str, **overrides) -> ObservationConfig:
    w, h, d = PRESETS[name]
    return ObservationConfig(window=w, horizon=h, decay_interval=d, **overrides)


def compute_target(cascade: Cascade, cfg: ObservationConfig) -> int:
    """Growth between the window and the horizon (before any max_nodes cap)."""
    if cfg.window >= cfg.horizon:
        raise ConfigError("window exceeds horizon")
    delta = cascade.horizon_size - cascade.count_until(cfg.window)
    if delta < 0:
        raise DataError(f"cascade {cascade.cascade_id}: horizon count below window count")
    return delta


@dataclass(frozen=True)
class LabeledCascade:
    observed: Cascade
    target: int
    tprime: tuple[float, ...]
    horizon_size: int = 0

    @property
    def cascade_id(self) -> str:
        return self.observed.cascade_id

    @property
    def users(self) -> list[int]:
        return [a.user for a in self.observed.activations]

    @property
    def times(self) -> list[float]:
        return [a.time for a in self.observed.activations]


@dataclass
class UserIndex:
    """Bijective map between raw external user ids and dense integer ids."""

    raw_ids: list[str] = field(default_factory=list)
    _lookup: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.raw_ids and not self._lookup:
            self._lookup = {r: i for i, r in enumerate(self.raw_ids)}
            if len(self._lookup) != len(self.raw_ids):
                raise DataError("duplicate raw ids in user index")

    def __len__(self) -> int:
        return len(self.raw_ids)

    def intern(self, raw: str) -> int:
        idx = self._lookup.get(raw)
        if idx is None:
            idx = len(self.raw_ids)
            self._lookup[raw] = idx
            self.raw_ids.append(raw)
        return idx

    def get(self, raw: str) -> int:
        return self._lookup[raw]

    def raw(self, idx: int) -> str:
        return self.raw_ids[idx]

    def dumps(self) -> str:
        return "".join(f"{i}\t{r}\n" for i, r in enumerate(self.raw_ids))

    @classmethod
    def loads(cls, text: str) -> "UserIndex":
        raws = []
        for i, line in enumerate(text.splitlines()):
            if not line:
                continue
            idx, raw = line.split("\t", 1)
            if int(idx) != i:
                raise DataError(f"user index not dense at row {i}")
            raws.append(raw)
        return cls(raws)

    @classmethod
    def identity(cls, n: int) -> "UserIndex":
        return cls([str(i) for i in range(n)])


def reindex(cascades: Iterable[Cascade], mapping: dict[int, int]) -> list[Cascade]:
    """Apply a user-id permutation to every activation."""
    out = []
    for c in cascades:
        acts = tuple(
            Activation(mapping[a.user], None if a.parent is None else mapping[a.parent], a.time)
            for a in c.activations
        )
        out.append(Cascade(c.cascade_id, mapping[c.root], c.publish_time, acts, c.horizon_size))
    return out
