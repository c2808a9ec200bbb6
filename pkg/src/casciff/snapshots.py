"""Time-weighted snapshot matrices of an observed cascade.

Rows and columns follow activation order.  Entry ``[p, c]`` is non-zero when
``p`` activated ``c``; the diagonal holds each node's own normalized time.
Because parents always precede children, snapshot ``j`` (the first ``j + 1``
activations) is exactly the leading ``(j+1) x (j+1)`` block of the final
matrix, so only the final block is stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import LabeledCascade, ObservationConfig


def normalize_time(t: float, t_obs: float) -> float:
    """``1 - t / t_obs``: 1 for the earliest participant, 0 at the window end."""
    if t_obs <= 0:
        raise ValueError(f"observation time must be positive, got {t_obs}")
    if t < 0 or t > t_obs:
        raise ValueError(f"time {t} outside [0, {t_obs}]")
    return 1.0 - t / t_obs


@dataclass(frozen=True)
class Snapshot:
    step_index: int
    nodes: tuple[int, ...]
    alpha: np.ndarray  # live block, len(nodes) x len(nodes)

    def dense(self, max_nodes: int) -> np.ndarray:
        out = np.zeros((max_nodes, max_nodes))
        n = len(self.nodes)
        out[:n, :n] = self.alpha
        return out


@dataclass(frozen=True)
class SnapshotSequence:
    cascade_id: str
    nodes: tuple[int, ...]
    alpha: np.ndarray  # final live block, m x m
    window: float

    def __len__(self) -> int:
        return max(len(self.nodes) - 1, 0)

    def prefix(self, size: int) -> np.ndarray:
        """Matrix over the first ``size`` activations."""
        return self.alpha[:size, :size]

    def snapshot(self, j: int) -> Snapshot:
        """Snapshot ``j`` (1-based): the first ``j + 1`` activations."""
        if not 1 <= j <= len(self):
            raise IndexError(f"snapshot index {j} outside 1..{len(self)}")
        return Snapshot(j, self.nodes[: j + 1], self.alpha[: j + 1, : j + 1].copy())

    def __iter__(self):
        for j in range(1, len(self) + 1):
            yield self.snapshot(j)

    @property
    def final(self) -> Snapshot:
        return Snapshot(len(self), self.nodes, self.alpha.copy())


def build_snapshots(
    observed: LabeledCascade,
    cfg: ObservationConfig,
    edge_weight: str = "child",
    binary: bool = False,
) -> SnapshotSequence:
    """Build the weighted adjacency of the observed prefix.

    ``edge_weight="child"`` puts the child's normalized time on the
    parent->child entry; ``"parent"`` uses the parent's.  ``binary`` replaces
    every weight with 1 (no time information).
    """
    if edge_weight not in ("child", "parent"):
        raise ValueError(f"edge_weight must be 'child' or 'parent', got {edge_weight!r}")
    acts = observed.observed.activations[: cfg.max_nodes]
    m = len(acts)
    tp = np.array([normalize_time(a.time, cfg.window) for a in acts])
    pos = {a.user: i for i, a in enumerate(acts)}
    alpha = np.zeros((m, m))
    alpha[np.arange(m), np.arange(m)] = 1.0 if binary else tp
    for i, a in enumerate(acts):
        if a.parent is None:
            continue
        p = pos[a.parent]
        if binary:
            alpha[p, i] = 1.0
        else:
            alpha[p, i] = tp[i] if edge_weight == "child" else tp[p]
    return SnapshotSequence(observed.cascade_id, tuple(a.user for a in acts), alpha, cfg.window)


# cache ---------------------------------------------------------------------


def write_triplets(path, seq: SnapshotSequence) -> None:
    rows, cols = np.nonzero(seq.alpha)
    with open(path, "w") as fh:
        fh.write(f"# cascade_id={seq.cascade_id} W={seq.window!r} nodes={len(seq.nodes)}\n")
        fh.write("# users " + " ".join(map(str, seq.nodes)) + "\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r} {c} {float(seq.alpha[r, c])!r}\n")


def read_triplets(path) -> SnapshotSequence:
    lines = Path(path).read_text().splitlines()
    head = dict(kv.split("=", 1) for kv in lines[0][2:].split())
    nodes = tuple(int(u) for u in lines[1].split()[2:])
    m = int(head["nodes"])
    alpha = np.zeros((m, m))
    for line in lines[2:]:
        r, c, w = line.split()
        alpha[int(r), int(c)] = float(w)
    return SnapshotSequence(head["cascade_id"], nodes, alpha, float(head["W"]))
