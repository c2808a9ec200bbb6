"""Cascade log parsing, filtering, splitting and the global activation graph.

Wire format, one cascade per line (UTF-8, LF)::

    <cascade_id> TAB <root_user> TAB <publish_time> TAB <num_activations> TAB <paths>

``paths`` is a space-separated list of ``u0/u1/.../uk:t`` entries.  Each entry
activates ``uk`` at relative time ``t`` with parent ``u(k-1)``; ``u0:0`` is the
root itself.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .cascade import (
    Activation,
    Cascade,
    ConfigError,
    DataError,
    LabeledCascade,
    ObservationConfig,
    UserIndex,
    compute_target,
)
from .numeric.init import make_rng
from .snapshots import normalize_time

log = logging.getLogger(__name__)

PRNG_NAME = "numpy.random.Philox-4x64"


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class ParseIssue:
    lineno: int
    cascade_id: str
    message: str


def _number(text: str, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(lineno, f"bad {what} {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(lineno, f"non-finite {what} {text!r}")
    return value


def parse_line(
    line: str,
    lineno: int,
    users: UserIndex,
    time_scale: float = 1.0,
    issues: list[ParseIssue] | None = None,
) -> Cascade:
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5:
        raise ParseError(lineno, f"expected 5 tab-separated fields, got {len(fields)}")
    cid, root_raw, publish, declared, paths = fields
    if not cid or not root_raw:
        raise ParseError(lineno, "empty cascade id or root user")
    publish_time = _number(publish, lineno, "publish time")
    try:
        n_declared = int(declared)
    except ValueError:
        raise ParseError(lineno, f"bad activation count {declared!r}") from None

    def note(msg: str) -> None:
        log.warning("line %d (%s): %s", lineno, cid, msg)
        if issues is not None:
            issues.append(ParseIssue(lineno, cid, msg))

    # (chain of raw ids, time, file position)
    entries: list[tuple[list[str], float]] = []
    for token in paths.split():
        chain_text, sep, t_text = token.rpartition(":")
        if not sep or not chain_text:
            raise ParseError(lineno, f"malformed path entry {token!r}")
        chain = chain_text.split("/")
        if any(not u for u in chain):
            raise ParseError(lineno, f"empty user id in path entry {token!r}")
        if chain[0] != root_raw:
            raise ParseError(lineno, f"path entry {token!r} does not start at root {root_raw}")
        t = _number(t_text, lineno, "activation time") * time_scale
        if t < 0:
            raise ParseError(lineno, f"activation time {t_text} precedes the root")
        if len(chain) == 1 and t != 0:
            raise ParseError(lineno, f"root entry has non-zero time {t_text}")
        entries.append((chain, t))

    if not any(len(ch) == 1 for ch, _ in entries):
        note("root entry missing; inserted at time 0")
        entries.insert(0, ([root_raw], 0.0))

    # Stable: equal times keep file order; the root goes first among time-0 entries.
    order = sorted(range(len(entries)), key=lambda i: (entries[i][1], len(entries[i][0]) != 1, i))
    root = users.intern(root_raw)
    acts: list[Activation] = []
    active: set[str] = set()
    for i in order:
        chain, t = entries[i]
        user_raw = chain[-1]
        if user_raw in active:
            continue
        if len(chain) == 1:
            acts.append(Activation(root, None, 0.0))
            active.add(user_raw)
            continue
        parent_raw = None
        for anc in reversed(chain[:-1]):
            if anc in active:
                parent_raw = anc
                break
        if parent_raw is None:
            parent_raw = root_raw
        if parent_raw != chain[-2]:
            note(f"parent {chain[-2]} of {user_raw} not active yet; attached to {parent_raw}")
        acts.append(Activation(users.intern(user_raw), users.get(parent_raw), t))
        active.add(user_raw)

    if n_declared != len(acts):
        note(f"declared {n_declared} activations, parsed {len(acts)}")
    return Cascade(cid, root, publish_time, tuple(acts), len(acts))


def parse_cascade_file(
    source: Iterable[str] | TextIO,
    users: UserIndex | None = None,
    time_scale: float = 1.0,
    issues: list[ParseIssue] | None = None,
) -> list[Cascade]:
    """Parse every non-blank line; raw user ids are interned into ``users``."""
    if users is None:
        users = UserIndex()
    out = []
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        out.append(parse_line(line, lineno, users, time_scale, issues))
    return out


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def format_cascade(c: Cascade, users: UserIndex) -> str:
    """Canonical wire-format line (with trailing LF) for a cascade."""
    chains: dict[int, list[str]] = {}
    parts = []
    for a in c.activations:
        if a.parent is None:
            chains[a.user] = [users.raw(a.user)]
        else:
            chains[a.user] = chains[a.parent] + [users.raw(a.user)]
        parts.append("/".join(chains[a.user]) + ":" + _fmt(a.time))
    return "\t".join([c.cascade_id, users.raw(c.root), _fmt(c.publish_time), str(len(c)), " ".join(parts)]) + "\n"


def write_cascade_file(fh: TextIO, cascades: Iterable[Cascade], users: UserIndex) -> None:
    for c in cascades:
        fh.write(format_cascade(c, users))


# filtering -----------------------------------------------------------------


def label_cascade(c: Cascade, cfg: ObservationConfig) -> LabeledCascade:
    in_window = [a for a in c.activations if a.time <= cfg.window]
    observed = in_window[: cfg.max_nodes]
    obs = Cascade(c.cascade_id, c.root, c.publish_time, tuple(observed), len(observed))
    tprime = tuple(normalize_time(a.time, cfg.window) for a in observed)
    return LabeledCascade(obs, compute_target(c, cfg), tprime, c.horizon_size)


def filter_and_truncate(cascades: Iterable[Cascade], cfg: ObservationConfig) -> list[LabeledCascade]:
    """Keep cascades with more than ``min_nodes`` activations and label them.

    The horizon count is the number of activations up to ``cfg.horizon``;
    the target is computed before the observed prefix is capped at
    ``max_nodes``.
    """
    out = []
    for c in cascades:
        at_horizon = c.clip(cfg.horizon) if c.horizon_size == len(c) else c
        counted = at_horizon.horizon_size if cfg.count_at_horizon else at_horizon.count_until(cfg.window)
        if counted <= cfg.min_nodes:
            continue
        try:
            out.append(label_cascade(at_horizon, cfg))
        except DataError as exc:
            log.warning("dropping cascade: %s", exc)
    return out


# splitting -----------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list[LabeledCascade]
    valid: list[LabeledCascade]
    test: list[LabeledCascade]
    split_seed: int

    def manifest(self) -> str:
        lines = [f"# prng: {PRNG_NAME} (numpy {np.__version__})", f"# seed: {self.split_seed}"]
        for name, part in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            lines.extend(f"{c.cascade_id}\t{name}" for c in part)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str, cascades: Iterable[LabeledCascade]) -> "DatasetSplit":
        by_id = {c.cascade_id: c for c in cascades}
        parts: dict[str, list[LabeledCascade]] = {"train": [], "valid": [], "test": []}
        seed = 0
        for line in text.splitlines():
            if line.startswith("# seed:"):
                seed = int(line.split(":", 1)[1])
            if not line or line.startswith("#"):
                continue
            cid, label = line.split("\t")
            parts[label].append(by_id[cid])
        return cls(parts["train"], parts["valid"], parts["test"], seed)


def split_dataset(cascades: list[LabeledCascade], seed: int) -> DatasetSplit:
    """Shuffle with a Philox stream and cut 70/15/15 (test takes the remainder)."""
    n = len(cascades)
    if n < 3:
        raise ConfigError(f"need at least 3 cascades to split, got {n}")
    perm = make_rng(seed).permutation(n)
    n_train = n * 70 // 100
    n_valid = n * 15 // 100
    shuffled = [cascades[i] for i in perm]
    return DatasetSplit(
        shuffled[:n_train], shuffled[n_train:n_train + n_valid], shuffled[n_train + n_valid:], seed
    )


# global graph ----------------------------------------------------------------


@dataclass
class GlobalGraph:
    """Directed who-activated-whom multigraph.

    ``out_degree``/``in_degree`` count activation events (multiplicities);
    ``indptr``/``indices`` index the distinct out-neighbours of each node.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    mult: np.ndarray
    out_degree: np.ndarray = field(init=False)
    in_degree: np.ndarray = field(init=False)
    indptr: np.ndarray = field(init=False)
    indices: np.ndarray = field(init=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.mult = np.asarray(self.mult, dtype=np.int64)
        if (self.mult < 1).any():
            raise DataError("edge multiplicities must be >= 1")
        if (self.src == self.dst).any():
            raise DataError("self-loop edge in global graph")
        order = np.lexsort((self.dst, self.src))
        self.src, self.dst, self.mult = self.src[order], self.dst[order], self.mult[order]
        self.out_degree = np.bincount(self.src, weights=self.mult, minlength=self.num_nodes).astype(np.int64)
        self.in_degree = np.bincount(self.dst, weights=self.mult, minlength=self.num_nodes).astype(np.int64)
        counts = np.bincount(self.src, minlength=self.num_nodes)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.indices = self.dst

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def out_neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def multiplicity(self, u: int, v: int) -> int:
        nb = self.out_neighbors(u)
        pos = np.searchsorted(nb, v)
        if pos < len(nb) and nb[pos] == v:
            return int(self.mult[self.indptr[u] + pos])
        return 0

    def undirected(self) -> "GlobalGraph":
        """Symmetrised copy (for sensitivity studies of the traversal direction)."""
        pairs: dict[tuple[int, int], int] = {}
        for u, v, m in zip(self.src.tolist(), self.dst.tolist(), self.mult.tolist()):
            pairs[(u, v)] = pairs.get((u, v), 0) + m
            pairs[(v, u)] = pairs.get((v, u), 0) + m
        return _graph_from_pairs(pairs, self.num_nodes)


def _graph_from_pairs(pairs: dict[tuple[int, int], int], num_nodes: int) -> GlobalGraph:
    if pairs:
        src, dst = zip(*pairs.keys())
        mult = list(pairs.values())
    else:
        src, dst, mult = [], [], []
    return GlobalGraph(num_nodes, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(mult, dtype=np.int64))


def build_global_graph(train: Iterable[LabeledCascade | Cascade], num_nodes: int | None = None) -> GlobalGraph:
    """One edge per parent->child activation in the (observed) training prefixes."""
    pairs: dict[tuple[int, int], int] = {}
    top = -1
    for item in train:
        c = item.observed if isinstance(item, LabeledCascade) else item
        for a in c.activations:
            top = max(top, a.user)
            if a.parent is None or a.parent == a.user:
                continue
            key = (a.parent, a.user)
            pairs[key] = pairs.get(key, 0) + 1
    n = top + 1 if num_nodes is None else num_nodes
    if n <= top:
        raise DataError(f"num_nodes={n} but user id {top} present")
    return _graph_from_pairs(pairs, n)


# reporting -----------------------------------------------------------------


def dataset_statistics(all_cascades: list[Cascade], split: DatasetSplit, cfg: ObservationConfig) -> dict:
    users = set()
    edges = 0
    for c in all_cascades:
        for a in c.activations:
            users.add(a.user)
            edges += a.parent is not None
    return {
        "posts_all": len(all_cascades),
        "nodes_all": len(users),
        "edges_all": edges,
        "window_seconds": _fmt(cfg.window),
        "horizon_seconds": _fmt(cfg.horizon),
        "posts_qualifying": len(split.train) + len(split.valid) + len(split.test),
        "posts_train": len(split.train),
        "posts_valid": len(split.valid),
        "posts_test": len(split.test),
    }


def format_report(stats: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in stats.items())


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k.strip()] = v.strip()
    return out
