"""The cascade prediction network.

Pipeline per batch:

1. hop vectors -> weighted concat -> influence autoencoder -> g_u per user
2. per activation step, the snapshot of the first i+1 activations -> 2-layer GCN -> g_c
3. concat(g_u, g_c) -> fusion autoencoder -> Stru, with the normalized time appended
4. BiGRU over the per-step sequence, decay-weighted sum of states -> regression MLP
5. classifier MLP on g_u (ordinary vs opinion leader)
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .batching import Batch, decay_bucket, log_target
from .numeric import autograd as T
from .numeric.checkpoint import config_hash
from .numeric.init import glorot_uniform, make_rng
from .numeric.autograd import Parameter, Tensor

VARIANT_FLAGS = {
    "full": {},
    "Local": {"local_off": True},
    "Global": {"global_off": True},
    "Time": {"time_off": True},
    "Decay": {"decay_off": True},
    "Class": {"class_off": True},
}

LOSS_NAMES = ("reg", "cl", "ae1", "ae2", "rgl")


@dataclass(frozen=True)
class ModelConfig:
    hop_n: int = 2
    hop_s: int = 50
    vector_hop_weights: bool = False
    hop_lambda_init: float = 1.0
    ae1_dims: tuple[int, ...] = (128, 96, 64)   # fc1..fc3; last is the g_u size
    ae1_decoder_hidden: int = 96                # fc4
    max_nodes: int = 100
    gcn_hidden: int = 64
    gcn_out: int = 64
    fusion_dims: tuple[int, ...] = (96, 80, 64)
    fusion_decoder_hidden: int = 96
    gru_hidden: int = 64
    window: float = 1800.0
    decay_interval: float = 300.0
    reg_hidden: int = 64
    cls_hidden: int = 32
    l2: float = 1e-5
    loss_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)  # reg, cl, ae1, ae2, rgl
    edge_weight: str = "child"
    local_off: bool = False
    global_off: bool = False
    time_off: bool = False
    decay_off: bool = False
    class_off: bool = False

    def __post_init__(self):
        dims = [self.hop_n, self.hop_s, *self.ae1_dims, self.ae1_decoder_hidden, self.max_nodes,
                self.gcn_hidden, self.gcn_out, *self.fusion_dims, self.fusion_decoder_hidden,
                self.gru_hidden, self.reg_hidden, self.cls_hidden]
        if any(int(d) <= 0 for d in dims):
            raise ValueError("all layer sizes must be positive")
        if self.window <= 0 or self.decay_interval <= 0:
            raise ValueError("window and decay_interval must be positive")
        if len(self.loss_weights) != len(LOSS_NAMES):
            raise ValueError("loss_weights needs one entry per loss component")

    @property
    def influence_dim(self) -> int:
        return self.hop_n * self.hop_s

    @property
    def user_dim(self) -> int:
        return self.ae1_dims[-1]

    @property
    def step_dim(self) -> int:
        return self.fusion_dims[-1] + (0 if self.time_off else 1)

    @property
    def num_decay_intervals(self) -> int:
        return math.ceil(self.window / self.decay_interval)

    @property
    def uses_decay(self) -> bool:
        return not (self.decay_off or self.time_off)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def with_variant(self, variant: str) -> "ModelConfig":
        if variant not in VARIANT_FLAGS:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANT_FLAGS)}")
        return dataclasses.replace(self, **VARIANT_FLAGS[variant])

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class ForwardTrace:
    g_u: Tensor
    g_c: Tensor
    stru: Tensor
    hidden: Tensor
    decayed: Tensor
    prediction: Tensor
    logits: Tensor | None
    loss_ae1: Tensor
    loss_ae2: Tensor


@dataclass
class LossBreakdown:
    total: Tensor
    parts: dict[str, float] = field(default_factory=dict)
    tensors: dict[str, Tensor] = field(default_factory=dict)


def _mlp(x, layers, final_relu=True):
    for i, (w, b) in enumerate(layers):
        x = T.linear(x, w, b)
        if final_relu or i < len(layers) - 1:
            x = T.relu(x)
    return x


class CasCIFF:
    """Parameters plus forward computations; all arithmetic goes through ``numeric``."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Parameter] = {}
        rng = make_rng(seed)
        c = config

        def dense(name, fan_in, fan_out):
            self._add(glorot_uniform(rng, fan_in, fan_out, f"{name}.W"))
            self._add(Parameter(np.zeros(fan_out), f"{name}.b"))
            return (self.params[f"{name}.W"], self.params[f"{name}.b"])

        if not c.global_off:
            shape = (c.hop_n, c.hop_s) if c.vector_hop_weights else (c.hop_n,)
            self._add(Parameter(np.full(shape, c.hop_lambda_init), "hop_lambda"))
            dims = [c.influence_dim, *c.ae1_dims]
            self.ae1_enc = [dense(f"ae1.fc{i + 1}", dims[i], dims[i + 1]) for i in range(len(c.ae1_dims))]
            k = len(c.ae1_dims)
            self.ae1_dec = [
                dense(f"ae1.fc{k + 1}", c.user_dim, c.ae1_decoder_hidden),
                dense(f"ae1.fc{k + 2}", c.ae1_decoder_hidden, c.influence_dim),
            ]
            if not c.class_off:
                self.cls = [dense("cls.fc1", c.user_dim, c.cls_hidden), dense("cls.fc2", c.cls_hidden, 2)]
        if not c.local_off:
            self.gcn1 = dense("gcn.l1", c.max_nodes, c.gcn_hidden)
            self.gcn2 = dense("gcn.l2", c.gcn_hidden + c.max_nodes, c.gcn_out)
        fuse_in = c.user_dim + c.gcn_out
        dims = [fuse_in, *c.fusion_dims]
        self.fuse_enc = [dense(f"fuse.enc{i + 1}", dims[i], dims[i + 1]) for i in range(len(c.fusion_dims))]
        self.fuse_dec = [
            dense("fuse.dec1", c.fusion_dims[-1], c.fusion_decoder_hidden),
            dense("fuse.dec2", c.fusion_decoder_hidden, fuse_in),
        ]
        H = c.gru_hidden
        for d in ("gru_fwd", "gru_bwd"):
            self._add(glorot_uniform(rng, c.step_dim, 3 * H, f"{d}.Wx"))
            self._add(glorot_uniform(rng, H, 3 * H, f"{d}.Wh"))
            self._add(Parameter(np.zeros(3 * H), f"{d}.bx"))
            self._add(Parameter(np.zeros(3 * H), f"{d}.bh"))
        if c.uses_decay:
            self._add(Parameter(np.ones(c.num_decay_intervals), "decay_lambda"))
        self.reg = [dense("reg.fc1", 2 * H, c.reg_hidden), dense("reg.fc2", c.reg_hidden, 1)]

    def _add(self, p: Parameter) -> None:
        if p.name in self.params:
            raise ValueError(f"duplicate parameter {p.name}")
        self.params[p.name] = p

    # parameter management ----------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def weight_matrices(self) -> list[Parameter]:
        """Matrices entering the L2 term (biases and lambda weights excluded)."""
        return [p for n, p in self.params.items() if n.rsplit(".", 1)[-1].startswith("W")]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, p in self.params.items():
            if arrays[n].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {n}: {arrays[n].shape} vs {p.data.shape}")
            p.data = np.array(arrays[n], dtype=np.float64)

    def _gru(self, d: str):
        return tuple(self.params[f"{d}.{k}"] for k in ("Wx", "Wh", "bx", "bh"))

    # single-object operations --------------------------------------------

    def assemble(self, hop_vectors) -> Tensor:
        from .influence import assemble_input
        return assemble_input(hop_vectors, self.params["hop_lambda"])

    def encode_influence(self, hop_vectors) -> tuple[Tensor, Tensor]:
        """(g_u, reconstruction mse) from hop vectors of shape (..., n, s)."""
        hv = np.asarray(hop_vectors, dtype=np.float64)
        if hv.shape[-2:] != (self.config.hop_n, self.config.hop_s):
            raise T.ShapeError(f"hop vectors {hv.shape} vs config ({self.config.hop_n}, {self.config.hop_s})")
        x = self.assemble(hv)
        g = _mlp(x, self.ae1_enc)
        recon = _mlp(g, self.ae1_dec)
        return g, T.mse(x, recon)

    def encode_snapshot(self, alpha, n_live: int | None = None) -> Tensor:
        """Dense reference GCN on a max_nodes x max_nodes adjacency.

        ``n_live`` defaults to the number of non-zero rows.
        """
        a = np.asarray(alpha, dtype=np.float64)
        N = self.config.max_nodes
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise T.ShapeError(f"snapshot must be square, got {a.shape}")
        if a.shape != (N, N):
            raise T.ShapeError(f"snapshot {a.shape} vs max_nodes {N}")
        if n_live is None:
            live = (a != 0).any(axis=1).astype(np.float64)
        else:
            live = (np.arange(N) < n_live).astype(np.float64)
        norm = _row_normalize(a)
        (w1, b1), (w2, b2) = self.gcn1, self.gcn2
        h = T.relu(T.add_bias(T.matmul(norm, T.matmul(a, w1)), b1))
        z = T.matmul(norm, T.matmul(T.concat([h, a], axis=-1), w2))
        out = T.relu(T.add_bias(z, b2))
        return T.mean_pool(out, live)

    def _gcn_chunk(self, a: np.ndarray, norm: np.ndarray, live: np.ndarray) -> Tensor:
        """Same as encode_snapshot on stacks of P x P live blocks (padding columns dropped)."""
        P = a.shape[-1]
        H1 = self.config.gcn_hidden
        (w1, b1), (w2, b2) = self.gcn1, self.gcn2
        h = T.relu(T.add_bias(T.matmul(norm, T.matmul(a, w1[:P])), b1))
        inner = T.add(T.matmul(h, w2[:H1]), T.matmul(a, w2[H1:H1 + P]))
        out = T.relu(T.add_bias(T.matmul(norm, inner), b2))
        return T.mean_pool(out, live)

    def fuse(self, g_u, g_c, tprime) -> tuple[Tensor, Tensor]:
        """(Stru with the normalized time appended, reconstruction mse)."""
        x = T.concat([g_u, g_c], axis=-1)
        stru = _mlp(x, self.fuse_enc)
        recon = _mlp(stru, self.fuse_dec)
        loss = T.mse(x, recon)
        if self.config.time_off:
            return stru, loss
        t = np.asarray(tprime, dtype=np.float64).reshape(stru.shape[:-1] + (1,))
        return T.concat([stru, t], axis=-1), loss

    def _gru_run(self, direction: str, xs: Tensor) -> Tensor:
        """Run one GRU over (B, T, D) inputs; returns (B, T, H) states."""
        wx, wh, bx, bh = self._gru(direction)
        H = self.config.gru_hidden
        B, steps = xs.shape[0], xs.shape[1]
        xg = T.add_bias(T.matmul(xs, wx), bx)
        h = Tensor(np.zeros((B, H)))
        states = []
        for t in range(steps):
            xt = xg[:, t]
            hg = T.add_bias(T.matmul(h, wh), bh)
            rz = T.sigmoid(T.add(xt[:, : 2 * H], hg[:, : 2 * H]))
            r, z = rz[:, :H], rz[:, H:]
            n = T.tanh(T.add(xt[:, 2 * H:], T.mul(r, hg[:, 2 * H:])))
            h = T.add(n, T.mul(z, T.sub(h, n)))  # (1 - z) * n + z * h
            states.append(h)
        return T.stack(states, axis=1)

    def encode_sequence(self, steps) -> Tensor:
        """(m, D) step vectors -> (m, 2H) concatenated forward/backward states."""
        steps = T.tensor(steps)
        if steps.ndim != 2 or steps.shape[0] == 0:
            raise ValueError("encode_sequence needs a non-empty (m, D) sequence")
        m = steps.shape[0]
        fwd = self._gru_run("gru_fwd", T.reshape(steps, (1, m, steps.shape[1])))
        rev = steps[np.arange(m)[::-1]]
        bwd = self._gru_run("gru_bwd", T.reshape(rev, (1, m, steps.shape[1])))
        bwd = bwd[0][np.arange(m)[::-1]]
        return T.concat([fwd[0], bwd], axis=-1)

    def decay_weights(self, buckets: np.ndarray) -> Tensor:
        if not self.config.uses_decay:
            return Tensor(np.ones(np.shape(buckets)))
        return self.params["decay_lambda"][np.asarray(buckets)]

    def apply_decay(self, hidden, times) -> Tensor:
        """Decay-weighted sum of the (m, 2H) hidden states."""
        c = self.config
        buckets = decay_bucket(times, c.decay_interval, c.num_decay_intervals, c.window)
        w = self.decay_weights(buckets)
        return T.sum_(T.mul(T.tensor(hidden), T.reshape(w, (len(buckets), 1))), axis=0)

    def predict_increment(self, c) -> Tensor:
        """Regression output in log2(delta + 1) space."""
        out = _mlp(T.tensor(c), self.reg, final_relu=False)
        return T.reshape(out, out.shape[:-1])

    def classifier_logits(self, g_u) -> Tensor:
        return _mlp(T.tensor(g_u), self.cls, final_relu=False)

    def classify_user(self, g_u) -> Tensor:
        return T.softmax(self.classifier_logits(g_u))

    # batched forward ---------------------------------------------------------

    def forward(self, batch: Batch) -> ForwardTrace:
        c = self.config
        S, B, Tm = batch.num_steps, batch.size, batch.max_len
        if c.global_off:
            g_u = Tensor(np.zeros((len(batch.users), c.user_dim)))
            loss_ae1 = Tensor(0.0)
        else:
            g_u, loss_ae1 = self.encode_influence(batch.hop_vectors)
        if c.local_off:
            g_c = Tensor(np.zeros((S, c.gcn_out)))
        else:
            pooled = [self._gcn_chunk(ch.alpha, ch.norm, ch.live) for ch in batch.chunks]
            g_c = T.concat(pooled, axis=0)[batch.chunk_order]
        stru, loss_ae2 = self.fuse(g_u[batch.step_user], g_c, batch.step_tprime)
        padded = T.concat([stru, Tensor(np.zeros((1, stru.shape[1])))], axis=0)
        D = stru.shape[1]
        fwd = self._gru_run("gru_fwd", T.reshape(padded[batch.pad_index], (B, Tm, D)))
        bwd_rev = self._gru_run("gru_bwd", T.reshape(padded[batch.rev_index], (B, Tm, D)))
        H = c.gru_hidden
        bwd = T.reshape(T.reshape(bwd_rev, (B * Tm, H))[batch.unrev_index], (B, Tm, H))
        hidden = T.concat([fwd, bwd], axis=-1)
        bucket = np.zeros((B, Tm), dtype=np.int64)
        flat = batch.pad_index.reshape(B, Tm)
        real = flat < S
        bucket[real] = batch.step_bucket[flat[real]]
        w = T.mul(self.decay_weights(bucket), batch.step_mask)
        decayed = T.sum_(T.mul(hidden, T.reshape(w, (B, Tm, 1))), axis=1)
        pred = self.predict_increment(decayed)
        logits = None if (c.class_off or c.global_off) else self.classifier_logits(g_u)
        return ForwardTrace(g_u, g_c, stru, hidden, decayed, pred, logits, loss_ae1, loss_ae2)

    def loss(self, batch: Batch) -> tuple[LossBreakdown, ForwardTrace]:
        trace = self.forward(batch)
        return total_loss(self, trace, batch), trace

    def predict(self, batch: Batch) -> np.ndarray:
        """Predicted increments (counts), clamped at zero."""
        out = self.forward(batch).prediction.data
        return np.maximum(np.exp2(out) - 1.0, 0.0)


def _row_normalize(a: np.ndarray) -> np.ndarray:
    s = a.sum(axis=-1, keepdims=True)
    return np.divide(a, s, out=np.zeros_like(a), where=s != 0)


def increment_from_output(out) -> np.ndarray:
    return np.maximum(np.exp2(np.asarray(out, dtype=np.float64)) - 1.0, 0.0)


def total_loss(model: CasCIFF, trace: ForwardTrace, batch: Batch) -> LossBreakdown:
    """Weighted sum of regression, classification, both reconstruction and L2 terms."""
    c = model.config
    if (batch.targets < 0).any():
        raise ValueError("negative regression target")
    y = log_target(batch.targets)
    parts: dict[str, Tensor] = {}
    parts["reg"] = T.mean(T.square(T.sub(trace.prediction, y)))
    if trace.logits is not None:
        parts["cl"] = T.nll_from_logits(trace.logits, batch.leader)
    if not c.global_off:
        parts["ae1"] = trace.loss_ae1
    parts["ae2"] = trace.loss_ae2
    parts["rgl"] = T.mul(T.sum_of_squares(model.weight_matrices()), c.l2)
    weights = dict(zip(LOSS_NAMES, c.loss_weights))
    total = None
    for name, t in parts.items():
        term = T.mul(t, weights[name]) if weights[name] != 1.0 else t
        total = term if total is None else T.add(total, term)
    return LossBreakdown(total, {k: float(v.data) for k, v in parts.items()}, parts)
