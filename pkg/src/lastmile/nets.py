"""Policy and value networks: graph-attention encoder, decoder heads, flat baseline.

The graph nets run on float64 via the tape engine in lastmile.autodiff.
Actor and critic never share parameters. All parameters of one model live in
a single flat ParameterStore so optimizer steps and checkpoints are trivial.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, gather_rows, log_softmax, segment_softmax, segment_sum
from .instance import normalize_features

log = logging.getLogger(__name__)

NUM_NODE_FEATURES = 5  # x, y, t, is_pickup, must_visit

_warned_empty_neighborhood = False


@dataclass
class GatConfig:
    embedding_size: int = 64  # B
    heads: int = 4  # R
    hidden: int = 128  # H
    attention_enabled: bool = True  # False = uniform neighbor weights
    leaky_slope: float = 0.2
    elu_alpha: float = 1.0

    def __post_init__(self):
        if min(self.embedding_size, self.heads, self.hidden) < 1:
            raise ValueError("embedding_size, heads and hidden must be >= 1")


@dataclass
class FlatConfig:
    grid_g: int = 16
    hidden: int = 128

    def __post_init__(self):
        if self.grid_g < 2:
            raise ValueError("grid_g must be >= 2")


class ParameterStore:
    """All parameters of one model as a flat float64 vector plus a manifest.

    Entries are registered in construction order; freeze() lays them out
    contiguously and every later view aliases the flat array, so in-place
    optimizer updates are visible to the model immediately.
    """

    def __init__(self):
        self._pending: List[Tuple[str, np.ndarray]] = []
        self._layout: List[Tuple[str, Tuple[int, ...], int]] = []
        self.values: Optional[np.ndarray] = None

    def add(self, name: str, array: np.ndarray):
        if self.values is not None:
            raise RuntimeError("store already frozen")
        self._pending.append((name, np.asarray(array, dtype=np.float64)))

    def freeze(self):
        offset = 0
        chunks = []
        for name, arr in self._pending:
            self._layout.append((name, arr.shape, offset))
            chunks.append(arr.ravel())
            offset += arr.size
        self.values = np.concatenate(chunks) if chunks else np.zeros(0)
        self._pending.clear()

    @property
    def size(self) -> int:
        return int(self.values.size)

    def view(self, name: str) -> np.ndarray:
        for n, shape, off in self._layout:
            if n == name:
                size = int(np.prod(shape)) if shape else 1
                return self.values[off : off + size].reshape(shape)
        raise KeyError(name)

    def manifest(self) -> List[dict]:
        return [
            {"name": n, "shape": list(shape), "offset": off} for n, shape, off in self._layout
        ]

    def load_values(self, flat: np.ndarray):
        if flat.shape != self.values.shape:
            raise ValueError("parameter count mismatch")
        np.copyto(self.values, flat)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# state encodings


@dataclass
class EncodedGraph:
    """Normalized features plus the attention edge list of one (or a batch of)
    decision states. Edges keep only admissible sources: must-visit nodes and
    self-loops. decode_nodes holds, per graph, the pickup nodes in index order
    followed by the new-order node (the home-only action slot)."""

    features: np.ndarray  # (n, 5)
    edge_src: np.ndarray
    edge_dst: np.ndarray
    decode_nodes: np.ndarray  # (num_graphs, |M|+1)
    num_nodes: int
    num_graphs: int = 1


def encode_state(state, L: float, T: float) -> EncodedGraph:
    feats = np.zeros((state.num_nodes, NUM_NODE_FEATURES))
    for i, f in enumerate(state.features):
        x, y, t = normalize_features(f.location, f.arrival_time, L, T)
        feats[i] = (x, y, t, float(f.is_pickup), float(f.must_visit))
    src, dst = [], []
    for i, j in sorted(state.arcs, key=lambda a: (a[1], a[0])):
        if state.features[i].must_visit or i == j:
            src.append(i)
            dst.append(j)
    decode = list(state.pickup_nodes()) + [state.new_order_node]
    return EncodedGraph(
        features=feats,
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        decode_nodes=np.array([decode], dtype=np.int64),
        num_nodes=state.num_nodes,
    )


def batch_graphs(encs: Sequence[EncodedGraph]) -> EncodedGraph:
    """Disjoint union with shifted node ids; one forward pass serves the batch."""
    feats, srcs, dsts, decodes = [], [], [], []
    offset = 0
    for e in encs:
        feats.append(e.features)
        srcs.append(e.edge_src + offset)
        dsts.append(e.edge_dst + offset)
        decodes.append(e.decode_nodes + offset)
        offset += e.num_nodes
    return EncodedGraph(
        features=np.concatenate(feats),
        edge_src=np.concatenate(srcs),
        edge_dst=np.concatenate(dsts),
        decode_nodes=np.concatenate(decodes),
        num_nodes=offset,
        num_graphs=len(encs),
    )


def flat_encode(state, L: float, T: float, grid_g: int) -> np.ndarray:
    """Fixed-length encoding: scaled clock, new-order grid, must-visit grid.

    Cells are half-open boxes over [-L, L)^2, index ix*g + iy; out-of-range
    points (the depot) are clamped into the boundary cells so they stay
    visible to the encoder.
    """
    g = grid_g
    vec = np.zeros(1 + 2 * g * g)
    order = state.new_order_node
    vec[0] = state.features[order].arrival_time / T if order is not None else state.clock / T

    def cell(loc) -> int:
        ix = int(np.floor((loc.x + L) * g / (2.0 * L)))
        iy = int(np.floor((loc.y + L) * g / (2.0 * L)))
        ix = min(max(ix, 0), g - 1)
        iy = min(max(iy, 0), g - 1)
        return ix * g + iy

    if order is not None:
        vec[1 + cell(state.features[order].location)] = 1.0
    for i, f in enumerate(state.features):
        if f.must_visit:
            vec[1 + g * g + cell(f.location)] = 1.0
    return vec


# ---------------------------------------------------------------------------
# graph attention model


def gat_layer(
    h: Tensor,
    W: Tensor,
    a_dst: Tensor,
    a_src: Tensor,
    edge_src: np.ndarray,
    edge_dst: np.ndarray,
    num_nodes: int,
    cfg: GatConfig,
) -> Tensor:
    """One multi-head attention layer; returns (n, R*B) head-concatenated output.

    Attention scores follow LeakyReLU(a . [W h_dst || W h_src]) with the
    attention vector a stored as its two halves (a_dst, a_src), each (R, B).
    Scores are normalized over each destination's admissible in-edges. Nodes
    without any in-edge (the depot: no self-loop, and nothing forces arcs into
    it) come out as zero vectors.
    """
    global _warned_empty_neighborhood
    R, B = cfg.heads, cfg.embedding_size
    n_edges = edge_src.shape[0]
    Wh = h @ W  # (n, R*B)
    Wh3 = Wh.reshape(num_nodes, R, B)
    deg = np.bincount(edge_dst, minlength=num_nodes)
    if (deg == 0).any() and not _warned_empty_neighborhood:
        log.info("node(s) with empty attention neighborhood encountered; emitting zeros")
        _warned_empty_neighborhood = True

    if cfg.attention_enabled:
        s_dst = (Wh3 * a_dst.reshape(1, R, B)).sum(axis=2)  # (n, R)
        s_src = (Wh3 * a_src.reshape(1, R, B)).sum(axis=2)
        scores = (gather_rows(s_dst, edge_dst) + gather_rows(s_src, edge_src)).leaky_relu(
            cfg.leaky_slope
        )
        alpha = segment_softmax(scores, edge_dst, num_nodes)  # (n_e, R)
        weights = alpha.reshape(n_edges, R, 1)
    else:
        uniform = 1.0 / np.maximum(deg, 1)
        weights = Tensor(np.broadcast_to(uniform[edge_dst].reshape(-1, 1, 1), (n_edges, R, 1)).copy())

    msgs = gather_rows(Wh, edge_src).reshape(n_edges, R, B) * weights
    agg = segment_sum(msgs, edge_dst, num_nodes)  # (n, R, B)
    return agg.elu(cfg.elu_alpha).reshape(num_nodes, R * B)


class GraphActorCritic:
    """Two-layer GAT encoder + decoder heads; disjoint actor/critic parameters.

    The actor scores each pickup node and the new-order node (= the home-only
    action) and softmaxes over those |M|+1 slots; the critic maps the same
    concatenation through one more dense layer to a scalar state value.
    """

    kind = "gat"

    def __init__(self, num_pickups: int, config: GatConfig = None, seed: int = 0):
        self.num_pickups = num_pickups
        self.config = config or GatConfig()
        cfg = self.config
        R, B, H = cfg.heads, cfg.embedding_size, cfg.hidden
        F = NUM_NODE_FEATURES
        rng = np.random.default_rng(seed)
        self.store = ParameterStore()
        for net in ("actor", "critic"):
            self.store.add("%s.gat1.W" % net, _glorot(rng, (F, R * B), F, B))
            self.store.add("%s.gat1.a_dst" % net, _glorot(rng, (R, B), 2 * B, 1))
            self.store.add("%s.gat1.a_src" % net, _glorot(rng, (R, B), 2 * B, 1))
            self.store.add("%s.gat2.W" % net, _glorot(rng, (R * B, R * B), R * B, B))
            self.store.add("%s.gat2.a_dst" % net, _glorot(rng, (R, B), 2 * B, 1))
            self.store.add("%s.gat2.a_src" % net, _glorot(rng, (R, B), 2 * B, 1))
            self.store.add("%s.f1.W" % net, _glorot(rng, (R * B, H), R * B, H))
            self.store.add("%s.f1.b" % net, np.zeros(H))
            self.store.add("%s.f2.W" % net, _glorot(rng, (H, H), H, H))
            self.store.add("%s.f2.b" % net, np.zeros(H))
            self.store.add("%s.f3.W" % net, _glorot(rng, (H, 1), H, 1))
            self.store.add("%s.f3.b" % net, np.zeros(1))
        A = num_pickups + 1
        self.store.add("critic.fv2.W", _glorot(rng, (A, 1), A, 1))
        self.store.add("critic.fv2.b", np.zeros(1))
        self.store.freeze()
        self.params: Dict[str, Tensor] = {
            e["name"]: Tensor(self.store.view(e["name"])) for e in self.store.manifest()
        }

    def _node_scores(self, net: str, enc: EncodedGraph) -> Tensor:
        p = self.params
        h = Tensor(enc.features)
        h1 = gat_layer(
            h, p["%s.gat1.W" % net], p["%s.gat1.a_dst" % net], p["%s.gat1.a_src" % net],
            enc.edge_src, enc.edge_dst, enc.num_nodes, self.config,
        )
        h2 = gat_layer(
            h1, p["%s.gat2.W" % net], p["%s.gat2.a_dst" % net], p["%s.gat2.a_src" % net],
            enc.edge_src, enc.edge_dst, enc.num_nodes, self.config,
        )
        z = (h2 @ p["%s.f1.W" % net] + p["%s.f1.b" % net]).tanh()
        z = (z @ p["%s.f2.W" % net] + p["%s.f2.b" % net]).tanh()
        return z @ p["%s.f3.W" % net] + p["%s.f3.b" % net]  # (n, 1)

    def forward(self, enc: EncodedGraph) -> Tuple[Tensor, Tensor]:
        """Log action probabilities (num_graphs, |M|+1) and values (num_graphs,)."""
        A = self.num_pickups + 1
        flat_ids = enc.decode_nodes.reshape(-1)
        va = self._node_scores("actor", enc)
        logits = gather_rows(va, flat_ids).reshape(enc.num_graphs, A)
        log_probs = log_softmax(logits, axis=1)
        vc = self._node_scores("critic", enc)
        pooled = gather_rows(vc, flat_ids).reshape(enc.num_graphs, A)
        value = (pooled @ self.params["critic.fv2.W"] + self.params["critic.fv2.b"]).reshape(
            enc.num_graphs
        )
        return log_probs, value

    def encode(self, state, L: float, T: float) -> EncodedGraph:
        return encode_state(state, L, T)

    def batch(self, encs) -> EncodedGraph:
        return batch_graphs(encs)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def collect_grads(self) -> np.ndarray:
        out = np.zeros(self.store.size)
        for e in self.store.manifest():
            t = self.params[e["name"]]
            if t.grad is not None:
                size = t.grad.size
                out[e["offset"] : e["offset"] + size] = t.grad.ravel()
        return out

    def config_echo(self) -> dict:
        return {"arch": self.kind, "num_pickups": self.num_pickups, "net": asdict(self.config)}


class FlatActorCritic:
    """Dense baseline over the fixed-length grid encoding."""

    kind = "flat"

    def __init__(self, num_pickups: int, config: FlatConfig = None, seed: int = 0):
        self.num_pickups = num_pickups
        self.config = config or FlatConfig()
        g, H = self.config.grid_g, self.config.hidden
        D = 1 + 2 * g * g
        A = num_pickups + 1
        rng = np.random.default_rng(seed)
        self.store = ParameterStore()
        for net, out_dim in (("actor", A), ("critic", 1)):
            self.store.add("%s.l1.W" % net, _glorot(rng, (D, H), D, H))
            self.store.add("%s.l1.b" % net, np.zeros(H))
            self.store.add("%s.l2.W" % net, _glorot(rng, (H, H), H, H))
            self.store.add("%s.l2.b" % net, np.zeros(H))
            self.store.add("%s.l3.W" % net, _glorot(rng, (H, out_dim), H, out_dim))
            self.store.add("%s.l3.b" % net, np.zeros(out_dim))
        self.store.freeze()
        self.params = {
            e["name"]: Tensor(self.store.view(e["name"])) for e in self.store.manifest()
        }

    def _mlp(self, net: str, x: Tensor) -> Tensor:
        p = self.params
        z = (x @ p["%s.l1.W" % net] + p["%s.l1.b" % net]).relu()
        z = (z @ p["%s.l2.W" % net] + p["%s.l2.b" % net]).relu()
        return z @ p["%s.l3.W" % net] + p["%s.l3.b" % net]

    def forward(self, x) -> Tuple[Tensor, Tensor]:
        x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(x))
        log_probs = log_softmax(self._mlp("actor", x), axis=1)
        value = self._mlp("critic", x).reshape(x.shape[0])
        return log_probs, value

    def encode(self, state, L: float, T: float) -> np.ndarray:
        return flat_encode(state, L, T, self.config.grid_g)

    def batch(self, encs) -> Tensor:
        return Tensor(np.stack(encs))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def collect_grads(self) -> np.ndarray:
        out = np.zeros(self.store.size)
        for e in self.store.manifest():
            t = self.params[e["name"]]
            if t.grad is not None:
                out[e["offset"] : e["offset"] + t.grad.size] = t.grad.ravel()
        return out

    def config_echo(self) -> dict:
        return {"arch": self.kind, "num_pickups": self.num_pickups, "net": asdict(self.config)}


def evaluate_state(model, state, L: float, T: float) -> Tuple[np.ndarray, float]:
    """Single-state convenience forward: (log-prob vector, value)."""
    enc = model.encode(state, L, T)
    if model.kind == "flat":
        enc = model.batch([enc])
    log_probs, value = model.forward(enc)
    return log_probs.data[0].copy(), float(value.data[0])


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then the little-endian float64 parameters


def save_checkpoint(path, model, extra: Optional[dict] = None, step: int = 0) -> Path:
    header = {
        "format": 1,
        "step": int(step),
        "config": dict(model.config_echo(), **(extra or {})),
        "manifest": model.store.manifest(),
        "dtype": "<f8",
        "count": model.store.size,
    }
    path = Path(path)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(model.store.values.astype("<f8", copy=False).tobytes())
    return path


def load_checkpoint(path) -> Tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != 1:
            raise ValueError("unsupported checkpoint format")
        values = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    if values.size != header["count"]:
        raise ValueError("checkpoint truncated: %d of %d values" % (values.size, header["count"]))
    return values, header


def model_from_checkpoint(path):
    """Rebuild the right architecture from a checkpoint and load its weights."""
    values, header = load_checkpoint(path)
    cfg = header["config"]
    if cfg["arch"] == "gat":
        model = GraphActorCritic(cfg["num_pickups"], GatConfig(**cfg["net"]))
    elif cfg["arch"] == "flat":
        model = FlatActorCritic(cfg["num_pickups"], FlatConfig(**cfg["net"]))
    else:
        raise ValueError("unknown architecture %r" % cfg["arch"])
    expected = [(e["name"], tuple(e["shape"])) for e in model.store.manifest()]
    got = [(e["name"], tuple(e["shape"])) for e in header["manifest"]]
    if expected != got:
        raise ValueError("checkpoint manifest does not match architecture")
    model.store.load_values(values)
    return model, header
