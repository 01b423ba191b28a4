"""Tracking models over sets of activity-coded direction vectors.

The main model keeps one embedding per tracked trajectory: detections are
embedded by a shared MLP, matched to the state set by attention, folded in
by a gated update, smoothed by a per-slot GRU, and projected to 3-vector
outputs whose norm encodes activity. Slots whose output norm falls below the
threshold restart from the learned initial embedding at the next frame.

A conventional vector-GRU baseline with a matched parameter count is built
alongside for comparison; it concatenates all detections into one vector and
has no structural permutation handling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fused
from . import tensor as T
from .attention import AttentionWeights, MultiHeadParams, assignment_context


class ConfigError(ValueError):
    """Model configuration is internally inconsistent."""


ACTIVITY_NORM = 0.5  # output vectors with a smaller norm mean "no source"


def accdoa_norms(vecs: np.ndarray) -> np.ndarray:
    return np.sqrt((np.asarray(vecs, dtype=np.float64) ** 2).sum(axis=-1))


def accdoa_active(vecs: np.ndarray, threshold: float = ACTIVITY_NORM) -> np.ndarray:
    return accdoa_norms(vecs) >= threshold


@dataclass
class ModelConfig:
    slots: int = 10
    d: int = 128
    n_heads: int = 4
    gru_width: int | None = None
    mlp_hidden: int | None = None
    reset_threshold: float = 0.5
    output_projection: bool = False
    gate_candidate: bool = False
    baseline_width: int | None = None  # None: derive via param_match

    def __post_init__(self):
        if self.gru_width is None:
            self.gru_width = self.d
        if self.mlp_hidden is None:
            self.mlp_hidden = self.d
        if self.slots < 1:
            raise ConfigError(f"slots must be >= 1, got {self.slots}")
        if not (0.0 < self.reset_threshold < 1.0):
            raise ConfigError(f"reset_threshold must be in (0, 1), got {self.reset_threshold}")
        if self.d % self.n_heads != 0:
            raise ConfigError(f"n_heads={self.n_heads} does not divide d={self.d}")


@dataclass
class PirnnState:
    """Embeddings per tracked slot plus the per-slot GRU side state."""

    h_set: T.Tensor
    g_set: T.Tensor


def _get_or_add(store, name, rng, shape, fan_in=None):
    if rng is None:
        return store[name]
    if fan_in is None:
        values = np.zeros(shape)
    else:
        values = T.uniform_init(rng, fan_in, shape)
    return store.add(name, values)


class GruParams:
    """Weights of one standard GRU layer (reset/update/candidate gates)."""

    def __init__(self, store, prefix, d_in, d_g, rng=None):
        self.d_in = d_in
        self.d_g = d_g
        self.wr = _get_or_add(store, f"{prefix}.wr", rng, (d_in, d_g), d_in)
        self.ur = _get_or_add(store, f"{prefix}.ur", rng, (d_g, d_g), d_g)
        self.br = _get_or_add(store, f"{prefix}.br", rng, (1, d_g))
        self.wu = _get_or_add(store, f"{prefix}.wu", rng, (d_in, d_g), d_in)
        self.uu = _get_or_add(store, f"{prefix}.uu", rng, (d_g, d_g), d_g)
        self.bu = _get_or_add(store, f"{prefix}.bu", rng, (1, d_g))
        self.wn = _get_or_add(store, f"{prefix}.wn", rng, (d_in, d_g), d_in)
        self.un = _get_or_add(store, f"{prefix}.un", rng, (d_g, d_g), d_g)
        self.bn = _get_or_add(store, f"{prefix}.bn", rng, (1, d_g))

    @staticmethod
    def shapes(prefix, d_in, d_g) -> dict:
        return {
            f"{prefix}.wr": [d_in, d_g], f"{prefix}.ur": [d_g, d_g], f"{prefix}.br": [1, d_g],
            f"{prefix}.wu": [d_in, d_g], f"{prefix}.uu": [d_g, d_g], f"{prefix}.bu": [1, d_g],
            f"{prefix}.wn": [d_in, d_g], f"{prefix}.un": [d_g, d_g], f"{prefix}.bn": [1, d_g],
        }


def gru_cell(x: T.Tensor, g_prev: T.Tensor, p: GruParams) -> T.Tensor:
    """Standard GRU update, applied row-wise.

    r = sig(x Wr + g Ur + br), u = sig(x Wu + g Uu + bu),
    n = tanh(x Wn + (r*g) Un + bn), g' = (1-u)*n + u*g.
    """
    return fused.gru_step(x, g_prev, p)


def gated_update(c_set: T.Tensor, h_prev: T.Tensor, wz: T.Tensor, wh: T.Tensor,
                 gate_candidate: bool = False) -> T.Tensor:
    """Fold the per-slot context into the state.

    z = sig(c Wz); cand = tanh(c Wh); h' = (1-z)*h_prev + cand. The candidate
    enters ungated by default; gate_candidate=True switches to z*cand.
    """
    return fused.gated_state_update(c_set, h_prev, wz, wh, gate_candidate)


def embed_inputs(detections, w1, b1, w2, b2) -> T.Tensor:
    """Shared two-layer MLP from 3-vectors to width-d embeddings."""
    if isinstance(detections, T.Tensor):
        if detections.requires_grad:
            hidden = T.tanh_op(T.add_row(T.matmul(detections, w1), b1))
            return T.add_row(T.matmul(hidden, w2), b2)
        detections = detections.data
    x = np.asarray(detections, dtype=w1.data.dtype)
    return fused.mlp_embed(x, w1, b1, w2, b2)


def pirnn_param_shapes(cfg: ModelConfig) -> dict:
    shapes = {
        "embed.w1": [3, cfg.mlp_hidden], "embed.b1": [1, cfg.mlp_hidden],
        "embed.w2": [cfg.mlp_hidden, cfg.d], "embed.b2": [1, cfg.d],
    }
    shapes.update(MultiHeadParams.shapes("attn", cfg.d, cfg.n_heads, cfg.output_projection))
    shapes["gate.wz"] = [cfg.d, cfg.d]
    shapes["gate.wh"] = [cfg.d, cfg.d]
    shapes.update(GruParams.shapes("gru", cfg.d, cfg.gru_width))
    shapes["head.w"] = [cfg.gru_width, 3]
    shapes["head.b"] = [1, 3]
    shapes["init.h"] = [cfg.slots, cfg.d]
    return shapes


def baseline_param_shapes(slots: int, width: int) -> dict:
    shapes = {}
    shapes.update(GruParams.shapes("bl.gru1", 3 * slots, width))
    shapes.update(GruParams.shapes("bl.gru2", width, width))
    shapes["bl.head.w"] = [width, 3 * slots]
    shapes["bl.head.b"] = [1, 3 * slots]
    return shapes


def count_params(shapes: dict) -> int:
    return sum(int(np.prod(s)) for s in shapes.values())


def param_breakdown(shapes: dict) -> dict:
    """Parameter count per name group, insertion ordered."""
    out: dict[str, int] = {}
    for name, shape in shapes.items():
        parts = name.split(".")
        group = ".".join(parts[:2]) if parts[0] == "bl" else parts[0]
        out[group] = out.get(group, 0) + int(np.prod(shape))
    return out


def param_match(cfg: ModelConfig, lo: float = 0.95, hi: float = 1.10) -> int:
    """Smallest baseline width whose count lands within [lo, hi] of the model's."""
    target = count_params(pirnn_param_shapes(cfg))
    for width in range(4, 4097):
        ratio = count_params(baseline_param_shapes(cfg.slots, width)) / target
        if lo <= ratio <= hi:
            return width
        if ratio > hi:
            break
    raise ConfigError(
        f"no baseline width in [4, 4096] matches {target} parameters within [{lo}, {hi}]"
    )


class PirnnModel:
    """Set-state tracking model; owns its parameters.

    Pass `rng` to initialize fresh parameters, or `store` to wire onto an
    existing (e.g. checkpoint-loaded) ParamStore.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 store: T.ParamStore | None = None, dtype=np.float64):
        if (rng is None) == (store is None):
            raise ConfigError("pass exactly one of rng (fresh init) or store (existing values)")
        self.cfg = cfg
        if store is None:
            store = T.ParamStore(dtype=dtype)
        else:
            got, want = store.schema(), self.schema(cfg)
            if got != want:
                bad = sorted(set(got.items()) ^ set(want.items()))
                raise T.CheckpointError(f"parameter schema mismatch: {bad}")
        self.dtype = store.dtype
        self.params = store
        self.embed_w1 = _get_or_add(store, "embed.w1", rng, (3, cfg.mlp_hidden), 3)
        self.embed_b1 = _get_or_add(store, "embed.b1", rng, (1, cfg.mlp_hidden))
        self.embed_w2 = _get_or_add(store, "embed.w2", rng, (cfg.mlp_hidden, cfg.d), cfg.mlp_hidden)
        self.embed_b2 = _get_or_add(store, "embed.b2", rng, (1, cfg.d))
        if rng is None:
            self.attn = MultiHeadParams.__new__(MultiHeadParams)
            self.attn.d, self.attn.n_heads = cfg.d, cfg.n_heads
            self.attn.d_k = cfg.d // cfg.n_heads
            self.attn.wq = [store[f"attn.h{i}.wq"] for i in range(cfg.n_heads)]
            self.attn.wk = [store[f"attn.h{i}.wk"] for i in range(cfg.n_heads)]
            self.attn.wv = [store[f"attn.h{i}.wv"] for i in range(cfg.n_heads)]
            self.attn.proj = store["attn.proj"] if cfg.output_projection else None
        else:
            self.attn = MultiHeadParams(store, "attn", cfg.d, cfg.n_heads, rng,
                                        cfg.output_projection)
        self.gate_wz = _get_or_add(store, "gate.wz", rng, (cfg.d, cfg.d), cfg.d)
        self.gate_wh = _get_or_add(store, "gate.wh", rng, (cfg.d, cfg.d), cfg.d)
        self.gru = GruParams(store, "gru", cfg.d, cfg.gru_width, rng)
        self.head_w = _get_or_add(store, "head.w", rng, (cfg.gru_width, 3), cfg.gru_width)
        self.head_b = _get_or_add(store, "head.b", rng, (1, 3))
        if rng is None:
            self.init_h = store["init.h"]
        else:
            self.init_h = store.add("init.h", T.uniform_init(rng, cfg.d, (cfg.slots, cfg.d)))
        self._g_zero = T.constant(np.zeros((cfg.slots, cfg.gru_width), dtype=self.dtype))

    @staticmethod
    def schema(cfg: ModelConfig) -> dict:
        return pirnn_param_shapes(cfg)

    def initial_state(self) -> PirnnState:
        return PirnnState(h_set=self.init_h, g_set=self._g_zero)

    def step(self, detections: np.ndarray, state: PirnnState):
        """One frame: embed, assign, update, smooth, project, then reset.

        Slots whose output norm is below the reset threshold re-enter the
        next frame from the learned initial embedding (GRU side state zero).
        The threshold decision itself is not differentiated; the routed
        values stay in the gradient path.
        """
        x_set = embed_inputs(detections, self.embed_w1, self.embed_b1,
                             self.embed_w2, self.embed_b2)
        c_set, weights = assignment_context(x_set, state.h_set, self.attn)
        h_new = gated_update(c_set, state.h_set, self.gate_wz, self.gate_wh,
                             self.cfg.gate_candidate)
        g_new = gru_cell(h_new, state.g_set, self.gru)
        outputs = T.add_row(T.matmul(g_new, self.head_w), self.head_b)
        inactive = accdoa_norms(outputs.data) < self.cfg.reset_threshold
        if inactive.any():
            h_next = T.where_rows(inactive, self.init_h, h_new)
            g_next = T.where_rows(inactive, self._g_zero, g_new)
        else:
            h_next, g_next = h_new, g_new
        return outputs, PirnnState(h_set=h_next, g_set=g_next), weights

    def forward(self, frames: np.ndarray, collect_attention: bool = False,
                truncation: int | None = None):
        """Run a whole scene; returns per-frame outputs (and attention).

        `truncation` detaches the carried state every that many frames, so
        one backward pass stops at the window boundaries while forward
        values are unaffected.
        """
        frames = np.asarray(frames, dtype=self.dtype)
        if frames.ndim != 3 or frames.shape[1] != self.cfg.slots or frames.shape[2] != 3:
            raise T.ShapeError(
                f"frames must be (T, {self.cfg.slots}, 3), got {frames.shape}"
            )
        state = self.initial_state()
        outputs = []
        attention = [] if collect_attention else None
        for t in range(frames.shape[0]):
            if truncation is not None and t > 0 and t % truncation == 0:
                state = PirnnState(h_set=state.h_set.detach(), g_set=state.g_set.detach())
            out, state, weights = self.step(frames[t], state)
            outputs.append(out)
            if collect_attention:
                attention.append(weights)
        return outputs, attention


def pirnn_step(detections, state, model: PirnnModel):
    return model.step(np.asarray(detections, dtype=np.float64), state)


def track_sequence(frames, model: PirnnModel, collect_attention: bool = False):
    return model.forward(frames, collect_attention=collect_attention)


class BaselineModel:
    """Two stacked vector GRUs over the concatenated detections."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 store: T.ParamStore | None = None, dtype=np.float64):
        if (rng is None) == (store is None):
            raise ConfigError("pass exactly one of rng (fresh init) or store (existing values)")
        self.cfg = cfg
        self.width = cfg.baseline_width if cfg.baseline_width is not None else param_match(cfg)
        if store is None:
            store = T.ParamStore(dtype=dtype)
        else:
            got, want = store.schema(), self.schema(cfg)
            if got != want:
                bad = sorted(set(got.items()) ^ set(want.items()))
                raise T.CheckpointError(f"parameter schema mismatch: {bad}")
        self.dtype = store.dtype
        self.params = store
        self.gru1 = GruParams(store, "bl.gru1", 3 * cfg.slots, self.width, rng)
        self.gru2 = GruParams(store, "bl.gru2", self.width, self.width, rng)
        self.head_w = _get_or_add(store, "bl.head.w", rng, (self.width, 3 * cfg.slots), self.width)
        self.head_b = _get_or_add(store, "bl.head.b", rng, (1, 3 * cfg.slots))
        self._zero = T.constant(np.zeros((1, self.width), dtype=self.dtype))

    @staticmethod
    def schema(cfg: ModelConfig) -> dict:
        width = cfg.baseline_width if cfg.baseline_width is not None else param_match(cfg)
        return baseline_param_shapes(cfg.slots, width)

    def forward(self, frames: np.ndarray, truncation: int | None = None):
        frames = np.asarray(frames, dtype=self.dtype)
        if frames.ndim != 3 or frames.shape[1] != self.cfg.slots or frames.shape[2] != 3:
            raise T.ShapeError(
                f"frames must be (T, {self.cfg.slots}, 3), got {frames.shape}"
            )
        g1, g2 = self._zero, self._zero
        outputs = []
        for t in range(frames.shape[0]):
            if truncation is not None and t > 0 and t % truncation == 0:
                g1, g2 = g1.detach(), g2.detach()
            x = T.constant(frames[t].reshape(1, -1))
            g1 = gru_cell(x, g1, self.gru1)
            g2 = gru_cell(g1, g2, self.gru2)
            flat = T.add_row(T.matmul(g2, self.head_w), self.head_b)
            outputs.append(T.reshape(flat, self.cfg.slots, 3))
        return outputs


def baseline_forward(frames, model: BaselineModel):
    return model.forward(frames)
