"""Scaled dot-product attention and the assignment stage.

Each state slot queries the union of the current input set and the previous
state set; the softmax rows say which elements were used to update which
tracked slot, so they double as an assignment matrix for export.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import fused
from . import tensor as T


@dataclass
class AttentionWeights:
    """Per-head softmax matrices from one assignment call.

    weights has shape (n_heads, n_queries, n_inputs + n_states); columns are
    ordered inputs first, then previous states.
    """

    weights: np.ndarray
    n_inputs: int

    @property
    def n_heads(self) -> int:
        return self.weights.shape[0]

    @property
    def n_states(self) -> int:
        return self.weights.shape[2] - self.n_inputs

    def column_labels(self) -> list[str]:
        return [f"x{i}" for i in range(self.n_inputs)] + [
            f"h{i}" for i in range(self.n_states)
        ]

    def head_mean(self) -> np.ndarray:
        return self.weights.mean(axis=0)

    def write_csv(self, path, head) -> None:
        """One head (or the head mean for head='mean') as labeled CSV."""
        matrix = self.head_mean() if head == "mean" else self.weights[head]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slot"] + self.column_labels())
            for i, row in enumerate(matrix):
                writer.writerow([f"out{i}"] + [f"{x:.9f}" for x in row])


class MultiHeadParams:
    """Per-head projection matrices, all taken from one ParamStore.

    Head width is d / n_heads so the concatenated heads return width d.
    The optional mixing matrix after concatenation is off by default.
    """

    def __init__(self, store: T.ParamStore, prefix: str, d: int, n_heads: int,
                 rng: np.random.Generator, output_projection: bool = False):
        if d % n_heads != 0:
            raise ValueError(f"head count {n_heads} must divide width {d}")
        self.d = d
        self.n_heads = n_heads
        self.d_k = d // n_heads
        self.wq = []
        self.wk = []
        self.wv = []
        for i in range(n_heads):
            self.wq.append(store.add(f"{prefix}.h{i}.wq", T.uniform_init(rng, d, (d, self.d_k))))
            self.wk.append(store.add(f"{prefix}.h{i}.wk", T.uniform_init(rng, d, (d, self.d_k))))
            self.wv.append(store.add(f"{prefix}.h{i}.wv", T.uniform_init(rng, d, (d, self.d_k))))
        self.proj = None
        if output_projection:
            self.proj = store.add(f"{prefix}.proj", T.uniform_init(rng, d, (d, d)))

    @staticmethod
    def shapes(prefix: str, d: int, n_heads: int, output_projection: bool = False) -> dict:
        d_k = d // n_heads
        out = {}
        for i in range(n_heads):
            for w in ("wq", "wk", "wv"):
                out[f"{prefix}.h{i}.{w}"] = [d, d_k]
        if output_projection:
            out[f"{prefix}.proj"] = [d, d]
        return out


def scaled_dot_attention(q: T.Tensor, k: T.Tensor, v: T.Tensor):
    """softmax(q k^T / sqrt(d_k)) v for one head.

    Returns the output rows and the softmax matrix (detached) for export.
    """
    d_k = q.data.shape[1]
    if k.data.shape[1] != d_k or v.data.shape[1] != d_k:
        raise T.ShapeError(
            f"attention widths differ: q {q.data.shape}, k {k.data.shape}, v {v.data.shape}"
        )
    logits = T.affine(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d_k))
    weights = T.row_softmax(logits)
    out = T.matmul(weights, v)
    return out, weights.data.copy()


def multi_head(q_set: T.Tensor, kv_set: T.Tensor, p: MultiHeadParams):
    """Independent heads concatenated along the width.

    No mixing matrix follows the concatenation unless p.proj is set. Runs as
    one fused graph node; composing scaled_dot_attention per head gives the
    same values and serves as its reference in tests.
    """
    if q_set.data.shape[1] != p.d or kv_set.data.shape[1] != p.d:
        raise T.ShapeError(
            f"expected width {p.d}, got q {q_set.data.shape}, kv {kv_set.data.shape}"
        )
    return fused.multi_head_attention(q_set, kv_set, p.wq, p.wk, p.wv, p.proj)


def assignment_context(x_set: T.Tensor, h_prev: T.Tensor, p: MultiHeadParams):
    """Align every state slot with the relevant inputs and states.

    Queries are the previous states; keys and values are the inputs stacked
    above the previous states, so exported weight columns are inputs first.
    """
    kv = T.concat_rows([x_set, h_prev])
    c_set, weights = multi_head(h_prev, kv, p)
    return c_set, AttentionWeights(weights=weights, n_inputs=x_set.data.shape[0])
