"""Single-node tape operations for the per-frame hot path.

Each function computes the same values as the corresponding composition of
tensor primitives but records one graph node with a hand-derived backward
closure, which removes most of the per-frame tape overhead. The primitive
compositions remain the reference: tests compare both routes and run
central-difference checks on these closures.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend
from .tensor import Tensor, _node


def mlp_embed(x_data: np.ndarray, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Rows of x through w1, b1, tanh, w2, b2; x itself is constant."""
    pre = x_data @ w1.data + b1.data
    hidden = backend.tanh(pre)
    out_data = hidden @ w2.data + b2.data
    parents = (w1, b1, w2, b2)
    req = any(p.requires_grad for p in parents)
    out = _node(out_data, parents, req)
    if req:
        def bwd(g):
            w2.accumulate_owned(hidden.T @ g)
            b2.accumulate_owned(g.sum(axis=0, keepdims=True))
            dh = backend.tanh_grad(hidden, g @ w2.data.T)
            w1.accumulate_owned(x_data.T @ dh)
            b1.accumulate_owned(dh.sum(axis=0, keepdims=True))
        out._bwd = bwd
    return out


def multi_head_attention(q_set: Tensor, kv_set: Tensor, wq, wk, wv, proj=None):
    """Concatenated scaled dot-product heads; returns (output, head weights).

    Heads are computed in one pass over stacked weight matrices: column block
    i of the stacked projections is head i, so the output equals per-head
    attention followed by width-wise concatenation. The weights array
    (n_heads, n_q, n_kv) is detached, for export only.
    """
    n_heads = len(wq)
    d_k = wq[0].data.shape[1]
    scale = 1.0 / math.sqrt(d_k)
    q_data, kv_data = q_set.data, kv_set.data
    n_q, n_kv = q_data.shape[0], kv_data.shape[0]

    wq_all = np.concatenate([w.data for w in wq], axis=1)
    wk_all = np.concatenate([w.data for w in wk], axis=1)
    wv_all = np.concatenate([w.data for w in wv], axis=1)

    # (heads, rows, d_k) stacks
    q3 = (q_data @ wq_all).reshape(n_q, n_heads, d_k).transpose(1, 0, 2)
    k3 = (kv_data @ wk_all).reshape(n_kv, n_heads, d_k).transpose(1, 0, 2)
    v3 = (kv_data @ wv_all).reshape(n_kv, n_heads, d_k).transpose(1, 0, 2)
    scores = scale * (q3 @ k3.transpose(0, 2, 1))
    attn = backend.softmax_rows(
        np.ascontiguousarray(scores.reshape(n_heads * n_q, n_kv))
    ).reshape(n_heads, n_q, n_kv)
    concat = (attn @ v3).transpose(1, 0, 2).reshape(n_q, n_heads * d_k)
    out_data = concat if proj is None else concat @ proj.data

    parents = (q_set, kv_set, *wq, *wk, *wv) + ((proj,) if proj is not None else ())
    req = any(p.requires_grad for p in parents)
    out = _node(out_data, parents, req)
    if req:
        def bwd(g):
            if proj is not None:
                proj.accumulate_owned(concat.T @ g)
                g = g @ proj.data.T
            g3 = np.ascontiguousarray(g.reshape(n_q, n_heads, d_k).transpose(1, 0, 2))
            dv3 = attn.transpose(0, 2, 1) @ g3
            da = g3 @ v3.transpose(0, 2, 1)
            dp = scale * backend.softmax_rows_grad(
                np.ascontiguousarray(attn.reshape(n_heads * n_q, n_kv)),
                np.ascontiguousarray(da.reshape(n_heads * n_q, n_kv)),
            ).reshape(n_heads, n_q, n_kv)
            dq_all = (dp @ k3).transpose(1, 0, 2).reshape(n_q, n_heads * d_k)
            dk_all = (dp.transpose(0, 2, 1) @ q3).transpose(1, 0, 2).reshape(n_kv, n_heads * d_k)
            dv_all = dv3.transpose(1, 0, 2).reshape(n_kv, n_heads * d_k)
            dwq_all = q_data.T @ dq_all
            dwk_all = kv_data.T @ dk_all
            dwv_all = kv_data.T @ dv_all
            for i in range(n_heads):
                block = slice(i * d_k, (i + 1) * d_k)
                if wq[i].requires_grad:
                    wq[i].accumulate(dwq_all[:, block])
                if wk[i].requires_grad:
                    wk[i].accumulate(dwk_all[:, block])
                if wv[i].requires_grad:
                    wv[i].accumulate(dwv_all[:, block])
            if q_set.requires_grad:
                q_set.accumulate_owned(dq_all @ wq_all.T)
            if kv_set.requires_grad:
                kv_set.accumulate_owned(dk_all @ wk_all.T + dv_all @ wv_all.T)
        out._bwd = bwd
    return out, attn


def gated_state_update(c_set: Tensor, h_prev: Tensor, wz: Tensor, wh: Tensor,
                       gate_candidate: bool = False) -> Tensor:
    """z = sig(c Wz); cand = tanh(c Wh); h' = (1-z)*h_prev + cand.

    With gate_candidate the candidate is multiplied by z before the sum.
    """
    c, h = c_set.data, h_prev.data
    z = backend.sigmoid(c @ wz.data)
    cand = backend.tanh(c @ wh.data)
    out_data = (1.0 - z) * h + (z * cand if gate_candidate else cand)
    parents = (c_set, h_prev, wz, wh)
    req = any(p.requires_grad for p in parents)
    out = _node(out_data, parents, req)
    if req:
        def bwd(g):
            dz = -g * h
            dcand = g
            if gate_candidate:
                dz = dz + g * cand
                dcand = g * z
            dz_pre = backend.sigmoid_grad(z, dz)
            dcand_pre = backend.tanh_grad(cand, dcand)
            if wz.requires_grad:
                wz.accumulate_owned(c.T @ dz_pre)
            if wh.requires_grad:
                wh.accumulate_owned(c.T @ dcand_pre)
            if c_set.requires_grad:
                c_set.accumulate_owned(dz_pre @ wz.data.T + dcand_pre @ wh.data.T)
            if h_prev.requires_grad:
                h_prev.accumulate_owned(g * (1.0 - z))
        out._bwd = bwd
    return out


def gru_step(x: Tensor, g_prev: Tensor, p) -> Tensor:
    """Standard GRU cell applied row-wise; p carries the nine weight tensors.

    r = sig(x Wr + g Ur + br), u = sig(x Wu + g Uu + bu),
    n = tanh(x Wn + (r*g) Un + bn), g' = (1-u)*n + u*g.
    """
    xd, gd = x.data, g_prev.data
    r = backend.sigmoid(xd @ p.wr.data + gd @ p.ur.data + p.br.data)
    u = backend.sigmoid(xd @ p.wu.data + gd @ p.uu.data + p.bu.data)
    rg = r * gd
    n = backend.tanh(xd @ p.wn.data + rg @ p.un.data + p.bn.data)
    out_data = (1.0 - u) * n + u * gd
    parents = (x, g_prev, p.wr, p.ur, p.br, p.wu, p.uu, p.bu, p.wn, p.un, p.bn)
    req = any(t.requires_grad for t in parents)
    out = _node(out_data, parents, req)
    if req:
        def bwd(g):
            dn = g * (1.0 - u)
            du = g * (gd - n)
            dn_pre = backend.tanh_grad(n, dn)
            du_pre = backend.sigmoid_grad(u, du)
            drg = dn_pre @ p.un.data.T
            dr_pre = backend.sigmoid_grad(r, drg * gd)
            if p.wn.requires_grad:
                p.wn.accumulate_owned(xd.T @ dn_pre)
                p.un.accumulate_owned(rg.T @ dn_pre)
                p.bn.accumulate_owned(dn_pre.sum(axis=0, keepdims=True))
                p.wu.accumulate_owned(xd.T @ du_pre)
                p.uu.accumulate_owned(gd.T @ du_pre)
                p.bu.accumulate_owned(du_pre.sum(axis=0, keepdims=True))
                p.wr.accumulate_owned(xd.T @ dr_pre)
                p.ur.accumulate_owned(gd.T @ dr_pre)
                p.br.accumulate_owned(dr_pre.sum(axis=0, keepdims=True))
            if x.requires_grad:
                x.accumulate_owned(
                    dn_pre @ p.wn.data.T + du_pre @ p.wu.data.T + dr_pre @ p.wr.data.T
                )
            if g_prev.requires_grad:
                g_prev.accumulate_owned(
                    g * u + drg * r + du_pre @ p.uu.data.T + dr_pre @ p.ur.data.T
                )
        out._bwd = bwd
    return out
