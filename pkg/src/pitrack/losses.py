"""Assignment-based training losses.

Both losses are minima over injective assignments of ground truths to
prediction slots: matched slots pay squared distance to their target,
unmatched slots pay their squared norm, which drives them toward the
inactive (zero) code. The frame loss solves one assignment per frame; the
sliding variant solves one assignment per window of frames and applies it
to the center frame, so predictions that swap slots mid-window keep paying
for it. Assignments are treated as constants by the gradient.
"""

from __future__ import annotations

import numpy as np

from . import backend
from . import tensor as T


def frame_cost(preds, gts) -> np.ndarray:
    """Squared euclidean distance between every slot and every target."""
    p = preds.data if isinstance(preds, T.Tensor) else np.asarray(preds, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 3)
    diff = p[:, None, :] - g[None, :, :]
    return (diff * diff).sum(axis=2)


def hungarian(cost):
    """Optimal assignment of ground truths (columns) to slots (rows).

    Returns (slots, total) where slots[j] is the row matched to column j.
    Among cost-equal optima the lexicographically smallest slot vector wins,
    which pins down the result on tied inputs.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix contains non-finite entries")
    n_pred, n_gt = c.shape
    if n_gt > n_pred:
        raise ValueError(f"more ground truths ({n_gt}) than prediction slots ({n_pred})")
    if n_gt == 0:
        return np.zeros(0, dtype=np.int64), 0.0

    best = backend.lap_solve(np.ascontiguousarray(c.T))
    total = float(c[best, np.arange(n_gt)].sum())
    tol = 1e-9 * max(1.0, abs(total))

    # Fix slots column by column, keeping overall optimality, to obtain the
    # lexicographically smallest optimal assignment.
    slots = np.empty(n_gt, dtype=np.int64)
    free = list(range(n_pred))
    fixed = 0.0
    for j in range(n_gt):
        rest_cols = np.arange(j + 1, n_gt)
        for pos, s in enumerate(free):
            rest_rows = free[:pos] + free[pos + 1:]
            cand = fixed + c[s, j]
            if rest_cols.size:
                if len(rest_rows) < rest_cols.size:
                    continue
                sub = np.ascontiguousarray(c[np.array(rest_rows)][:, rest_cols].T)
                pick = backend.lap_solve(sub)
                cand += sum(c[rest_rows[pick[jj]], rest_cols[jj]] for jj in range(rest_cols.size))
            if cand <= total + tol:
                slots[j] = s
                free.pop(pos)
                fixed += c[s, j]
                break
        else:
            raise AssertionError("assignment refinement failed to place a column")
    return slots, total


def _adjusted_cost(cost, norms_sq, n_slots, n_gt):
    """Per-slot offsets folding the unmatched-slot penalty into the LAP.

    Minimizing this matrix over assignments minimizes the full frame loss
    (matched mean plus unmatched-norm mean), not just the matched term.
    """
    adj = cost / n_gt
    if n_slots > n_gt:
        adj = adj - norms_sq[:, None] / (n_slots - n_gt)
    return adj


def _frame_terms(p_data, gts):
    """Assignment and the numeric loss pieces for one frame."""
    n_slots = p_data.shape[0]
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 3)
    n_gt = gts.shape[0]
    norms_sq = (p_data.astype(np.float64) ** 2).sum(axis=1)
    if n_gt == 0:
        return np.zeros(0, dtype=np.int64), float(norms_sq.mean())
    if n_gt > n_slots:
        raise ValueError(f"more ground truths ({n_gt}) than prediction slots ({n_slots})")
    cost = frame_cost(p_data, gts)
    adj = _adjusted_cost(cost, norms_sq, n_slots, n_gt)
    slots = backend.lap_solve(np.ascontiguousarray(adj.T))
    value = cost[slots, np.arange(n_gt)].sum() / n_gt
    if n_slots > n_gt:
        value += (norms_sq.sum() - norms_sq[slots].sum()) / (n_slots - n_gt)
    return slots, float(value)


def _frame_loss_node(preds: T.Tensor, gts, slots) -> T.Tensor:
    """One graph node holding the frame loss for a fixed assignment."""
    p = preds.data
    n_slots = p.shape[0]
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 3)
    n_gt = gts.shape[0]
    unmatched = np.ones(n_slots, dtype=bool)
    value = 0.0
    if n_gt:
        unmatched[slots] = False
        matched_diff = p[slots] - gts
        value += (matched_diff * matched_diff).sum() / n_gt
    if n_slots > n_gt:
        value += (p[unmatched] ** 2).sum() / (n_slots - n_gt)

    out = T._node(np.array([[value]]), (preds,), preds.requires_grad)
    if preds.requires_grad:
        def bwd(g):
            scale = 2.0 * g[0, 0]
            grad = np.zeros_like(p)
            if n_gt:
                grad[slots] = matched_diff * (scale / n_gt)
            if n_slots > n_gt:
                grad[unmatched] = p[unmatched] * (scale / (n_slots - n_gt))
            preds.accumulate_owned(grad)
        out._bwd = bwd
    return out


def fpit_loss(preds, gts):
    """Frame-level loss, minimized over the target-to-slot assignment.

    Accepts a Tensor (returns a differentiable scalar Tensor with the
    assignment held constant) or a plain array (returns a float).
    """
    if isinstance(preds, T.Tensor):
        slots, _ = _frame_terms(preds.data, gts)
        return _frame_loss_node(preds, gts, slots)
    _, value = _frame_terms(np.asarray(preds, dtype=np.float64), gts)
    return value


def spit_loss(pred_seq, gt_seq, window: int = 11):
    """Sliding-window loss that penalizes identity switches.

    For each frame, assignment costs are accumulated over the surrounding
    window (trajectory identities carried across frames), one assignment is
    solved for the window, and the center frame is charged under it. A
    window of 1 reduces to the mean frame-level loss.

    `gt_seq` is one (ids, unit_vectors) pair per frame. Returns a scalar
    Tensor when predictions are Tensors, otherwise a float.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    n_frames = len(pred_seq)
    if n_frames != len(gt_seq):
        raise ValueError(f"{n_frames} prediction frames vs {len(gt_seq)} target frames")
    if n_frames == 0:
        raise ValueError("empty sequence")
    on_tape = isinstance(pred_seq[0], T.Tensor)
    data_seq = [p.data if on_tape else np.asarray(p, dtype=np.float64) for p in pred_seq]
    n_slots = data_seq[0].shape[0]
    half = window // 2

    all_ids = sorted({int(i) for ids, _ in gt_seq for i in np.asarray(ids).reshape(-1)})
    col_of = {i: j for j, i in enumerate(all_ids)}
    n_traj = len(all_ids)

    adj = np.zeros((n_frames + 1, n_slots, n_traj))
    act = np.zeros((n_frames + 1, n_traj))
    costs = []
    for t in range(n_frames):
        ids, doas = gt_seq[t]
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        doas = np.asarray(doas, dtype=np.float64).reshape(-1, 3)
        k = ids.size
        adj[t + 1] = adj[t]
        act[t + 1] = act[t]
        if k == 0:
            costs.append(None)
            continue
        if k > n_slots:
            raise ValueError(f"frame {t}: more ground truths ({k}) than slots ({n_slots})")
        cost = frame_cost(data_seq[t], doas)
        costs.append(cost)
        norms_sq = (data_seq[t].astype(np.float64) ** 2).sum(axis=1)
        a = _adjusted_cost(cost, norms_sq, n_slots, k)
        for local, traj in enumerate(ids):
            adj[t + 1, :, col_of[int(traj)]] += a[:, local]
            act[t + 1, col_of[int(traj)]] += 1.0

    total_node = None
    total_value = 0.0
    for t in range(n_frames):
        lo = max(0, t - half)
        hi = min(n_frames - 1, t + half)
        win_adj = adj[hi + 1] - adj[lo]
        win_act = act[hi + 1] - act[lo]
        ids_t, doas_t = gt_seq[t]
        ids_t = np.asarray(ids_t, dtype=np.int64).reshape(-1)
        cols = np.flatnonzero(win_act > 0.0)
        if cols.size > n_slots:
            # Keep every trajectory active right now, then the most active
            # in the window; drop the rest (cannot all be assigned anyway).
            now = np.array([col_of[int(i)] for i in ids_t], dtype=np.int64)
            others = np.setdiff1d(cols, now)
            order = np.lexsort((others, -win_act[others]))
            cols = np.concatenate([now, others[order[: n_slots - now.size]]])
            cols.sort()
        if cols.size:
            picked = backend.lap_solve(np.ascontiguousarray(win_adj[:, cols].T))
            slot_of = {int(all_ids[cols[j]]): int(picked[j]) for j in range(cols.size)}
            slots_t = np.array([slot_of[int(i)] for i in ids_t], dtype=np.int64)
        else:
            slots_t = np.zeros(0, dtype=np.int64)

        if on_tape:
            node = _frame_loss_node(pred_seq[t], doas_t, slots_t)
            total_node = node if total_node is None else T.add(total_node, node)
        else:
            k = ids_t.size
            norms_sq = (data_seq[t].astype(np.float64) ** 2).sum(axis=1)
            value = 0.0
            if k:
                value += costs[t][slots_t, np.arange(k)].sum() / k
            if n_slots > k:
                value += (norms_sq.sum() - norms_sq[slots_t].sum()) / (n_slots - k)
            total_value += value

    if on_tape:
        return T.affine(total_node, 1.0 / n_frames)
    return total_value / n_frames
