"""Training: analytic truncated backprop, normalized SGD, schedules.

The backward pass is written out by hand for each cell kind and mirrors
the masked routing of `stack.forward_window` exactly: gate-route inputs
pick up the gate masks, the content route picks up the between mask,
and the recurrent tanh path is unmasked. Gradients are averaged over
batch x steps, and the loss is the mean next-token negative
log-likelihood in nats.

The optimizer update is w <- w - lr * g / ||g||, with one global L2
norm over every tensor, so each applied step has L2 length exactly lr.
A window whose gradient norm is zero is skipped and logged; nothing is
clipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericsError, ValidationError
from .numkit import Rng, global_l2norm
from .stack import (
    ModelStack,
    StackState,
    _mask_at,
    forward_window,
    init_stack,
    make_masks,
    zero_state,
)

log = logging.getLogger("cfnlab.training")

SCHEDULES = ("div3", "adaptive")


def zero_grads(stack: ModelStack) -> dict:
    return {name: np.zeros_like(t) for name, t in stack.named_tensors()}


def _loss_and_dlogits(logits: np.ndarray, targets: np.ndarray):
    """Mean NLL in nats plus d(loss)/d(logits) for batch x steps x vocab."""
    B, T, V = logits.shape
    m = logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits - m)
    Z = ex.sum(axis=-1, keepdims=True)
    log_z = np.log(Z)[..., 0] + m[..., 0]
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    loss = float((log_z - picked).mean())
    if not np.isfinite(loss):
        raise NumericsError("non-finite loss")
    dlogits = ex / Z
    np.subtract.at(dlogits.reshape(B * T, V),
                   (np.arange(B * T), targets.ravel()), 1.0)
    dlogits /= B * T
    return loss, dlogits


def window_loss(stack: ModelStack, state: StackState, x: np.ndarray,
                y: np.ndarray, masks=None):
    """Forward-only mean NLL of one window; the finite-difference twin
    of bptt_window."""
    logits, _, new_state = forward_window(stack, state, x, masks)
    loss, _ = _loss_and_dlogits(logits, np.asarray(y))
    return loss, new_state


def _bw_cfn(p, cache, mp, mqr, mqi, dh, grads, pre):
    h_prev, x_raw, theta, eta, u, w = cache
    h_gate = h_prev if mqr is None else h_prev * mqr
    x_w = x_raw if mp is None else x_raw * mp
    x_gate = x_raw if mqi is None else x_raw * mqi
    da_t = dh * u * theta * (1.0 - theta)
    da_e = dh * w * eta * (1.0 - eta)
    dwpre = dh * eta * (1.0 - w * w)
    grads[pre + "U_theta"] += da_t.T @ h_gate
    grads[pre + "V_theta"] += da_t.T @ x_gate
    grads[pre + "b_theta"] += da_t.sum(axis=0)
    grads[pre + "U_eta"] += da_e.T @ h_gate
    grads[pre + "V_eta"] += da_e.T @ x_gate
    grads[pre + "b_eta"] += da_e.sum(axis=0)
    grads[pre + "W"] += dwpre.T @ x_w
    back_gate = da_t @ p.U_theta + da_e @ p.U_eta
    dh_prev = dh * theta * (1.0 - u * u)
    dh_prev += back_gate if mqr is None else back_gate * mqr
    dx_w = dwpre @ p.W
    dx = dx_w if mp is None else dx_w * mp
    dx_gate = da_t @ p.V_theta + da_e @ p.V_eta
    dx += dx_gate if mqi is None else dx_gate * mqi
    return dh_prev, dx


def _bw_lstm(p, cache, mp, mqr, mqi, dh, dc_in, grads, pre):
    h_prev, c_prev, x_raw, i, f, o, g, tc = cache
    h_gate = h_prev if mqr is None else h_prev * mqr
    x_w = x_raw if mp is None else x_raw * mp
    x_gate = x_raw if mqi is None else x_raw * mqi
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    da_i = dc * g * i * (1.0 - i)
    da_f = dc * c_prev * f * (1.0 - f)
    da_o = do * o * (1.0 - o)
    da_g = dc * i * (1.0 - g * g)
    grads[pre + "W_i"] += da_i.T @ h_gate
    grads[pre + "V_i"] += da_i.T @ x_gate
    grads[pre + "b_i"] += da_i.sum(axis=0)
    grads[pre + "W_f"] += da_f.T @ h_gate
    grads[pre + "V_f"] += da_f.T @ x_gate
    grads[pre + "b_f"] += da_f.sum(axis=0)
    grads[pre + "W_o"] += da_o.T @ h_gate
    grads[pre + "V_o"] += da_o.T @ x_gate
    grads[pre + "b_o"] += da_o.sum(axis=0)
    grads[pre + "W_g"] += da_g.T @ h_prev
    grads[pre + "V_g"] += da_g.T @ x_w
    grads[pre + "b_g"] += da_g.sum(axis=0)
    back_gate = da_i @ p.W_i + da_f @ p.W_f + da_o @ p.W_o
    dh_prev = da_g @ p.W_g
    dh_prev += back_gate if mqr is None else back_gate * mqr
    dx_g = da_g @ p.V_g
    dx = dx_g if mp is None else dx_g * mp
    dx_gate = da_i @ p.V_i + da_f @ p.V_f + da_o @ p.V_o
    dx += dx_gate if mqi is None else dx_gate * mqi
    dc_prev = dc * f
    return dh_prev, dx, dc_prev


def _bw_gru(p, cache, mp, mqr, mqi, dh, grads, pre):
    h_prev, x_raw, z, r, m, rh = cache
    h_gate = h_prev if mqr is None else h_prev * mqr
    x_w = x_raw if mp is None else x_raw * mp
    x_gate = x_raw if mqi is None else x_raw * mqi
    da_z = dh * (m - h_prev) * z * (1.0 - z)
    da_m = dh * z * (1.0 - m * m)
    drh = da_m @ p.U
    da_r = drh * h_prev * r * (1.0 - r)
    grads[pre + "U"] += da_m.T @ rh
    grads[pre + "V_u"] += da_m.T @ x_w
    grads[pre + "W_z"] += da_z.T @ h_gate
    grads[pre + "V_z"] += da_z.T @ x_gate
    grads[pre + "b_z"] += da_z.sum(axis=0)
    grads[pre + "W_r"] += da_r.T @ h_gate
    grads[pre + "V_r"] += da_r.T @ x_gate
    grads[pre + "b_r"] += da_r.sum(axis=0)
    back_gate = da_z @ p.W_z + da_r @ p.W_r
    dh_prev = dh * (1.0 - z) + drh * r
    dh_prev += back_gate if mqr is None else back_gate * mqr
    dx_m = da_m @ p.V_u
    dx = dx_m if mp is None else dx_m * mp
    dx_gate = da_z @ p.V_z + da_r @ p.V_r
    dx += dx_gate if mqi is None else dx_gate * mqi
    return dh_prev, dx


def bptt_window(stack: ModelStack, state: StackState, x: np.ndarray,
                y: np.ndarray, masks=None):
    """One truncated-backprop window.

    Returns (mean_nll, grads, new_state). Gradients stop at the window
    boundary: the incoming state is treated as a constant.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if y.shape != x.shape:
        raise ValidationError(f"targets shape {y.shape} != inputs {x.shape}")
    logits, cache, new_state = forward_window(stack, state, x, masks)
    loss, dlogits = _loss_and_dlogits(logits, y)
    B, T = x.shape
    n = stack.hidden
    L = stack.depth
    grads = zero_grads(stack)

    # output projection; the top between-mask scales the content route
    top_masked = np.empty_like(cache.top)
    for t in range(T):
        mk = _mask_at(masks, t)
        mb = None if mk is None else mk.between[L]
        top_masked[:, t, :] = (cache.top[:, t, :] if mb is None
                               else cache.top[:, t, :] * mb)
    dl2 = dlogits.reshape(B * T, stack.vocab)
    grads["W_out"] += dl2.T @ top_masked.reshape(B * T, n)
    grads["b_out"] += dl2.sum(axis=0)
    d_top = dlogits @ stack.W_out          # B x T x n

    dh_next = [np.zeros((B, n)) for _ in range(L)]
    dc_next = [np.zeros((B, n)) for _ in range(L)]
    d_x0 = np.empty((B, T, n))
    for t in reversed(range(T)):
        mk = _mask_at(masks, t)
        mb_top = None if mk is None else mk.between[L]
        dx_above = (d_top[:, t, :] if mb_top is None
                    else d_top[:, t, :] * mb_top)
        for li in reversed(range(L)):
            p = stack.layers[li]
            mp = None if mk is None else mk.between[li]
            mqr = None if mk is None else mk.gate_rec[li]
            mqi = None if mk is None else mk.gate_in[li]
            dh = dh_next[li] + dx_above
            c = cache.steps[t][li]
            pre = f"layer{li}."
            if stack.kind == "cfn":
                dh_prev, dx = _bw_cfn(p, c, mp, mqr, mqi, dh, grads, pre)
            elif stack.kind == "lstm":
                dh_prev, dx, dc_prev = _bw_lstm(p, c, mp, mqr, mqi, dh,
                                                dc_next[li], grads, pre)
                dc_next[li] = dc_prev
            else:
                dh_prev, dx = _bw_gru(p, c, mp, mqr, mqi, dh, grads, pre)
            dh_next[li] = dh_prev
            dx_above = dx
        d_x0[:, t, :] = dx_above
    np.add.at(grads["embedding"], x.ravel(), d_x0.reshape(B * T, n))
    return loss, grads, new_state


def normalized_sgd_update(stack: ModelStack, grads: dict, lr: float) -> float:
    """Apply w <- w - lr * g / ||g|| in place.

    Returns the global gradient norm; 0.0 means the update was skipped
    because the gradient vanished.
    """
    if lr <= 0.0:
        raise ValidationError(f"lr must be positive, got {lr}")
    ordered = [grads[name] for name, _ in stack.named_tensors()]
    norm = global_l2norm(ordered)
    if norm == 0.0:
        log.warning("zero gradient norm; update skipped")
        return 0.0
    scale = lr / norm
    for name, t in stack.named_tensors():
        t -= scale * grads[name]
    return norm


def div3_lr(lr0: float, epoch: int) -> float:
    """Epoch e (0-based) trains at lr0 / 3^e."""
    return lr0 / (3.0 ** epoch)


class AdaptiveLr:
    """Divide lr by 1.1 whenever validation perplexity fails to improve
    on 0.99 times the best seen so far."""

    def __init__(self, lr0: float):
        if lr0 <= 0.0:
            raise ValidationError(f"lr0 must be positive, got {lr0}")
        self.lr = lr0
        self.best: Optional[float] = None

    def update(self, val_perp: float) -> float:
        if self.best is not None and val_perp > 0.99 * self.best:
            self.lr /= 1.1
        if self.best is None or val_perp < self.best:
            self.best = val_perp
        return self.lr


def evaluate(stack: ModelStack, ids: np.ndarray, chunk: int = 512) -> float:
    """Per-token perplexity exp(mean NLL) over one unbatched stream,
    dropout off, state carried across chunks from zero."""
    ids = np.asarray(ids)
    if ids.ndim != 1 or ids.size < 2:
        raise ValidationError("evaluation stream needs at least two tokens")
    state = zero_state(stack, batch=1)
    total = 0.0
    count = 0
    x_all, y_all = ids[:-1], ids[1:]
    for t0 in range(0, x_all.size, chunk):
        x = x_all[t0:t0 + chunk][None, :]
        y = y_all[t0:t0 + chunk][None, :]
        logits, _, state = forward_window(stack, state, x)
        m = logits.max(axis=-1, keepdims=True)
        log_z = np.log(np.exp(logits - m).sum(axis=-1)) + m[..., 0]
        picked = np.take_along_axis(logits, y[..., None], axis=-1)[..., 0]
        total += float((log_z - picked).sum())
        count += x.shape[1]
    return float(np.exp(total / count))


def unigram_perplexity(train_ids: np.ndarray, eval_ids: np.ndarray,
                       vocab: int) -> float:
    """Perplexity of the add-one-smoothed unigram distribution fit on
    train_ids, measured on eval_ids."""
    train_ids = np.asarray(train_ids)
    eval_ids = np.asarray(eval_ids)
    counts = np.bincount(train_ids, minlength=vocab).astype(float)
    probs = (counts + 1.0) / (counts.sum() + vocab)
    nll = -float(np.log(probs[eval_ids]).mean())
    return float(np.exp(nll))


def stream_batches(ids: np.ndarray, batch_size: int) -> np.ndarray:
    """Cut one token stream into batch_size contiguous streams,
    dropping the remainder."""
    ids = np.asarray(ids)
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    per = ids.size // batch_size
    if per < 2:
        raise ValidationError("stream too short for this batch size")
    return ids[: batch_size * per].reshape(batch_size, per)


@dataclass
class TrainRow:
    """One training-log record, emitted once per epoch."""

    epoch: int
    step: int
    lr: float
    train_nll: float
    val_perp: float


def train(stack: ModelStack, train_ids: np.ndarray, val_ids: np.ndarray, *,
          epochs: int, lr0: float, schedule: str = "div3", unroll: int = 35,
          batch_size: int = 20, between_rate: float = 0.0,
          gate_rate: float = 0.0, rng: Optional[Rng] = None,
          resample_masks: bool = False,
          on_epoch: Optional[Callable] = None) -> list:
    """Train in place and return one TrainRow per epoch.

    Windows advance by `unroll` through batch_size contiguous streams;
    the recurrent state carries across windows and resets to zero at
    each epoch boundary. Dropout masks are redrawn per window, or per
    step when resample_masks is set.
    """
    if schedule not in SCHEDULES:
        raise ValidationError(f"unknown schedule {schedule!r}")
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    if unroll < 1:
        raise ValidationError(f"unroll must be >= 1, got {unroll}")
    use_drop = between_rate > 0.0 or gate_rate > 0.0
    if use_drop and rng is None:
        raise ValidationError("dropout rates need an rng")

    streams = stream_batches(train_ids, batch_size)
    M = streams.shape[1]
    if M < unroll + 1:
        raise ValidationError(
            f"streams of {M} tokens cannot fit one {unroll}-step window")

    controller = AdaptiveLr(lr0) if schedule == "adaptive" else None
    rows = []
    step = 0
    for epoch in range(epochs):
        lr = div3_lr(lr0, epoch) if schedule == "div3" else controller.lr
        state = zero_state(stack, batch=batch_size)
        nll_sum = 0.0
        windows = 0
        for t0 in range(0, M - unroll, unroll):
            x = streams[:, t0:t0 + unroll]
            y = streams[:, t0 + 1:t0 + unroll + 1]
            if not use_drop:
                masks = None
            elif resample_masks:
                masks = [make_masks(stack, rng, batch_size, between_rate,
                                    gate_rate) for _ in range(unroll)]
            else:
                masks = make_masks(stack, rng, batch_size, between_rate,
                                   gate_rate)
            loss, grads, state = bptt_window(stack, state, x, y, masks)
            if normalized_sgd_update(stack, grads, lr) > 0.0:
                step += 1
            nll_sum += loss
            windows += 1
        val_perp = evaluate(stack, val_ids)
        row = TrainRow(epoch=epoch, step=step, lr=lr,
                       train_nll=nll_sum / max(windows, 1),
                       val_perp=val_perp)
        rows.append(row)
        if controller is not None:
            controller.update(val_perp)
        if on_epoch is not None:
            on_epoch(row)
    return rows


# Below this gradient norm the comparison is absolute rather than
# relative: finite differences of an O(1) loss carry ~1e-11 of rounding
# noise, so norms near 1e-5 cannot be certified to 1e-6 relatively.
# The floor makes the 1e-6 tolerance mean "absolute error under 1e-10"
# there, still five decades below any systematic backward bug.
GRAD_NORM_FLOOR = 1e-4


def finite_difference_grads(stack: ModelStack, state: StackState,
                            x: np.ndarray, y: np.ndarray, masks=None,
                            eps: float = 1e-3) -> dict:
    """Five-point central differences of the window loss for every
    parameter coordinate; truncation error is O(eps^4)."""
    fds = {}
    for name, t in stack.named_tensors():
        flat = t.reshape(-1)
        fd = np.empty(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            vals = []
            for delta in (2 * eps, eps, -eps, -2 * eps):
                flat[idx] = orig + delta
                loss, _ = window_loss(stack, state, x, y, masks)
                vals.append(loss)
            flat[idx] = orig
            fd[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) \
                / (12 * eps)
        fds[name] = fd.reshape(t.shape)
    return fds


def gradcheck_stack(kind: str, seed: int, *, depth: int = 2, hidden: int = 4,
                    vocab: int = 11, unroll: int = 5, batch: int = 2,
                    eps: float = 1e-3, between_rate: float = 0.0,
                    gate_rate: float = 0.0, corrupt: bool = False):
    """Compare the analytic window gradient against five-point central
    finite differences, coordinate by coordinate.

    Returns (max_rel_err, per_tensor) where each tensor's error is
    ||g_a - g_fd|| / max(||g_a||, ||g_fd||, GRAD_NORM_FLOOR). With
    corrupt=True the analytic gradient is deliberately damaged first,
    as a negative control: the check must then fail.
    """
    rng = Rng(seed)
    stack = init_stack(kind, depth, hidden, vocab, rng)
    x = rng.integers(0, vocab, batch * unroll).reshape(batch, unroll)
    y = rng.integers(0, vocab, batch * unroll).reshape(batch, unroll)
    state = zero_state(stack, batch=batch)
    for s in state.layers:
        if hasattr(s, "h"):
            s.h[...] = rng.uniform(-0.5, 0.5, batch * hidden).reshape(
                batch, hidden)
            s.c[...] = rng.uniform(-0.5, 0.5, batch * hidden).reshape(
                batch, hidden)
        else:
            s[...] = rng.uniform(-0.5, 0.5, batch * hidden).reshape(
                batch, hidden)
    use_drop = between_rate > 0.0 or gate_rate > 0.0
    masks = (make_masks(stack, rng, batch, between_rate, gate_rate)
             if use_drop else None)

    _, grads, _ = bptt_window(stack, state, x, y, masks)
    if corrupt:
        grads["W_out"] = grads["W_out"] * 1.001 + 1e-8

    fds = finite_difference_grads(stack, state, x, y, masks, eps)
    per_tensor = {}
    for name, _ in stack.named_tensors():
        ga = grads[name].reshape(-1)
        fd = fds[name].reshape(-1)
        denom = max(float(np.linalg.norm(ga)), float(np.linalg.norm(fd)),
                    GRAD_NORM_FLOOR)
        per_tensor[name] = float(np.linalg.norm(ga - fd)) / denom
    return max(per_tensor.values()), per_tensor
