"""Selective state-space scan: naive recurrence and a chunked (blocked) form.

Shapes: ``x (..., L, H, P)``, decay ``a (..., L, H)``, input/output projections
``B, C (..., L, H, N)`` (broadcasting over ``H`` is allowed).  The recurrence is

    h_t = a_t * h_{t-1} + x_t B_t^T        h_t in R^{H x P x N}, h_{-1} = 0
    y_t = h_t C_t

The chunked form splits time into blocks of ``chunk`` steps: inside a block the
output is a masked quadratic form with decay weights ``prod_{k=j+1..i} a_k``;
across blocks only the ``(H, P, N)`` carry state is passed along.
"""
from __future__ import annotations

import numpy as np

DEFAULT_CHUNK = 16


def _broadcast(x, a, B, C=None):
    x = np.asarray(x)
    lead = x.shape[:-2]
    H, P = x.shape[-2:]
    a = np.broadcast_to(a, lead + (H,))
    N = np.shape(B)[-1]
    B = np.broadcast_to(B, lead + (H, N))
    if C is not None:
        C = np.broadcast_to(C, lead + (H, N))
    return x, a, B, C


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite SSD scan parameters")


def ssd_scan_naive(x, a, B, C) -> np.ndarray:
    """Reference step-by-step recurrence."""
    x, a, B, C = _broadcast(x, a, B, C)
    _check_finite(x, a, B, C)
    L = x.shape[-3]
    h = np.zeros(x.shape[:-3] + x.shape[-2:] + (B.shape[-1],), dtype=np.result_type(x, B))
    y = np.empty(x.shape, dtype=h.dtype)
    for t in range(L):
        h = a[..., t, :, None, None] * h + x[..., t, :, :, None] * B[..., t, :, None, :]
        y[..., t, :, :] = np.einsum("...hpn,...hn->...hp", h, C[..., t, :, :])
    return y


def _decay_matrix(a_c: np.ndarray) -> np.ndarray:
    """``a_c (..., nc, Q, H)`` -> ``Lm (..., nc, H, Q, Q)`` with ``Lm[i, j] = prod_{k=j+1..i} a_k``."""
    a_t = np.moveaxis(a_c, -1, -2)            # (..., nc, H, Q)
    Q = a_t.shape[-1]
    Lm = np.zeros(a_t.shape + (Q,), dtype=a_t.dtype)
    Lm[..., 0, 0] = 1.0
    for i in range(1, Q):
        Lm[..., i, :i] = Lm[..., i - 1, :i] * a_t[..., i, None]
        Lm[..., i, i] = 1.0
    return Lm


def _split_chunks(x, a, B, C, Q):
    L = x.shape[-3]
    nc = -(-L // Q)
    pad = nc * Q - L

    def split(arr, n_trailing, fill):
        if pad:
            widths = [(0, 0)] * arr.ndim
            widths[arr.ndim - n_trailing - 1] = (0, pad)
            arr = np.pad(arr, widths, constant_values=fill)
        shape = arr.shape[: arr.ndim - n_trailing - 1] + (nc, Q) + arr.shape[arr.ndim - n_trailing:]
        return arr.reshape(shape)

    xc = split(x, 2, 0.0)
    ac = split(a, 1, 1.0)
    Bc = split(B, 2, 0.0)
    Cc = split(C, 2, 0.0) if C is not None else None
    return xc, ac, Bc, Cc, L


def ssd_scan_chunked(x, a, B, C, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Blocked evaluation of the same recurrence as :func:`ssd_scan_naive`."""
    x, a, B, C = _broadcast(x, a, B, C)
    _check_finite(x, a, B, C)
    xc, ac, Bc, Cc, L = _split_chunks(x, a, B, C, chunk)
    Lm = _decay_matrix(ac)                                            # (..., nc, H, Q, Q)
    scores = np.einsum("...cihn,...cjhn->...chij", Cc, Bc) * Lm
    y = np.einsum("...chij,...cjhp->...cihp", scores, xc)
    # state contributed by each chunk, decayed to its last step
    S = np.einsum("...chj,...cjhp,...cjhn->...chpn", Lm[..., -1, :], xc, Bc, optimize=True)
    total = Lm[..., -1, 0] * np.moveaxis(ac, -1, -2)[..., 0]          # (..., nc, H)
    decay_in = Lm[..., :, 0] * np.moveaxis(ac, -1, -2)[..., :1]        # (..., nc, H, Q)
    nc = xc.shape[-4]
    carry = np.zeros(S.shape[:-4] + S.shape[-3:], dtype=S.dtype)
    h_in = np.empty_like(S)
    for c in range(nc):
        h_in[..., c, :, :, :] = carry
        carry = total[..., c, :, None, None] * carry + S[..., c, :, :, :]
    y_inter = np.einsum("...cihn,...chpn->...cihp", Cc, h_in)
    y = y + y_inter * np.moveaxis(decay_in, -1, -2)[..., None]
    y = y.reshape(y.shape[:-4] + (-1,) + y.shape[-2:])
    return y[..., :L, :, :]


def ssd_states(x, a, B, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Every hidden state ``h_t``, shape ``(..., L, H, P, N)``.

    All states have to be materialised anyway, so a sequential sweep over time
    (vectorised over the other axes) beats the blocked form here.  ``chunk`` is
    accepted for signature symmetry with the scan.
    """
    x, a, B, _ = _broadcast(x, a, B)
    L = x.shape[-3]
    h = np.empty(x.shape + (B.shape[-1],), dtype=np.result_type(x, a, B))
    cur = np.zeros(h.shape[:-4] + h.shape[-3:], dtype=h.dtype)
    for t in range(L):
        cur = a[..., t, :, None, None] * cur + x[..., t, :, :, None] * B[..., t, :, None, :]
        h[..., t, :, :, :] = cur
    return h


def ssd_scan_backward(x, a, B, C, dy, chunk: int = DEFAULT_CHUNK):
    """Gradients of ``sum(dy * y)`` w.r.t. ``(x, a, B, C)`` at their broadcast shapes.

    The adjoint state obeys the time-reversed recurrence
    ``g_t = a_{t+1} g_{t+1} + dy_t C_t^T``, so it is itself a scan.
    """
    x, a, B, C = _broadcast(x, a, B, C)
    h = ssd_states(x, a, B, chunk)
    a_next = np.concatenate([a[..., 1:, :], np.zeros_like(a[..., :1, :])], axis=-2)
    g = np.flip(ssd_states(np.flip(dy, -3), np.flip(a_next, -2), np.flip(C, -3), chunk), -4)
    dx = np.einsum("...lhpn,...lhn->...lhp", g, B)
    dB = np.einsum("...lhpn,...lhp->...lhn", g, x)
    dC = np.einsum("...lhpn,...lhp->...lhn", h, dy)
    h_prev = np.concatenate([np.zeros_like(h[..., :1, :, :, :]), h[..., :-1, :, :, :]], axis=-4)
    da = np.einsum("...lhpn,...lhpn->...lh", g, h_prev)
    return dx, da, dB, dC
