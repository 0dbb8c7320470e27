"""Hand-derived backward passes, numpy only.

These do not touch the gradient tape. They exist so that the gradient-check
suite can compare two independent derivations (tape and hand-written) against
central finite differences. Parameter dictionaries use the same names as
``Module.named_parameters``.

Every ``*_analytic`` function returns ``(output, backward)`` where
``backward(upstream)`` returns a dict of gradients keyed by parameter name
plus ``"input"``.
"""

from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def linear_analytic(x: np.ndarray, p: Params, prefix: str = ""):
    W, b = p[prefix + "W"], p[prefix + "b"]
    lead = x.shape[:-1]
    x2 = x.reshape(-1, x.shape[-1])
    y = x2 @ W.T + b

    def backward(g):
        g2 = g.reshape(-1, W.shape[0])
        return {
            "input": (g2 @ W).reshape(x.shape),
            prefix + "W": g2.T @ x2,
            prefix + "b": g2.sum(axis=0),
        }

    return y.reshape(lead + (W.shape[0],)), backward


def conv1d_analytic(x: np.ndarray, p: Params, prefix: str = ""):
    """Explicit tap loop; independent of the strided einsum used on the tape."""
    W, b = p[prefix + "W"], p[prefix + "b"]
    cout, cin, k = W.shape
    B, _, L = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((B, cin, L + 2 * pad))
    xp[:, :, pad : pad + L] = x
    y = np.tile(b[None, :, None], (B, 1, L)).astype(np.float64)
    for j in range(k):
        # y[b, o, l] += sum_c W[o, c, j] * xp[b, c, l + j]
        y += np.matmul(W[:, :, j][None], xp[:, :, j : j + L])

    def backward(g):
        gW = np.zeros_like(W)
        gxp = np.zeros_like(xp)
        for j in range(k):
            seg = xp[:, :, j : j + L]
            gW[:, :, j] = np.matmul(g, seg.transpose(0, 2, 1)).sum(axis=0)
            gxp[:, :, j : j + L] += np.matmul(W[:, :, j].T[None], g)
        return {"input": gxp[:, :, pad : pad + L], prefix + "W": gW, prefix + "b": g.sum(axis=(0, 2))}

    return y, backward


def relu_analytic(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0.0), lambda g: {"input": g * mask}


# ---------------------------------------------------------------------------
# recurrent cells: forward over a (B, T, F) sequence in processing order


def _lstm_cell_forward(x, p, pre):
    B, L, _ = x.shape
    H = p[pre + "W_hi"].shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs, cache = [], []
    for t in range(L):
        xt = x[:, t]
        acts = {}
        for g in "ifgo":
            a = xt @ p[pre + f"W_i{g}"].T + p[pre + f"b_i{g}"] + h @ p[pre + f"W_h{g}"].T + p[pre + f"b_h{g}"]
            acts[g] = np.tanh(a) if g == "g" else _sigmoid(a)
        c_new = acts["f"] * c + acts["i"] * acts["g"]
        tc = np.tanh(c_new)
        h_new = acts["o"] * tc
        cache.append((xt, h, c, acts, tc))
        h, c = h_new, c_new
        hs.append(h)
    return np.stack(hs, axis=1), cache


def _lstm_cell_backward(dhs, p, pre, cache):
    grads = {pre + k: np.zeros_like(p[pre + k]) for k in
             [f"{w}{g}" for w in ("W_i", "W_h", "b_i", "b_h") for g in "ifgo"]}
    B, L, H = dhs.shape
    dx = np.zeros((B, L, p[pre + "W_ii"].shape[1]))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        xt, h_prev, c_prev, acts, tc = cache[t]
        i, f, g, o = acts["i"], acts["f"], acts["g"], acts["o"]
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = {
            "i": dc * g * i * (1.0 - i),
            "f": dc * c_prev * f * (1.0 - f),
            "g": dc * i * (1.0 - g * g),
            "o": dh * tc * o * (1.0 - o),
        }
        dh_next = np.zeros((B, H))
        for k, a in da.items():
            grads[pre + f"W_i{k}"] += a.T @ xt
            grads[pre + f"W_h{k}"] += a.T @ h_prev
            grads[pre + f"b_i{k}"] += a.sum(axis=0)
            grads[pre + f"b_h{k}"] += a.sum(axis=0)
            dx[:, t] += a @ p[pre + f"W_i{k}"]
            dh_next += a @ p[pre + f"W_h{k}"]
        dc_next = dc * f
    return dx, grads


def _gru_cell_forward(x, p, pre):
    B, L, _ = x.shape
    H = p[pre + "W_hr"].shape[0]
    h = np.zeros((B, H))
    hs, cache = [], []
    for t in range(L):
        xt = x[:, t]
        r = _sigmoid(xt @ p[pre + "W_ir"].T + p[pre + "b_ir"] + h @ p[pre + "W_hr"].T + p[pre + "b_hr"])
        z = _sigmoid(xt @ p[pre + "W_iz"].T + p[pre + "b_iz"] + h @ p[pre + "W_hz"].T + p[pre + "b_hz"])
        qn = h @ p[pre + "W_hn"].T + p[pre + "b_hn"]
        n = np.tanh(xt @ p[pre + "W_in"].T + p[pre + "b_in"] + r * qn)
        cache.append((xt, h, r, z, qn, n))
        h = (1.0 - z) * n + z * h
        hs.append(h)
    return np.stack(hs, axis=1), cache


def _gru_cell_backward(dhs, p, pre, cache):
    grads = {pre + k: np.zeros_like(p[pre + k]) for k in
             [f"{w}{g}" for w in ("W_i", "W_h", "b_i", "b_h") for g in "rzn"]}
    B, L, H = dhs.shape
    dx = np.zeros((B, L, p[pre + "W_ir"].shape[1]))
    dh_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        xt, h_prev, r, z, qn, n = cache[t]
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1.0 - n * n)
        dqn = dan * r
        dar = dan * qn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        for k, a_in, a_h in (("r", dar, dar), ("z", daz, daz), ("n", dan, dqn)):
            grads[pre + f"W_i{k}"] += a_in.T @ xt
            grads[pre + f"b_i{k}"] += a_in.sum(axis=0)
            grads[pre + f"W_h{k}"] += a_h.T @ h_prev
            grads[pre + f"b_h{k}"] += a_h.sum(axis=0)
        dx[:, t] = dar @ p[pre + "W_ir"] + daz @ p[pre + "W_iz"] + dan @ p[pre + "W_in"]
        dh_next = dh * z + dar @ p[pre + "W_hr"] + daz @ p[pre + "W_hz"] + dqn @ p[pre + "W_hn"]
    return dx, grads


def _elman_cell_forward(x, p, pre):
    B, L, _ = x.shape
    H = p[pre + "W_hh"].shape[0]
    h = np.zeros((B, H))
    hs, cache = [], []
    for t in range(L):
        xt = x[:, t]
        h_new = np.tanh(xt @ p[pre + "W_ih"].T + p[pre + "b_ih"] + h @ p[pre + "W_hh"].T + p[pre + "b_hh"])
        cache.append((xt, h, h_new))
        h = h_new
        hs.append(h)
    return np.stack(hs, axis=1), cache


def _elman_cell_backward(dhs, p, pre, cache):
    grads = {pre + k: np.zeros_like(p[pre + k]) for k in ("W_ih", "W_hh", "b_ih", "b_hh")}
    B, L, H = dhs.shape
    dx = np.zeros((B, L, p[pre + "W_ih"].shape[1]))
    dh_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        xt, h_prev, h = cache[t]
        da = (dhs[:, t] + dh_next) * (1.0 - h * h)
        grads[pre + "W_ih"] += da.T @ xt
        grads[pre + "W_hh"] += da.T @ h_prev
        grads[pre + "b_ih"] += da.sum(axis=0)
        grads[pre + "b_hh"] += da.sum(axis=0)
        dx[:, t] = da @ p[pre + "W_ih"]
        dh_next = da @ p[pre + "W_hh"]
    return dx, grads


_CELLS = {
    "lstm": (_lstm_cell_forward, _lstm_cell_backward),
    "gru": (_gru_cell_forward, _gru_cell_backward),
    "elman": (_elman_cell_forward, _elman_cell_backward),
}


def recurrent_analytic(kind: str, x: np.ndarray, p: Params, num_layers: int = 1,
                       bidirectional: bool = False, return_sequence: bool = False, prefix: str = ""):
    """Stacked (optionally bidirectional) recurrent pass with zero initial states.

    The non-sequence output is the concatenation of each direction's final
    hidden state, i.e. position T-1 of the forward pass and position 0 of the
    reverse pass.
    """
    fwd, bwd = _CELLS[kind]
    dirs = 2 if bidirectional else 1
    seq = x
    layers = []
    for layer in range(num_layers):
        outs, caches = [], []
        for d in range(dirs):
            pre = f"{prefix}cells.{layer * dirs + d}."
            inp = seq[:, ::-1] if d == 1 else seq
            hs, cache = fwd(np.ascontiguousarray(inp), p, pre)
            outs.append(hs[:, ::-1] if d == 1 else hs)
            caches.append((pre, cache))
        layers.append(caches)
        seq = np.concatenate(outs, axis=2)
    H = seq.shape[2] // dirs
    if return_sequence:
        out = seq
    else:
        finals = [seq[:, -1, :H]] + ([seq[:, 0, H:]] if dirs == 2 else [])
        out = np.concatenate(finals, axis=1)

    def backward(g):
        if return_sequence:
            dseq = g.copy()
        else:
            dseq = np.zeros(seq.shape)
            dseq[:, -1, :H] = g[:, :H]
            if dirs == 2:
                dseq[:, 0, H:] = g[:, H:]
        grads = {}
        for caches in reversed(layers):
            dnext = None
            for d, (pre, cache) in enumerate(caches):
                dpart = dseq[:, :, d * H : (d + 1) * H]
                if d == 1:
                    dpart = dpart[:, ::-1]
                dx, gp = bwd(np.ascontiguousarray(dpart), p, pre, cache)
                if d == 1:
                    dx = dx[:, ::-1]
                grads.update(gp)
                dnext = dx if dnext is None else dnext + dx
            dseq = dnext
        grads["input"] = dseq
        return grads

    return out, backward
