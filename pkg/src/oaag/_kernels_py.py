"""Reference (numpy / pure-Python) implementations of the hot kernels.

These mirror ``oaag._kernels`` exactly in signature and semantics and are
used whenever the compiled extension is unavailable.
"""
import numpy as np


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_forward(xw, wh, h0, c0):
    """Run the LSTM recurrence over precomputed input projections.

    Args:
      xw: (L, 4n) array, ``x_t @ Wx + b`` for every step, gates ordered i, f, g, o.
      wh: (n, 4n) recurrent weights.
      h0, c0: (n,) initial hidden and cell states.

    Returns:
      H, C: (L, n) hidden and cell states after each step.
      G: (L, 4n) activated gates, cached for the backward pass.
    """
    L, four_n = xw.shape
    n = four_n // 4
    H = np.empty((L, n), dtype=xw.dtype)
    C = np.empty((L, n), dtype=xw.dtype)
    G = np.empty((L, four_n), dtype=xw.dtype)
    h, c = h0, c0
    for t in range(L):
        z = xw[t] + h @ wh
        g = np.empty_like(z)
        g[:2 * n] = _sigmoid(z[:2 * n])
        g[2 * n:3 * n] = np.tanh(z[2 * n:3 * n])
        g[3 * n:] = _sigmoid(z[3 * n:])
        c = g[n:2 * n] * c + g[:n] * g[2 * n:3 * n]
        h = g[3 * n:] * np.tanh(c)
        H[t], C[t], G[t] = h, c, g
    return H, C, G


def lstm_backward(dH, wh, h0, c0, H, C, G):
    """Backpropagate through :func:`lstm_forward`.

    Returns ``(dxw, dwh, dh0, dc0)`` where ``dxw`` is the gradient with respect
    to the precomputed input projections.
    """
    L, n = dH.shape
    dxw = np.empty((L, 4 * n), dtype=dH.dtype)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros(n, dtype=dH.dtype)
    dc_next = np.zeros(n, dtype=dH.dtype)
    for t in range(L - 1, -1, -1):
        g = G[t]
        i, f, gg, o = g[:n], g[n:2 * n], g[2 * n:3 * n], g[3 * n:]
        h_prev = H[t - 1] if t > 0 else h0
        c_prev = C[t - 1] if t > 0 else c0
        tc = np.tanh(C[t])
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            dh * tc * o * (1.0 - o),
        ])
        dxw[t] = dz
        dwh += np.outer(h_prev, dz)
        dh_next = wh @ dz
        dc_next = dc * f
    return dxw, dwh, dh_next, dc_next


def lcs_length(a, b):
    """Length of the longest common subsequence of two integer sequences."""
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]
