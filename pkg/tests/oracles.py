"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_direct(x, k, b, stride):
    """Direct-loop 'same' cross-correlation, (H, W, Cin) -> (Ho, Wo, Cout)."""
    h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    sh, sw = stride
    ho, wo = math.ceil(h / sh), math.ceil(w / sw)
    pad_h = max((ho - 1) * sh + kh - h, 0)
    pad_w = max((wo - 1) * sw + kw - w, 0)
    top, left = pad_h // 2, pad_w // 2
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                acc = b[co]
                for di in range(kh):
                    for dj in range(kw):
                        r, c = i * sh + di - top, j * sw + dj - left
                        if 0 <= r < h and 0 <= c < w:
                            for ci in range(cin):
                                acc += x[r, c, ci] * k[di, dj, ci, co]
                out[i, j, co] = acc
    return out


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm_direct(xs, W, b, hidden):
    """Step-by-step forget-gate LSTM over xs (T, input); W/b keyed by gate."""
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    hs = []
    for x in xs:
        z = np.concatenate([x, h])
        i = _sigmoid(z @ W["i"] + b["i"])
        f = _sigmoid(z @ W["f"] + b["f"])
        o = _sigmoid(z @ W["o"] + b["o"])
        g = np.tanh(z @ W["g"] + b["g"])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    return np.array(hs), c


def windows_brute(n, x, dt):
    """All anchors t whose ego and lead index lists lie inside [0, n)."""
    out = []
    for t in range(n):
        ego = list(range(t - x + 1, t + 1))
        lead = list(range(t + dt, t + dt + x))
        if all(0 <= i < n for i in ego + lead):
            out.append((t, ego, lead))
    return out
