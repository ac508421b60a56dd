import numpy as np


def central_diff(f, inputs, name, h=1e-5):
    """Central finite differences of scalar ``f(inputs)`` w.r.t. ``inputs[name]``."""
    x = np.array(inputs[name], dtype=np.float64)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[i] += h
        minus[i] -= h
        out[i] = (f({**inputs, name: plus}) - f({**inputs, name: minus})) / (2 * h)
    return out


def max_rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0


def straight_mlp(x, W1, b1, W2, b2):
    """Hand-rolled sigmoid MLP, written independently of the graph engine."""
    n, k = x.shape
    h = np.zeros((n, W1.shape[1]))
    for r in range(n):
        for j in range(W1.shape[1]):
            z = b1[j]
            for i in range(k):
                z += x[r, i] * W1[i, j]
            h[r, j] = 1.0 / (1.0 + np.exp(-z))
    out = np.zeros((n, W2.shape[1]))
    for r in range(n):
        for j in range(W2.shape[1]):
            z = b2[j]
            for i in range(W1.shape[1]):
                z += h[r, i] * W2[i, j]
            out[r, j] = z
    return out
