"""Independent reference computations used by the tests (plain loops, no torch)."""

import numpy as np


def naive_causal_conv(x, w, b, stride=1, dilation=1):
    """x: (C_in, T), w: (C_out, C_in, K) -> (C_out, ceil(T / stride))."""
    c_in, t = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((c_in, pad)), x], axis=1)
    n_out = -(-t // stride)
    y = np.zeros((c_out, n_out))
    for o in range(c_out):
        for j in range(n_out):
            acc = b[o]
            for i in range(c_in):
                for m in range(k):
                    acc += w[o, i, m] * xp[i, j * stride + m * dilation]
            y[o, j] = acc
    return y


def naive_transposed_conv(x, w, b, stride):
    """x: (C_in, T), w: (C_in, C_out, K) -> (C_out, T * stride), right overhang trimmed."""
    c_in, t = x.shape
    _, c_out, k = w.shape
    full = np.zeros((c_out, (t - 1) * stride + k))
    for i in range(c_in):
        for j in range(t):
            for o in range(c_out):
                for m in range(k):
                    full[o, j * stride + m] += w[i, o, m] * x[i, j]
    full += b[:, None]
    out = np.zeros((c_out, t * stride))
    n = min(full.shape[1], t * stride)
    out[:, :n] = full[:, :n]
    return out


def loop_fusion(z1, z2, w1, b1, w2, b2):
    """Per-channel loop for U = s1 * Z1 + s2 * Z2 with globally pooled gates."""
    n, t = z1.shape
    s = [sum(z1[c, i] + z2[c, i] for i in range(t)) / t for c in range(n)]
    u = np.zeros((n, t))
    gates = np.zeros((2, n))
    for c in range(n):
        v1 = b1[c] + sum(w1[c, k] * s[k] for k in range(n))
        v2 = b2[c] + sum(w2[c, k] * s[k] for k in range(n))
        m = max(v1, v2)
        e1, e2 = np.exp(v1 - m), np.exp(v2 - m)
        s1, s2 = e1 / (e1 + e2), e2 / (e1 + e2)
        gates[:, c] = s1, s2
        for i in range(t):
            u[c, i] = s1 * z1[c, i] + s2 * z2[c, i]
    return u, gates


def exhaustive_rvq(frames, books):
    """Greedy residual search by exhaustive per-stage distance loops."""
    codes, recon = [], []
    for f in frames:
        r = np.array(f, dtype=np.float64)
        idx, total = [], np.zeros_like(r)
        for book in books:
            dists = [float(np.sum((r - c) ** 2)) for c in book]
            best = int(np.argmin(dists))  # first minimum on ties
            idx.append(best)
            total = total + book[best]
            r = r - book[best]
        codes.append(idx)
        recon.append(total)
    return np.array(codes), np.array(recon)


def bit_by_bit_pack(indices, bits=10):
    """Pack integers MSB-first via a Python string of bits."""
    s = "".join(format(int(v), f"0{bits}b") for v in indices)
    s += "0" * (-len(s) % 8)
    return bytes(int(s[i:i + 8], 2) for i in range(0, len(s), 8))


def finite_difference_grad(f, x, eps=1e-6):
    """Central differences of scalar f over every entry of float64 array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g
