"""Hot loops: recurrent sequence forward/backward and skip-gram SGD.

Every kernel is written once as plain Python over numpy arrays. When numba is
importable and ``MLSA_JIT`` is not ``0``, the public names point at
``numba.njit`` compilations of the same source; otherwise they are the plain
functions. Both variants stay importable (``*_py`` / ``*_jit``) for parity
tests and benchmarks.
"""

import math
import os

import numpy as np

GRU = 0
LSTM = 1

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def jit_enabled() -> bool:
    return numba is not None and os.environ.get("MLSA_JIT", "1") != "0"


def rnn_forward_py(xw, U, offsets, cell, reverse):
    """Run a GRU/LSTM over each segment ``offsets[k]:offsets[k+1]`` of rows.

    ``xw`` already holds ``X @ W + b`` (N x G*d). Gate layout along columns:
    GRU ``[z, r, n]``, LSTM ``[i, f, g, o]``. Hidden and cell states start at
    zero for every segment. Returns the hidden sequence and what the backward
    pass needs.
    """
    N = xw.shape[0]
    d = U.shape[0]
    H = np.zeros((N, d))
    gates = np.zeros(xw.shape)
    h_prev = np.zeros((N, d))
    c_prev = np.zeros((N, d))
    C = np.zeros((N, d))
    U_zr = np.ascontiguousarray(U[:, :2 * d])
    U_n = np.ascontiguousarray(U[:, 2 * d:])
    for seg in range(offsets.shape[0] - 1):
        start = offsets[seg]
        stop = offsets[seg + 1]
        n = stop - start
        h = np.zeros(d)
        c = np.zeros(d)
        for step in range(n):
            t = stop - 1 - step if reverse else start + step
            h_prev[t] = h
            c_prev[t] = c
            if cell == GRU:
                a_zr = xw[t, :2 * d] + np.dot(h, U_zr)
                z = 0.5 * (1.0 + np.tanh(0.5 * (a_zr[:d])))
                r = 0.5 * (1.0 + np.tanh(0.5 * (a_zr[d:])))
                cand = np.tanh(xw[t, 2 * d:] + np.dot(r * h, U_n))
                h = (1.0 - z) * h + z * cand
                gates[t, :d] = z
                gates[t, d:2 * d] = r
                gates[t, 2 * d:] = cand
            else:
                a = xw[t] + np.dot(h, U)
                i = 0.5 * (1.0 + np.tanh(0.5 * (a[:d])))
                f = 0.5 * (1.0 + np.tanh(0.5 * (a[d:2 * d])))
                g = np.tanh(a[2 * d:3 * d])
                o = 0.5 * (1.0 + np.tanh(0.5 * (a[3 * d:])))
                c = f * c + i * g
                h = o * np.tanh(c)
                gates[t, :d] = i
                gates[t, d:2 * d] = f
                gates[t, 2 * d:3 * d] = g
                gates[t, 3 * d:] = o
                C[t] = c
            H[t] = h
    return H, gates, h_prev, c_prev, C


def rnn_backward_py(dH, U, gates, h_prev, c_prev, C, offsets, cell, reverse):
    """Backpropagation through time for :func:`rnn_forward_py`.

    Returns ``(d xw, d U)``; the caller maps ``d xw`` onto X, W and b.
    """
    N = dH.shape[0]
    d = U.shape[0]
    dxw = np.zeros(gates.shape)
    dU = np.zeros(U.shape)
    U_z = np.ascontiguousarray(U[:, :d])
    U_r = np.ascontiguousarray(U[:, d:2 * d])
    U_n = np.ascontiguousarray(U[:, 2 * d:])
    for seg in range(offsets.shape[0] - 1):
        start = offsets[seg]
        stop = offsets[seg + 1]
        n = stop - start
        dh_next = np.zeros(d)
        dc_next = np.zeros(d)
        for step in range(n - 1, -1, -1):
            t = stop - 1 - step if reverse else start + step
            dh = dH[t] + dh_next
            hp = h_prev[t]
            if cell == GRU:
                z = gates[t, :d]
                r = gates[t, d:2 * d]
                cand = gates[t, 2 * d:]
                dz = dh * (cand - hp)
                dcand = dh * z
                dhp = dh * (1.0 - z)
                da_n = dcand * (1.0 - cand * cand)
                drh = np.dot(U_n, da_n)
                dr = drh * hp
                dhp += drh * r
                da_z = dz * z * (1.0 - z)
                da_r = dr * r * (1.0 - r)
                dhp += np.dot(U_z, da_z) + np.dot(U_r, da_r)
                dxw[t, :d] = da_z
                dxw[t, d:2 * d] = da_r
                dxw[t, 2 * d:] = da_n
                dh_next = dhp
            else:
                i = gates[t, :d]
                f = gates[t, d:2 * d]
                g = gates[t, 2 * d:3 * d]
                o = gates[t, 3 * d:]
                tc = np.tanh(C[t])
                do = dh * tc
                dc = dc_next + dh * o * (1.0 - tc * tc)
                di = dc * g
                dg = dc * i
                df = dc * c_prev[t]
                dc_next = dc * f
                da = np.empty(4 * d)
                da[:d] = di * i * (1.0 - i)
                da[d:2 * d] = df * f * (1.0 - f)
                da[2 * d:3 * d] = dg * (1.0 - g * g)
                da[3 * d:] = do * o * (1.0 - o)
                dh_next = np.dot(U, da)
                dxw[t] = da
    # dU as one product per gate block instead of per-step outer products
    hT = np.ascontiguousarray(h_prev.T)
    if cell == GRU:
        dU[:, :2 * d] = np.dot(hT, np.ascontiguousarray(dxw[:, :2 * d]))
        rhT = np.ascontiguousarray((gates[:, d:2 * d] * h_prev).T)
        dU[:, 2 * d:] = np.dot(rhT, np.ascontiguousarray(dxw[:, 2 * d:]))
    else:
        dU[:, :] = np.dot(hT, dxw)
    return dxw, dU


def sgns_update_py(w_in, w_out, centers, contexts, negatives, lrs):
    """One pass of skip-gram negative-sampling SGD, in place.

    Returns the summed negative log-likelihood of the visited pairs,
    evaluated before each pair's update.
    """
    d = w_in.shape[1]
    k = negatives.shape[1]
    loss = 0.0
    for p in range(centers.shape[0]):
        c = centers[p]
        lr = lrs[p]
        v = w_in[c].copy()
        grad_v = np.zeros(d)
        for j in range(k + 1):
            if j == 0:
                target = contexts[p]
                label = 1.0
            else:
                target = negatives[p, j - 1]
                label = 0.0
            score = np.dot(v, w_out[target])
            if label > 0:
                loss += math.log1p(math.exp(-score)) if score > -30 else -score
            else:
                loss += math.log1p(math.exp(score)) if score < 30 else score
            sig = 0.5 * (1.0 + math.tanh(0.5 * score))
            gcoef = (label - sig) * lr
            grad_v += gcoef * w_out[target]
            w_out[target] += gcoef * v
        w_in[c] += grad_v
    return loss


def sgns_loss_py(w_in, w_out, centers, contexts, negatives):
    total = 0.0
    for p in range(centers.shape[0]):
        v = w_in[centers[p]]
        s = np.dot(v, w_out[contexts[p]])
        total += math.log1p(math.exp(-s)) if s > -30 else -s
        for j in range(negatives.shape[1]):
            s = np.dot(v, w_out[negatives[p, j]])
            total += math.log1p(math.exp(s)) if s < 30 else s
    return total


if numba is not None:
    rnn_forward_jit = numba.njit(cache=True)(rnn_forward_py)
    rnn_backward_jit = numba.njit(cache=True)(rnn_backward_py)
    sgns_update_jit = numba.njit(cache=True)(sgns_update_py)
    sgns_loss_jit = numba.njit(cache=True)(sgns_loss_py)
else:  # pragma: no cover
    rnn_forward_jit = rnn_forward_py
    rnn_backward_jit = rnn_backward_py
    sgns_update_jit = sgns_update_py
    sgns_loss_jit = sgns_loss_py


def rnn_forward(xw, U, offsets, cell, reverse):
    fn = rnn_forward_jit if jit_enabled() else rnn_forward_py
    return fn(np.ascontiguousarray(xw), np.ascontiguousarray(U), np.asarray(offsets, dtype=np.int64),
              int(cell), bool(reverse))


def rnn_backward(dH, U, gates, h_prev, c_prev, C, offsets, cell, reverse):
    fn = rnn_backward_jit if jit_enabled() else rnn_backward_py
    return fn(np.ascontiguousarray(dH), np.ascontiguousarray(U), gates, h_prev, c_prev, C,
              np.asarray(offsets, dtype=np.int64), int(cell), bool(reverse))


def sgns_update(w_in, w_out, centers, contexts, negatives, lrs):
    fn = sgns_update_jit if jit_enabled() else sgns_update_py
    return fn(w_in, w_out, centers, contexts, negatives, lrs)


def sgns_loss(w_in, w_out, centers, contexts, negatives):
    fn = sgns_loss_jit if jit_enabled() else sgns_loss_py
    return fn(w_in, w_out, centers, contexts, negatives)
