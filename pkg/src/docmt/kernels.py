"""Hot numeric kernels: numba-jitted versions with pure-numpy fallbacks.

The jitted path is used when numba imports and DOCMT_NUMBA != "0"; both
implementations are kept callable for the benchmark suite and must agree to
floating-point reassociation tolerance. Matrix products stay in numpy (BLAS).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via DOCMT_NUMBA=0 instead
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("DOCMT_NUMBA", "1") != "0"

_PACK = np.int64(1) << np.int64(32)


def pack_pair(a, b):
    """Pack two non-negative int32 symbol ids into one int64 key."""
    return np.int64(a) * _PACK + np.int64(b)


# ---------------------------------------------------------------------------
# masked softmax over rows with a per-row valid-prefix limit
# ---------------------------------------------------------------------------

def _np_softmax_rows(scores, limits):
    k = scores.shape[1]
    mask = np.arange(k)[None, :] < limits[:, None]
    s = np.where(mask, scores, -np.inf)
    mx = np.max(s, axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(s - mx)
    z = e.sum(axis=1, keepdims=True)
    z[z == 0.0] = 1.0
    return (e / z).astype(scores.dtype, copy=False)


def _np_softmax_rows_backward(probs, dprobs, limits):
    inner = (probs * dprobs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_softmax_rows(scores, limits):
        r, k = scores.shape
        out = np.zeros_like(scores)
        for i in range(r):
            lim = min(limits[i], k)
            if lim <= 0:
                continue
            mx = scores[i, 0]
            for j in range(1, lim):
                if scores[i, j] > mx:
                    mx = scores[i, j]
            z = 0.0
            for j in range(lim):
                v = np.exp(scores[i, j] - mx)
                out[i, j] = v
                z += v
            for j in range(lim):
                out[i, j] /= z
        return out

    @njit(cache=True)
    def _nb_softmax_rows_backward(probs, dprobs, limits):
        r, k = probs.shape
        out = np.zeros_like(probs)
        for i in range(r):
            lim = min(limits[i], k)
            inner = 0.0
            for j in range(lim):
                inner += probs[i, j] * dprobs[i, j]
            for j in range(lim):
                out[i, j] = probs[i, j] * (dprobs[i, j] - inner)
        return out


# ---------------------------------------------------------------------------
# layer normalization over rows
# ---------------------------------------------------------------------------

def _np_layernorm_forward(x, gain, bias, eps):
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gain[None, :] + bias[None, :]
    return y.astype(x.dtype, copy=False), mean, rstd


def _np_layernorm_backward(x, gain, mean, rstd, dy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gain[None, :]
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx.astype(x.dtype, copy=False), dgain, dbias


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_layernorm_forward(x, gain, bias, eps):
        r, d = x.shape
        y = np.empty_like(x)
        mean = np.empty(r, dtype=x.dtype)
        rstd = np.empty(r, dtype=x.dtype)
        for i in range(r):
            m = 0.0
            for j in range(d):
                m += x[i, j]
            m /= d
            v = 0.0
            for j in range(d):
                t = x[i, j] - m
                v += t * t
            v /= d
            rs = 1.0 / np.sqrt(v + eps)
            mean[i] = m
            rstd[i] = rs
            for j in range(d):
                y[i, j] = (x[i, j] - m) * rs * gain[j] + bias[j]
        return y, mean, rstd

    @njit(cache=True)
    def _nb_layernorm_backward(x, gain, mean, rstd, dy):
        r, d = x.shape
        dx = np.empty_like(x)
        dgain = np.zeros(d, dtype=x.dtype)
        dbias = np.zeros(d, dtype=x.dtype)
        for i in range(r):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dxh = dy[i, j] * gain[j]
                m1 += dxh
                m2 += dxh * xhat
                dgain[j] += dy[i, j] * xhat
                dbias[j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dxh = dy[i, j] * gain[j]
                dx[i, j] = (dxh - m1 - xhat * m2) * rstd[i]
        return dx, dgain, dbias


# ---------------------------------------------------------------------------
# embedding gradient scatter-add
# ---------------------------------------------------------------------------

def _np_embedding_grad(ids, dout, demb):
    np.add.at(demb, ids, dout)
    return demb


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_embedding_grad(ids, dout, demb):
        n, d = dout.shape
        for i in range(n):
            row = ids[i]
            for j in range(d):
                demb[row, j] += dout[i, j]
        return demb


# ---------------------------------------------------------------------------
# byte-pair merge machinery (symbols flattened with word offsets)
# ---------------------------------------------------------------------------

def _np_count_pairs(syms, offsets, freqs):
    if syms.shape[0] < 2:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    lengths = np.diff(offsets)
    word_of = np.repeat(np.arange(lengths.shape[0]), lengths)
    valid = word_of[:-1] == word_of[1:]
    left = syms[:-1][valid].astype(np.int64)
    right = syms[1:][valid].astype(np.int64)
    weight = freqs[word_of[:-1][valid]]
    packed = left * _PACK + right
    keys, inv = np.unique(packed, return_inverse=True)
    counts = np.bincount(inv, weights=weight.astype(np.float64))
    return keys, counts.astype(np.int64)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_count_pairs(syms, offsets, freqs):
        table = {}
        nwords = offsets.shape[0] - 1
        for w in range(nwords):
            f = freqs[w]
            for p in range(offsets[w], offsets[w + 1] - 1):
                key = np.int64(syms[p]) * _PACK + np.int64(syms[p + 1])
                if key in table:
                    table[key] += f
                else:
                    table[key] = f
        keys = np.empty(len(table), dtype=np.int64)
        counts = np.empty(len(table), dtype=np.int64)
        i = 0
        for key, cnt in table.items():
            keys[i] = key
            counts[i] = cnt
            i += 1
        order = np.argsort(keys)
        return keys[order], counts[order]


def _np_apply_merge(syms, offsets, left, right, new_id):
    lengths = np.diff(offsets)
    word_of = np.repeat(np.arange(lengths.shape[0]), lengths)
    if syms.shape[0] < 2:
        return syms, offsets
    cand = np.flatnonzero(
        (syms[:-1] == left) & (syms[1:] == right) & (word_of[:-1] == word_of[1:]))
    if cand.shape[0] == 0:
        return syms, offsets
    kept = []
    prev = -2
    for p in cand:  # left-to-right, skip overlaps (aaa with pair aa)
        if p == prev + 1:
            continue
        kept.append(p)
        prev = p
    kept = np.asarray(kept, dtype=np.int64)
    out = syms.copy()
    out[kept] = new_id
    keep_mask = np.ones(syms.shape[0], dtype=bool)
    keep_mask[kept + 1] = False
    new_lengths = lengths - np.bincount(word_of[kept], minlength=lengths.shape[0])
    new_offsets = np.zeros(offsets.shape[0], dtype=np.int64)
    np.cumsum(new_lengths, out=new_offsets[1:])
    return out[keep_mask], new_offsets


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_apply_merge(syms, offsets, left, right, new_id):
        out = np.empty_like(syms)
        new_offsets = np.empty_like(offsets)
        new_offsets[0] = 0
        pos = 0
        nwords = offsets.shape[0] - 1
        for w in range(nwords):
            p = offsets[w]
            end = offsets[w + 1]
            while p < end:
                if p + 1 < end and syms[p] == left and syms[p + 1] == right:
                    out[pos] = new_id
                    p += 2
                else:
                    out[pos] = syms[p]
                    p += 1
                pos += 1
            new_offsets[w + 1] = pos
        return out[:pos], new_offsets


def _np_encode_word(syms, merge_keys, merge_ranks, merge_new_ids):
    syms = list(syms)
    n_keys = merge_keys.shape[0]
    while len(syms) > 1:
        best_rank = np.iinfo(np.int64).max
        best_new = -1
        best_key = -1
        for i in range(len(syms) - 1):
            key = int(syms[i]) * int(_PACK) + int(syms[i + 1])
            idx = np.searchsorted(merge_keys, key)
            if idx < n_keys and merge_keys[idx] == key and merge_ranks[idx] < best_rank:
                best_rank = merge_ranks[idx]
                best_new = merge_new_ids[idx]
                best_key = key
        if best_new < 0:
            break
        left = best_key >> 32
        right = best_key & (int(_PACK) - 1)
        merged = []
        i = 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                merged.append(best_new)
                i += 2
            else:
                merged.append(syms[i])
                i += 1
        syms = merged
    return np.asarray(syms, dtype=np.int32)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_encode_word(syms, merge_keys, merge_ranks, merge_new_ids):
        work = syms.copy()
        n = work.shape[0]
        n_keys = merge_keys.shape[0]
        while n > 1:
            best_rank = np.int64(2**62)
            best_new = np.int32(-1)
            best_left = np.int32(-1)
            best_right = np.int32(-1)
            for i in range(n - 1):
                key = np.int64(work[i]) * _PACK + np.int64(work[i + 1])
                idx = np.searchsorted(merge_keys, key)
                if idx < n_keys and merge_keys[idx] == key and merge_ranks[idx] < best_rank:
                    best_rank = merge_ranks[idx]
                    best_new = merge_new_ids[idx]
                    best_left = work[i]
                    best_right = work[i + 1]
            if best_new < 0:
                break
            pos = 0
            i = 0
            while i < n:
                if (i + 1 < n and work[i] == best_left
                        and work[i + 1] == best_right):
                    work[pos] = best_new
                    i += 2
                else:
                    work[pos] = work[i]
                    i += 1
                pos += 1
            n = pos
        return work[:n].copy()


# ---------------------------------------------------------------------------
# monotone sentence-alignment dynamic program (length-ratio cost)
# ---------------------------------------------------------------------------

# moves: (da, db, penalty); index into this table is the backpointer code
ALIGN_MOVES = np.array(
    [(1, 1, 0.0), (1, 0, 4.0), (0, 1, 4.0), (2, 1, 2.0), (1, 2, 2.0)],
    dtype=np.float64)


def _np_align_dp(la, lb, ratio):
    n, m = la.shape[0], lb.shape[0]
    big = np.inf
    cost = np.full((n + 1, m + 1), big)
    back = np.full((n + 1, m + 1), -1, dtype=np.int8)
    cost[0, 0] = 0.0
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            best = big
            best_mv = -1
            for mv in range(ALIGN_MOVES.shape[0]):
                da = int(ALIGN_MOVES[mv, 0])
                db = int(ALIGN_MOVES[mv, 1])
                if i - da < 0 or j - db < 0:
                    continue
                pen = ALIGN_MOVES[mv, 2]
                suma = la[i - da:i].sum()
                sumb = lb[j - db:j].sum()
                denom = suma + ratio * sumb
                lencost = 0.0 if denom <= 0 else abs(suma - ratio * sumb) / np.sqrt(denom)
                c = cost[i - da, j - db] + pen + lencost
                if c < best:
                    best = c
                    best_mv = mv
            cost[i, j] = best
            back[i, j] = best_mv
    return cost, back


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_align_dp(la, lb, ratio, moves):
        n = la.shape[0]
        m = lb.shape[0]
        cost = np.full((n + 1, m + 1), np.inf)
        back = np.full((n + 1, m + 1), -1, dtype=np.int8)
        cost[0, 0] = 0.0
        for i in range(n + 1):
            for j in range(m + 1):
                if i == 0 and j == 0:
                    continue
                best = np.inf
                best_mv = -1
                for mv in range(moves.shape[0]):
                    da = int(moves[mv, 0])
                    db = int(moves[mv, 1])
                    if i - da < 0 or j - db < 0:
                        continue
                    suma = 0.0
                    for a in range(i - da, i):
                        suma += la[a]
                    sumb = 0.0
                    for b in range(j - db, j):
                        sumb += lb[b]
                    denom = suma + ratio * sumb
                    if denom <= 0:
                        lencost = 0.0
                    else:
                        lencost = abs(suma - ratio * sumb) / np.sqrt(denom)
                    c = cost[i - da, j - db] + moves[mv, 2] + lencost
                    if c < best:
                        best = c
                        best_mv = mv
                cost[i, j] = best
                back[i, j] = best_mv
        return cost, back


def _nb_align_dp_wrap(la, lb, ratio):
    return _nb_align_dp(la, lb, ratio, ALIGN_MOVES)


# ---------------------------------------------------------------------------
# public selection
# ---------------------------------------------------------------------------

if USE_NUMBA:
    softmax_rows = _nb_softmax_rows
    softmax_rows_backward = _nb_softmax_rows_backward
    layernorm_forward = _nb_layernorm_forward
    layernorm_backward = _nb_layernorm_backward
    embedding_grad = _nb_embedding_grad
    count_pairs = _nb_count_pairs
    apply_merge = _nb_apply_merge
    encode_word = _nb_encode_word
    align_dp = _nb_align_dp_wrap
else:
    softmax_rows = _np_softmax_rows
    softmax_rows_backward = _np_softmax_rows_backward
    layernorm_forward = _np_layernorm_forward
    layernorm_backward = _np_layernorm_backward
    embedding_grad = _np_embedding_grad
    count_pairs = _np_count_pairs
    apply_merge = _np_apply_merge
    encode_word = _np_encode_word
    align_dp = _np_align_dp


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
