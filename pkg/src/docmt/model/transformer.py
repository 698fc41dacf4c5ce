"""Transformer encoder-decoder: numpy forward/backward passes.

Pre-norm residual blocks; a single token embedding shared by encoder and
decoder (one subword vocabulary for both languages); sinusoidal positions.
The decoder starts from <EOS> and every target ends with <EOS>. Pad queries
and keys are excluded through per-row attention limits (padding is always on
the right), so a fully-padded memory contributes exactly zero through its
cross-attention block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import SequenceTooLong
from ..subword import EOS, MASK, N_SPECIALS, PAD
from .config import LossBreakdown, TransformerConfig
from .params import Params

LN_EPS = 1e-5

_POS_CACHE: dict = {}


def positional_encoding(max_len: int, dim: int, dtype) -> np.ndarray:
    key = (max_len, dim, np.dtype(dtype).name)
    if key not in _POS_CACHE:
        pos = np.arange(max_len, dtype=np.float64)[:, None]
        i = np.arange(dim, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
        enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
        _POS_CACHE[key] = enc.astype(dtype)
    return _POS_CACHE[key]


@dataclass
class Batch:
    """Padded id matrices; sequences end with <EOS>, padding is <PAD> on the
    right. fp_* carries the first-pass translation for dual-encoder models."""
    src: np.ndarray
    tgt: np.ndarray
    src_len: np.ndarray
    tgt_len: np.ndarray
    fp: np.ndarray | None = None
    fp_len: np.ndarray | None = None

    @property
    def n_target_tokens(self) -> int:
        return int(self.tgt_len.sum())


def pad_sequences(seqs: list[list[int]], dtype=np.int32) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.asarray([len(s) for s in seqs], dtype=np.int64)
    width = max(1, int(lengths.max()) if len(seqs) else 1)
    out = np.full((len(seqs), width), PAD, dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def make_batch(src_seqs, tgt_seqs, fp_seqs=None) -> Batch:
    """Build a batch from id lists, appending <EOS> to every sequence."""
    src, src_len = pad_sequences([list(s) + [EOS] for s in src_seqs])
    tgt, tgt_len = pad_sequences([list(t) + [EOS] for t in tgt_seqs])
    fp = fp_len = None
    if fp_seqs is not None:
        fp, fp_len = pad_sequences([list(f) + [EOS] for f in fp_seqs])
    return Batch(src, tgt, src_len, tgt_len, fp, fp_len)


def _acc(grads: Params, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


# --- sublayers ---------------------------------------------------------------

def _ln_fwd(params, pfx, x):
    b, l, d = x.shape
    x2 = np.ascontiguousarray(x.reshape(-1, d))
    y2, mean, rstd = kernels.layernorm_forward(
        x2, params[pfx + ".g"], params[pfx + ".b"], LN_EPS)
    return y2.reshape(b, l, d), (x2, mean, rstd)


def _ln_bwd(params, grads, pfx, cache, dy):
    x2, mean, rstd = cache
    d = x2.shape[1]
    dy2 = np.ascontiguousarray(dy.reshape(-1, d))
    dx2, dg, db = kernels.layernorm_backward(
        x2, params[pfx + ".g"], mean, rstd, dy2)
    _acc(grads, pfx + ".g", dg)
    _acc(grads, pfx + ".b", db)
    return dx2.reshape(dy.shape)


def _attn_fwd(params, pfx, heads, x_q, x_kv, limits):
    """Multi-head attention; limits (B, Lq) holds the valid key prefix per row."""
    b, lq, d = x_q.shape
    lk = x_kv.shape[1]
    h = heads
    dh = d // h
    q2 = x_q.reshape(-1, d) @ params[pfx + ".wq"] + params[pfx + ".bq"]
    k2 = x_kv.reshape(-1, d) @ params[pfx + ".wk"] + params[pfx + ".bk"]
    v2 = x_kv.reshape(-1, d) @ params[pfx + ".wv"] + params[pfx + ".bv"]
    q = q2.reshape(b, lq, h, dh).transpose(0, 2, 1, 3)
    k = k2.reshape(b, lk, h, dh).transpose(0, 2, 1, 3)
    v = v2.reshape(b, lk, h, dh).transpose(0, 2, 1, 3)
    scale = np.asarray(1.0 / np.sqrt(dh), dtype=x_q.dtype)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    lim = np.ascontiguousarray(
        np.broadcast_to(limits[:, None, :], (b, h, lq)).reshape(-1))
    probs2 = kernels.softmax_rows(
        np.ascontiguousarray(scores.reshape(-1, lk)), lim)
    probs = probs2.reshape(b, h, lq, lk)
    ctx = probs @ v
    ctx2 = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(-1, d)
    out2 = ctx2 @ params[pfx + ".wo"] + params[pfx + ".bo"]
    cache = (x_q, x_kv, q, k, v, probs, lim, ctx2, scale)
    return out2.reshape(b, lq, d), cache


def _attn_bwd(params, grads, pfx, heads, cache, dout):
    x_q, x_kv, q, k, v, probs, lim, ctx2, scale = cache
    b, lq, d = x_q.shape
    lk = x_kv.shape[1]
    h = heads
    dh = d // h
    dout2 = dout.reshape(-1, d)
    _acc(grads, pfx + ".wo", ctx2.T @ dout2)
    _acc(grads, pfx + ".bo", dout2.sum(0))
    dctx2 = dout2 @ params[pfx + ".wo"].T
    dctx = dctx2.reshape(b, lq, h, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores2 = kernels.softmax_rows_backward(
        np.ascontiguousarray(probs.reshape(-1, lk)),
        np.ascontiguousarray(dprobs.reshape(-1, lk)), lim)
    dscores = dscores2.reshape(b, h, lq, lk) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dq2 = np.ascontiguousarray(dq.transpose(0, 2, 1, 3)).reshape(-1, d)
    dk2 = np.ascontiguousarray(dk.transpose(0, 2, 1, 3)).reshape(-1, d)
    dv2 = np.ascontiguousarray(dv.transpose(0, 2, 1, 3)).reshape(-1, d)
    xq2 = x_q.reshape(-1, d)
    xkv2 = x_kv.reshape(-1, d)
    _acc(grads, pfx + ".wq", xq2.T @ dq2)
    _acc(grads, pfx + ".bq", dq2.sum(0))
    _acc(grads, pfx + ".wk", xkv2.T @ dk2)
    _acc(grads, pfx + ".bk", dk2.sum(0))
    _acc(grads, pfx + ".wv", xkv2.T @ dv2)
    _acc(grads, pfx + ".bv", dv2.sum(0))
    dx_q = (dq2 @ params[pfx + ".wq"].T).reshape(b, lq, d)
    dx_kv = (dk2 @ params[pfx + ".wk"].T
             + dv2 @ params[pfx + ".wv"].T).reshape(b, lk, d)
    return dx_q, dx_kv


def _ff_fwd(params, pfx, x):
    b, l, d = x.shape
    x2 = x.reshape(-1, d)
    h1 = x2 @ params[pfx + ".w1"] + params[pfx + ".b1"]
    a1 = np.maximum(h1, 0)
    out2 = a1 @ params[pfx + ".w2"] + params[pfx + ".b2"]
    return out2.reshape(b, l, d), (x2, h1, a1)


def _ff_bwd(params, grads, pfx, cache, dout):
    x2, h1, a1 = cache
    dout2 = dout.reshape(-1, dout.shape[-1])
    _acc(grads, pfx + ".w2", a1.T @ dout2)
    _acc(grads, pfx + ".b2", dout2.sum(0))
    da1 = dout2 @ params[pfx + ".w2"].T
    dh1 = da1 * (h1 > 0)
    _acc(grads, pfx + ".w1", x2.T @ dh1)
    _acc(grads, pfx + ".b1", dh1.sum(0))
    return (dh1 @ params[pfx + ".w1"].T).reshape(dout.shape)


def _embed_fwd(params, config, ids):
    emb = params["emb.tok"]
    d = emb.shape[1]
    pos = positional_encoding(config.max_len, d, emb.dtype)
    x = emb[ids] * np.asarray(np.sqrt(d), emb.dtype) + pos[: ids.shape[1]][None, :, :]
    return x


def _embed_bwd(params, grads, ids, dx):
    emb = params["emb.tok"]
    d = emb.shape[1]
    if "emb.tok" not in grads:
        grads["emb.tok"] = np.zeros_like(emb)
    scaled = np.ascontiguousarray(
        (dx * np.asarray(np.sqrt(d), emb.dtype)).reshape(-1, d))
    kernels.embedding_grad(
        np.ascontiguousarray(ids.reshape(-1)).astype(np.int64), scaled,
        grads["emb.tok"])


# --- stacks ------------------------------------------------------------------

def encoder_forward(params, config, ids, lengths, stack="enc"):
    b, l = ids.shape
    x = _embed_fwd(params, config, ids)
    limits = np.ascontiguousarray(
        np.broadcast_to(lengths[:, None], (b, l)).astype(np.int64))
    blocks = []
    for i in range(1, config.depth + 1):
        pfx = f"{stack}.{i}"
        a, c_ln1 = _ln_fwd(params, pfx + ".ln1", x)
        att, c_att = _attn_fwd(params, pfx + ".att", config.heads, a, a, limits)
        x = x + att
        f, c_ln2 = _ln_fwd(params, pfx + ".ln2", x)
        ff, c_ff = _ff_fwd(params, pfx + ".ff", f)
        x = x + ff
        blocks.append((c_ln1, c_att, c_ln2, c_ff))
    y, c_final = _ln_fwd(params, f"{stack}.ln", x)
    return y, (ids, blocks, c_final)


def encoder_backward(params, grads, config, cache, dy, stack="enc"):
    ids, blocks, c_final = cache
    dx = _ln_bwd(params, grads, f"{stack}.ln", c_final, dy)
    for i in range(config.depth, 0, -1):
        pfx = f"{stack}.{i}"
        c_ln1, c_att, c_ln2, c_ff = blocks[i - 1]
        dff_in = _ff_bwd(params, grads, pfx + ".ff", c_ff, dx)
        dx = dx + _ln_bwd(params, grads, pfx + ".ln2", c_ln2, dff_in)
        dxa_q, dxa_kv = _attn_bwd(params, grads, pfx + ".att", config.heads, c_att, dx)
        dx = dx + _ln_bwd(params, grads, pfx + ".ln1", c_ln1, dxa_q + dxa_kv)
    _embed_bwd(params, grads, ids, dx)


def decoder_forward(params, config, tgt_in, tgt_len, memory, mem_len,
                    memory2=None, mem2_len=None):
    b, t = tgt_in.shape
    x = _embed_fwd(params, config, tgt_in)
    qpos = np.arange(t, dtype=np.int64)
    self_limits = np.ascontiguousarray(
        np.minimum(qpos[None, :] + 1, tgt_len[:, None]).astype(np.int64))
    cross_limits = np.ascontiguousarray(
        np.broadcast_to(mem_len[:, None], (b, t)).astype(np.int64))
    cross2_limits = None
    if memory2 is not None:
        cross2_limits = np.ascontiguousarray(
            np.broadcast_to(mem2_len[:, None], (b, t)).astype(np.int64))
    blocks = []
    for i in range(1, config.depth + 1):
        pfx = f"dec.{i}"
        a, c_ln1 = _ln_fwd(params, pfx + ".ln1", x)
        att, c_self = _attn_fwd(params, pfx + ".self", config.heads, a, a, self_limits)
        x = x + att
        a, c_ln2 = _ln_fwd(params, pfx + ".ln2", x)
        att, c_cross = _attn_fwd(params, pfx + ".cross", config.heads, a, memory,
                                 cross_limits)
        x = x + att
        c_ln2b = c_cross2 = None
        if memory2 is not None:
            a, c_ln2b = _ln_fwd(params, pfx + ".ln2b", x)
            att, c_cross2 = _attn_fwd(params, pfx + ".cross2", config.heads, a,
                                      memory2, cross2_limits)
            x = x + att
        a, c_ln3 = _ln_fwd(params, pfx + ".ln3", x)
        ff, c_ff = _ff_fwd(params, pfx + ".ff", a)
        x = x + ff
        blocks.append((c_ln1, c_self, c_ln2, c_cross, c_ln2b, c_cross2, c_ln3, c_ff))
    y, c_final = _ln_fwd(params, "dec.ln", x)
    return y, (tgt_in, blocks, c_final, memory, memory2)


def decoder_backward(params, grads, config, cache, dy):
    tgt_in, blocks, c_final, memory, memory2 = cache
    dmem = np.zeros_like(memory)
    dmem2 = np.zeros_like(memory2) if memory2 is not None else None
    dx = _ln_bwd(params, grads, "dec.ln", c_final, dy)
    for i in range(config.depth, 0, -1):
        pfx = f"dec.{i}"
        c_ln1, c_self, c_ln2, c_cross, c_ln2b, c_cross2, c_ln3, c_ff = blocks[i - 1]
        dff_in = _ff_bwd(params, grads, pfx + ".ff", c_ff, dx)
        dx = dx + _ln_bwd(params, grads, pfx + ".ln3", c_ln3, dff_in)
        if memory2 is not None:
            dxa_q, dxa_kv = _attn_bwd(params, grads, pfx + ".cross2", config.heads,
                                      c_cross2, dx)
            dmem2 += dxa_kv
            dx = dx + _ln_bwd(params, grads, pfx + ".ln2b", c_ln2b, dxa_q)
        dxa_q, dxa_kv = _attn_bwd(params, grads, pfx + ".cross", config.heads,
                                  c_cross, dx)
        dmem += dxa_kv
        dx = dx + _ln_bwd(params, grads, pfx + ".ln2", c_ln2, dxa_q)
        dxa_q, dxa_kv = _attn_bwd(params, grads, pfx + ".self", config.heads,
                                  c_self, dx)
        dx = dx + _ln_bwd(params, grads, pfx + ".ln1", c_ln1, dxa_q + dxa_kv)
    _embed_bwd(params, grads, tgt_in, dx)
    return dmem, dmem2


# --- losses ------------------------------------------------------------------

def _softmax_xent(logits, targets, valid):
    """Sum of NLL over valid rows; returns (nll_sum, count, dlogits_of_sum)."""
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    z = ex.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    logp_t = logits[rows, targets] - mx[:, 0] - np.log(z[:, 0])
    nll = float(-(logp_t * valid).sum(dtype=np.float64))
    count = int(valid.sum())
    dlogits = ex / z
    dlogits[rows, targets] -= 1.0
    dlogits *= valid[:, None].astype(logits.dtype)
    return nll, count, dlogits


def decoder_input(tgt: np.ndarray) -> np.ndarray:
    dec_in = np.empty_like(tgt)
    dec_in[:, 0] = EOS
    dec_in[:, 1:] = tgt[:, :-1]
    return dec_in


def _check_lengths(config, *arrays):
    for arr in arrays:
        if arr is not None and arr.shape[1] > config.max_len:
            raise SequenceTooLong(
                f"sequence length {arr.shape[1]} exceeds max_len {config.max_len}")


def translation_loss_sum(params: Params, config: TransformerConfig, batch: Batch,
                         want_grads: bool = True):
    """Teacher-forced cross-entropy; returns (nll_sum, n_tokens, grads|None).

    Gradients are of the SUM of token NLLs so they accumulate linearly across
    delayed batches; divide by the token count for the mean.
    """
    _check_lengths(config, batch.src, batch.tgt, batch.fp)
    if config.dual_encoder and batch.fp is None:
        raise ValueError("dual-encoder model needs batch.fp")
    enc_out, enc_cache = encoder_forward(params, config, batch.src, batch.src_len)
    enc2_out = enc2_cache = None
    if config.dual_encoder:
        enc2_out, enc2_cache = encoder_forward(
            params, config, batch.fp, batch.fp_len, stack="enc2")
    dec_in = decoder_input(batch.tgt)
    dec_out, dec_cache = decoder_forward(
        params, config, dec_in, batch.tgt_len, enc_out, batch.src_len,
        enc2_out, batch.fp_len)
    b, t, d = dec_out.shape
    h2 = dec_out.reshape(-1, d)
    logits = h2 @ params["out.w"] + params["out.b"]
    targets = batch.tgt.reshape(-1)
    valid = (np.arange(t)[None, :] < batch.tgt_len[:, None]).reshape(-1)
    nll, count, dlogits = _softmax_xent(logits, targets, valid)
    if not want_grads:
        return nll, count, None
    grads: Params = {}
    _acc(grads, "out.w", h2.T @ dlogits)
    _acc(grads, "out.b", dlogits.sum(0))
    ddec = (dlogits @ params["out.w"].T).reshape(b, t, d)
    dmem, dmem2 = decoder_backward(params, grads, config, dec_cache, ddec)
    encoder_backward(params, grads, config, enc_cache, dmem)
    if config.dual_encoder:
        encoder_backward(params, grads, config, enc2_cache, dmem2, stack="enc2")
    return nll, count, grads


def sample_mask_positions(config, ids, lengths, rng) -> np.ndarray:
    """Exactly ceil(mask_rate * n_nonpad) positions per sequence."""
    chosen = np.zeros(ids.shape, dtype=bool)
    for row, n in enumerate(lengths):
        n = int(n)
        k = int(np.ceil(config.mask_rate * n))
        chosen[row, rng.choice(n, size=k, replace=False)] = True
    return chosen


def corrupt_masked(config, ids, positions, rng) -> np.ndarray:
    """Replace selected positions with <MASK> (optionally the 80/10/10 split)."""
    out = ids.copy()
    if not config.bert_mask_split:
        out[positions] = MASK
        return out
    rows, cols = np.nonzero(positions)
    u = rng.random(rows.shape[0])
    mask_sel = u < 0.8
    rand_sel = (u >= 0.8) & (u < 0.9)
    out[rows[mask_sel], cols[mask_sel]] = MASK
    n_rand = int(rand_sel.sum())
    if n_rand:
        out[rows[rand_sel], cols[rand_sel]] = rng.integers(
            N_SPECIALS, config.vocab_size, size=n_rand)
    return out


def mlm_loss_sum(params: Params, config: TransformerConfig, ids, lengths,
                 rng=None, mask_positions=None, want_grads: bool = True):
    """Masked-LM cross-entropy on the shared encoder.

    Returns (nll_sum, n_masked, grads|None, mask_positions); loss covers
    masked positions only.
    """
    _check_lengths(config, ids)
    if mask_positions is None:
        mask_positions = sample_mask_positions(config, ids, lengths, rng)
    corrupted = corrupt_masked(config, ids, mask_positions, rng or np.random.default_rng(0))
    enc_out, enc_cache = encoder_forward(params, config, corrupted, lengths)
    d = enc_out.shape[2]
    flat_pos = mask_positions.reshape(-1)
    h2 = enc_out.reshape(-1, d)[flat_pos]
    head_w = params["emb.tok"].T if config.tie_mlm_head else params["mlm.w"]
    logits = h2 @ head_w + params["mlm.b"]
    targets = ids.reshape(-1)[flat_pos]
    valid = np.ones(h2.shape[0], dtype=bool)
    nll, count, dlogits = _softmax_xent(logits, targets, valid)
    if not want_grads:
        return nll, count, None, mask_positions
    grads: Params = {}
    if config.tie_mlm_head:
        _acc(grads, "emb.tok", (h2.T @ dlogits).T)
    else:
        _acc(grads, "mlm.w", h2.T @ dlogits)
    _acc(grads, "mlm.b", dlogits.sum(0))
    dh2 = dlogits @ head_w.T
    denc = np.zeros_like(enc_out).reshape(-1, d)
    denc[flat_pos] = dh2
    encoder_backward(params, grads, config, enc_cache,
                     denc.reshape(enc_out.shape))
    return nll, count, grads, mask_positions


def build_dual_encoder(config: TransformerConfig) -> TransformerConfig:
    """Dual-encoder variant of a config: a second, untied encoder for the
    first-pass translation, attended serially after the source context."""
    from dataclasses import replace
    return replace(config, dual_encoder=True)


def forward_loss_dual(params: Params, config: TransformerConfig, batch: Batch,
                      want_grads: bool = False):
    """forward_loss over (src ids, first-pass ids, tgt ids) batches."""
    if not config.dual_encoder:
        raise ValueError("config.dual_encoder must be set")
    if batch.fp is None:
        raise ValueError("dual-encoder batch needs first-pass ids")
    return forward_loss(params, config, batch, want_grads=want_grads)


def masked_lm_loss(params: Params, config: TransformerConfig, ids, lengths,
                   rng=None, mask_positions=None, want_grads: bool = False):
    """Mean masked-LM cross-entropy per masked token.

    Returns (loss, grads|None, mask_positions); grads are of the mean.
    """
    nll, count, grads, positions = mlm_loss_sum(
        params, config, ids, lengths, rng=rng, mask_positions=mask_positions,
        want_grads=want_grads)
    mean = nll / max(count, 1)
    if grads is not None:
        grads = {k: v / max(count, 1) for k, v in grads.items()}
    return mean, grads, positions


def forward_loss(params: Params, config: TransformerConfig, batch: Batch,
                 mono_ids=None, mono_len=None, rng=None,
                 want_grads: bool = False):
    """Per-token losses for one step: translation CE plus optional masked LM.

    Returns (LossBreakdown, grads|None); gradients are of the combined mean
    objective ce + mlm_weight * mlm.
    """
    ce_sum, n_ce, g_ce = translation_loss_sum(params, config, batch, want_grads)
    ce = ce_sum / max(n_ce, 1)
    mlm = 0.0
    n_mlm = 0
    g_mlm = None
    if mono_ids is not None:
        mlm_sum, n_mlm, g_mlm, _ = mlm_loss_sum(
            params, config, mono_ids, mono_len, rng, want_grads=want_grads)
        mlm = mlm_sum / max(n_mlm, 1)
    total = ce + (config.mlm_weight * mlm if mono_ids is not None else 0.0)
    breakdown = LossBreakdown(ce, mlm, total, n_ce, n_mlm)
    if not want_grads:
        return breakdown, None
    grads: Params = {}
    for k, v in g_ce.items():
        _acc(grads, k, v / max(n_ce, 1))
    if g_mlm is not None:
        for k, v in g_mlm.items():
            _acc(grads, k, (config.mlm_weight / max(n_mlm, 1)) * v)
    return breakdown, grads
