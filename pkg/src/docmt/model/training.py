"""Training loop: delayed-gradient optimization, multi-task co-training,
dev-metric checkpointing and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergedLoss
from .config import TrainConfig, TransformerConfig
from .params import Params, copy_params, zeros_like_params
from .transformer import Batch, make_batch, mlm_loss_sum, translation_loss_sum


def make_batches(pairs, batch_tokens, rng=None, shuffle=True):
    """Pack (src, tgt[, fp]) id-sequence tuples into padded batches.

    Sequences are bucketed by length to limit padding waste; batch order is
    shuffled when an rng is given.
    """
    idx = np.arange(len(pairs))
    if shuffle and rng is not None:
        rng.shuffle(idx)
    has_fp = len(pairs) > 0 and len(pairs[0]) == 3
    idx = sorted(idx, key=lambda i: (len(pairs[i][1]), len(pairs[i][0])))
    batches = []
    cur: list = []
    width = 0
    for i in idx:
        row_w = sum(len(s) + 1 for s in pairs[i])
        width = max(width, row_w)
        if cur and width * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur = [i]
            width = row_w
        else:
            cur.append(i)
    if cur:
        batches.append(cur)
    out = []
    for members in batches:
        src = [pairs[i][0] for i in members]
        tgt = [pairs[i][1] for i in members]
        fp = [pairs[i][2] for i in members] if has_fp else None
        out.append(make_batch(src, tgt, fp))
    if shuffle and rng is not None:
        order = rng.permutation(len(out))
        out = [out[i] for i in order]
    return out


def batch_stream(pairs, batch_tokens, seed, shuffle=True):
    """Endless batch generator; reshuffles deterministically every epoch."""
    rng = np.random.default_rng(seed)
    while True:
        for batch in make_batches(pairs, batch_tokens, rng, shuffle):
            yield batch


@dataclass
class DevSet:
    """Dev data for metric evaluation: teacher-forced batches for "neg_ce",
    plus decode inputs and reference texts for "bleu"."""
    batches: list[Batch] = field(default_factory=list)
    src_seqs: list | None = None
    ref_texts: list[str] | None = None
    vocab: object = None
    fp_seqs: list | None = None


def evaluate_dev(params: Params, config: TransformerConfig, dev: DevSet,
                 metric: str) -> float:
    """Higher is better for every metric."""
    if metric == "neg_ce":
        nll = 0.0
        count = 0
        for batch in dev.batches:
            s, n, _ = translation_loss_sum(params, config, batch, want_grads=False)
            nll += s
            count += n
        return -nll / max(count, 1)
    if metric == "bleu":
        from ..bleu import bleu as bleu_score
        from ..decode import DecodeConfig, EnsembleSpec, beam_decode
        from ..subword import decode as sw_decode
        spec = EnsembleSpec(((params, config), ), (1.0, ))
        dconf = DecodeConfig(mode="greedy", beam_size=1,
                             max_out_len=min(config.max_len, 128))
        hyps = []
        for i, seq in enumerate(dev.src_seqs):
            fp = dev.fp_seqs[i] if dev.fp_seqs is not None else None
            result = beam_decode(spec, dconf, seq, fp_ids=fp)
            hyps.append(sw_decode(dev.vocab, result.ids))
        return bleu_score(hyps, dev.ref_texts).score
    raise ValueError(f"unknown dev metric {metric!r}")


def lr_at(train_config: TrainConfig, step: int) -> float:
    """Inverse-sqrt schedule with linear warmup; constant when warmup is 0."""
    if train_config.warmup_steps <= 0:
        return train_config.lr
    w = train_config.warmup_steps
    return train_config.lr * min(step / w, np.sqrt(w / step))


class _Optimizer:
    def __init__(self, params: Params, train_config: TrainConfig):
        self.kind = train_config.optimizer
        self.train_config = train_config
        self.step = 0
        if self.kind == "adam":
            self.m = zeros_like_params(params)
            self.v = zeros_like_params(params)

    def apply(self, params: Params, grads: Params) -> None:
        self.step += 1
        lr = lr_at(self.train_config, self.step)
        if self.kind == "sgd":
            for k, g in grads.items():
                params[k] -= lr * g
            return
        b1, b2, eps = 0.9, 0.98, 1e-9
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainResult:
    params: Params
    final_params: Params
    best_params: Params | None
    best_metric: float | None
    log: list[dict]
    stopped_early: bool = False


def log_to_tsv(log: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("update\tce\tmlm\ttotal\tdev\n")
        for row in log:
            dev = "" if row.get("dev") is None else f"{row['dev']:.6f}"
            fh.write(f"{row['update']}\t{row['ce']:.6f}\t{row['mlm']:.6f}\t"
                     f"{row['total']:.6f}\t{dev}\n")


def train(params: Params, config: TransformerConfig, train_config: TrainConfig,
          parallel_stream, mono_stream=None, dev: DevSet | None = None,
          mono_from_parallel: bool = False) -> TrainResult:
    """Optimize params in place (a copy is made first).

    Gradients accumulate over optimizer_delay micro-batches before one
    update. With a mono stream (or mono_from_parallel), each update's loss is
    ce + mlm_weight * mlm. Best-dev checkpoints are retained; a non-finite
    loss aborts with the last finite checkpoint.
    """
    params = copy_params(params)
    parallel_iter = iter(parallel_stream)
    mono_iter = iter(mono_stream) if mono_stream is not None else None
    use_mlm = config.masked_lm and (mono_iter is not None or mono_from_parallel)
    opt = _Optimizer(params, train_config)
    mlm_rng = np.random.default_rng(train_config.seed + 7777)

    log: list[dict] = []
    best_params = None
    best_metric = -np.inf
    evals_since_improvement = 0
    prev_params = copy_params(params)
    stopped_early = False

    for update in range(1, train_config.max_updates + 1):
        ce_sum = 0.0
        ce_tokens = 0
        mlm_sum = 0.0
        mlm_tokens = 0
        g_ce = None
        g_mlm = None
        for _ in range(train_config.optimizer_delay):
            batch = next(parallel_iter)
            nll, count, grads = translation_loss_sum(params, config, batch)
            ce_sum += nll
            ce_tokens += count
            if g_ce is None:
                g_ce = grads
            else:
                for k, v in grads.items():
                    g_ce[k] += v
            if use_mlm:
                if mono_from_parallel:
                    mono_ids, mono_len = batch.src, batch.src_len
                else:
                    mono = next(mono_iter)
                    mono_ids, mono_len = mono
                nll_m, count_m, grads_m, _ = mlm_loss_sum(
                    params, config, mono_ids, mono_len, rng=mlm_rng)
                mlm_sum += nll_m
                mlm_tokens += count_m
                if g_mlm is None:
                    g_mlm = grads_m
                else:
                    for k, v in grads_m.items():
                        g_mlm[k] += v

        ce = ce_sum / max(ce_tokens, 1)
        mlm = mlm_sum / max(mlm_tokens, 1)
        total = ce + (config.mlm_weight * mlm if use_mlm else 0.0)
        if not np.isfinite(total):
            err = DivergedLoss(f"non-finite loss at update {update}")
            err.checkpoint = prev_params  # last finite parameters
            err.train_log = log
            raise err

        step_grads = {k: v / ce_tokens for k, v in g_ce.items()}
        if g_mlm is not None:
            w = config.mlm_weight / max(mlm_tokens, 1)
            for k, v in g_mlm.items():
                if k in step_grads:
                    step_grads[k] += w * v
                else:
                    step_grads[k] = w * v
        prev_params = copy_params(params)
        opt.apply(params, step_grads)

        row = {"update": update, "ce": ce, "mlm": mlm, "total": total, "dev": None}
        if (dev is not None and train_config.eval_every
                and update % train_config.eval_every == 0):
            metric = evaluate_dev(params, config, dev,
                                  train_config.early_stop_metric)
            row["dev"] = metric
            if metric > best_metric:
                best_metric = metric
                best_params = copy_params(params)
                evals_since_improvement = 0
            else:
                evals_since_improvement += 1
            if (train_config.early_stop_patience
                    and evals_since_improvement >= train_config.early_stop_patience):
                log.append(row)
                stopped_early = True
                break
        log.append(row)
        if train_config.stop_below_loss and total < train_config.stop_below_loss:
            break

    returned = best_params if best_params is not None else params
    return TrainResult(
        params=returned,
        final_params=params,
        best_params=best_params,
        best_metric=None if best_metric == -np.inf else best_metric,
        log=log,
        stopped_early=stopped_early,
    )


def fine_tune(params: Params, config: TransformerConfig,
              train_config: TrainConfig, new_stream,
              dev: DevSet) -> TrainResult:
    """Continue training on substituted data with unchanged hyperparameters.

    Stops when the dev metric fails to improve for `early_stop_patience`
    evaluations and returns the best checkpoint. With masked_lm on, the
    masked-LM head trains on the parallel batches' source side rather than a
    separate monolingual stream.
    """
    if not train_config.eval_every or not train_config.early_stop_patience:
        raise ValueError("fine_tune needs eval_every and early_stop_patience")
    return train(params, config, train_config, new_stream, mono_stream=None,
                 dev=dev, mono_from_parallel=config.masked_lm)
