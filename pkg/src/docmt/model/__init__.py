"""Transformer model: configuration, parameters, losses, training."""

from .config import LossBreakdown, TrainConfig, TransformerConfig, read_configs, write_configs
from .params import (
    copy_params,
    glorot_std,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zeros_like_params,
)
from .training import (
    DevSet,
    TrainResult,
    batch_stream,
    evaluate_dev,
    fine_tune,
    log_to_tsv,
    lr_at,
    make_batches,
    train,
)
from .transformer import (
    Batch,
    build_dual_encoder,
    decoder_input,
    encoder_forward,
    forward_loss,
    forward_loss_dual,
    make_batch,
    masked_lm_loss,
    mlm_loss_sum,
    pad_sequences,
    sample_mask_positions,
    translation_loss_sum,
)

__all__ = [
    "Batch", "DevSet", "LossBreakdown", "TrainConfig", "TrainResult",
    "TransformerConfig", "batch_stream", "build_dual_encoder", "copy_params",
    "decoder_input", "encoder_forward", "evaluate_dev", "fine_tune",
    "forward_loss", "forward_loss_dual", "glorot_std", "init_params",
    "load_checkpoint", "log_to_tsv", "lr_at", "make_batch", "make_batches",
    "masked_lm_loss", "mlm_loss_sum", "pad_sequences", "read_configs",
    "sample_mask_positions", "save_checkpoint", "train",
    "translation_loss_sum", "write_configs", "zeros_like_params",
]
