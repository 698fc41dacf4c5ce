"""Parameter initialization and the named-tensor checkpoint format."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .config import TransformerConfig, config_from_header_pairs, config_to_header_lines

Params = dict[str, np.ndarray]


def glorot_std(fan_in: int, fan_out: int) -> float:
    """Standard deviation of the Glorot uniform distribution."""
    return float(np.sqrt(2.0 / (fan_in + fan_out)))


def _glorot(rng, shape, dtype, scale=1.0):
    bound = np.sqrt(6.0 / (shape[0] + shape[1])) * scale
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def block_scale(config: TransformerConfig, block_index: int) -> float:
    """Init multiplier for residual-block weights of the i-th block (1-based)."""
    if config.init_scaling == "block-index":
        return 1.0 / np.sqrt(block_index)
    if config.init_scaling == "stack-depth":
        return 1.0 / np.sqrt(config.depth)
    return 1.0


def _init_attention(rng, params, prefix, d, dtype, scale):
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = _glorot(rng, (d, d), dtype, scale)
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.{name}"] = np.zeros(d, dtype=dtype)


def _init_ln(params, prefix, d, dtype):
    params[f"{prefix}.g"] = np.ones(d, dtype=dtype)
    params[f"{prefix}.b"] = np.zeros(d, dtype=dtype)


def _init_ff(rng, params, prefix, d, f, dtype, scale):
    params[f"{prefix}.w1"] = _glorot(rng, (d, f), dtype, scale)
    params[f"{prefix}.b1"] = np.zeros(f, dtype=dtype)
    params[f"{prefix}.w2"] = _glorot(rng, (f, d), dtype, scale)
    params[f"{prefix}.b2"] = np.zeros(d, dtype=dtype)


def _init_encoder_stack(rng, params, stack, config, dtype):
    d, f = config.model_dim, config.ff_dim
    for i in range(1, config.depth + 1):
        scale = block_scale(config, i)
        _init_ln(params, f"{stack}.{i}.ln1", d, dtype)
        _init_attention(rng, params, f"{stack}.{i}.att", d, dtype, scale)
        _init_ln(params, f"{stack}.{i}.ln2", d, dtype)
        _init_ff(rng, params, f"{stack}.{i}.ff", d, f, dtype, scale)
    _init_ln(params, f"{stack}.ln", d, dtype)


def init_params(config: TransformerConfig, seed: int) -> Params:
    """Draw all weights: scaled Glorot uniform in residual blocks, plain
    Glorot for embeddings and output heads, identity layer norms."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    d, f, v = config.model_dim, config.ff_dim, config.vocab_size
    params: Params = {}

    params["emb.tok"] = _glorot(rng, (v, d), dtype)
    _init_encoder_stack(rng, params, "enc", config, dtype)
    if config.dual_encoder:
        _init_encoder_stack(rng, params, "enc2", config, dtype)

    for i in range(1, config.depth + 1):
        scale = block_scale(config, i)
        _init_ln(params, f"dec.{i}.ln1", d, dtype)
        _init_attention(rng, params, f"dec.{i}.self", d, dtype, scale)
        _init_ln(params, f"dec.{i}.ln2", d, dtype)
        _init_attention(rng, params, f"dec.{i}.cross", d, dtype, scale)
        if config.dual_encoder:
            _init_ln(params, f"dec.{i}.ln2b", d, dtype)
            _init_attention(rng, params, f"dec.{i}.cross2", d, dtype, scale)
        _init_ln(params, f"dec.{i}.ln3", d, dtype)
        _init_ff(rng, params, f"dec.{i}.ff", d, f, dtype, scale)
    _init_ln(params, "dec.ln", d, dtype)

    params["out.w"] = _glorot(rng, (d, v), dtype)
    params["out.b"] = np.zeros(v, dtype=dtype)
    if config.masked_lm and not config.tie_mlm_head:
        params["mlm.w"] = _glorot(rng, (d, v), dtype)
        params["mlm.b"] = np.zeros(v, dtype=dtype)
    elif config.masked_lm:
        params["mlm.b"] = np.zeros(v, dtype=dtype)
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def save_checkpoint(path: str, params: Params, config: TransformerConfig) -> None:
    """Single binary file: text header (name, dtype, shape, offset) + payload."""
    header = ["docmt-checkpoint 1"]
    header.extend(config_to_header_lines(config))
    offset = 0
    ordered = list(params.items())
    for name, tensor in ordered:
        shape = ",".join(str(s) for s in tensor.shape)
        header.append(f"tensor {name} {tensor.dtype.name} {shape} {offset}")
        offset += tensor.nbytes
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for _, tensor in ordered:
            fh.write(np.ascontiguousarray(tensor).tobytes())


def load_checkpoint(path: str) -> tuple[Params, TransformerConfig]:
    with open(path, "rb") as fh:
        header_lines = []
        while True:
            line = fh.readline()
            if not line:
                raise ConfigError(f"{path}: truncated checkpoint header")
            text = line.decode("utf-8").rstrip("\n")
            if text == "end":
                break
            header_lines.append(text)
        payload = fh.read()

    if not header_lines or header_lines[0] != "docmt-checkpoint 1":
        raise ConfigError(f"{path}: not a checkpoint file")
    config_pairs: dict[str, str] = {}
    specs = []
    for line in header_lines[1:]:
        kind, rest = line.split(" ", 1)
        if kind == "config":
            key, value = rest.split(" ", 1)
            config_pairs[key] = value
        elif kind == "tensor":
            name, dtype, shape, offset = rest.rsplit(" ", 3)
            shape_t = tuple(int(s) for s in shape.split(","))
            specs.append((name, np.dtype(dtype), shape_t, int(offset)))
        else:
            raise ConfigError(f"{path}: unknown header entry {kind!r}")

    config = config_from_header_pairs(config_pairs)
    params: Params = {}
    for name, dtype, shape, offset in specs:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype=dtype, count=n, offset=offset)
        params[name] = arr.reshape(shape).copy()
    return params, config
