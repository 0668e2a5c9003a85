'''
Parameter naming, shapes and initialization.

Parameters live in a flat `dict[str, np.ndarray]` keyed by dotted paths
(`encoder.block1.layer0.attn.wq`), which is also their checkpoint name.
'''
import math
import typing as t

import numpy as np

from unwarp.core.autodiff import NdValue, default_dtype
from unwarp.model.config import UPSAMPLE_FACTOR, ModelConfig

Params = dict[str, np.ndarray]

ATTENTION_PARTS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
NEIGHBORS = 9
# Mass every 3×3 neighbor keeps in the identity upsampling weights.
IDENTITY_WEIGHT_FLOOR = 0.05


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    '''Every parameter of the architecture, in a fixed order.'''
    shapes: dict[str, tuple[int, ...]] = {}
    c = config.hidden_dim

    c_in = 3
    for stage, c_out in enumerate(config.backbone_channels):
        for block in range(2):
            prefix = f"backbone.stage{stage}.block{block}"
            block_in = c_in if block == 0 else c_out
            _conv(shapes, f"{prefix}.conv1", 3, block_in, c_out)
            _conv(shapes, f"{prefix}.conv2", 3, c_out, c_out)
            if block == 0:
                _conv(shapes, f"{prefix}.skip", 1, block_in, c_out)
        c_in = c_out
    _conv(shapes, "backbone.proj", 1, c_in, c)

    for block in range(config.encoder_blocks):
        if block > 0:
            _conv(shapes, f"encoder.down{block}", 3, c, c)
        for layer in range(config.encoder_layers_per_block):
            prefix = f"encoder.block{block}.layer{layer}"
            _attention(shapes, f"{prefix}.attn", c)
            _norm(shapes, f"{prefix}.norm1", c)
            _ffn(shapes, f"{prefix}.ffn", c, config.ffn_dim)
            _norm(shapes, f"{prefix}.norm2", c)

    if config.query_mode == "learned":
        top_h, top_w = config.pyramid_extents()[-1]
        shapes["decoder.queries"] = (top_h, top_w, c)
    for block in range(config.decoder_blocks):
        for layer in range(config.decoder_layers_per_block):
            prefix = f"decoder.block{block}.layer{layer}"
            _attention(shapes, f"{prefix}.self_attn", c)
            _norm(shapes, f"{prefix}.norm1", c)
            _attention(shapes, f"{prefix}.cross_attn", c)
            _norm(shapes, f"{prefix}.norm2", c)
            _ffn(shapes, f"{prefix}.ffn", c, config.ffn_dim)
            _norm(shapes, f"{prefix}.norm3", c)

    _conv(shapes, "head.flow.conv1", 3, c, c)
    _conv(shapes, "head.flow.conv2", 3, c, 2)
    if config.upsample_mode == "learned":
        _conv(shapes, "head.mask.conv1", 3, c, c)
        _conv(shapes, "head.mask.conv2", 1, c,
              UPSAMPLE_FACTOR * UPSAMPLE_FACTOR * NEIGHBORS)
    return shapes


def init_params(config: ModelConfig,
                seed: int,
                identity_head: bool = True) -> Params:
    '''
    Fresh parameters. Convolutions get He-normal weights, projections
    Glorot-normal ones, biases start at zero and layer norms at unit gain.
    With `identity_head` the last layer of both head branches has zero
    weights, and the mask branch's bias holds the logits of the identity
    upsampling weights, so the untrained model predicts the identity flow.
    '''
    rng = np.random.default_rng(seed)
    dtype = default_dtype()
    params: Params = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        elif leaf == "weight":
            fan_in = int(np.prod(shape[:-1]))
            value = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        elif leaf == "queries":
            value = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in, fan_out = shape
            value = rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)),
                               size=shape)
        params[name] = value.astype(dtype)

    if identity_head:
        params["head.flow.conv2.weight"][...] = 0.0
        if config.upsample_mode == "learned":
            params["head.mask.conv2.weight"][...] = 0.0
            params["head.mask.conv2.bias"][...] = identity_mask_logits()
    else:
        for name in ("head.flow.conv2.bias", "head.mask.conv2.bias"):
            if name in params:
                params[name][...] = rng.normal(0.0, 0.1,
                                               size=params[name].shape)
    return params


def identity_mask_logits() -> np.ndarray:
    '''
    Logits whose 9-way softmax reproduces, for each of the 8×8 fine
    positions of a cell, separable linear interpolation weights between the
    cell center and its neighbors. Channel (fy·8 + fx)·9 + k holds neighbor
    k = (dy + 1)·3 + (dx + 1).
    '''
    factor = UPSAMPLE_FACTOR
    # Offset of each fine position from the cell center, in cells.
    offsets = (np.arange(factor) - (factor - 1) / 2) / factor
    floor = IDENTITY_WEIGHT_FLOOR
    taps = np.stack([
        floor + np.maximum(0.0, -offsets),
        1.0 - 2.0 * floor - np.abs(offsets),
        floor + np.maximum(0.0, offsets),
    ],
                    axis=1)
    weights = taps[:, None, :, None] * taps[None, :, None, :]
    return np.log(weights).reshape(factor * factor * NEIGHBORS)


def as_values(params: t.Mapping[str, np.ndarray],
              requires_grad: bool = False) -> dict[str, NdValue]:
    return {
        name: NdValue(value, requires_grad=requires_grad)
        for name, value in params.items()
    }


#
# Private helpers.
#


def _conv(shapes: dict[str, tuple[int, ...]], prefix: str, size: int,
          c_in: int, c_out: int) -> None:
    shapes[f"{prefix}.weight"] = (size, size, c_in, c_out)
    shapes[f"{prefix}.bias"] = (c_out,)


def _norm(shapes: dict[str, tuple[int, ...]], prefix: str, c: int) -> None:
    shapes[f"{prefix}.gain"] = (c,)
    shapes[f"{prefix}.bias"] = (c,)


def _attention(shapes: dict[str, tuple[int, ...]], prefix: str,
               c: int) -> None:
    for part in ATTENTION_PARTS:
        shapes[f"{prefix}.{part}"] = (c, c) if part.startswith("w") else (c,)


def _ffn(shapes: dict[str, tuple[int, ...]], prefix: str, c: int,
         hidden: int) -> None:
    shapes[f"{prefix}.w1"] = (c, hidden)
    shapes[f"{prefix}.b1"] = (hidden,)
    shapes[f"{prefix}.w2"] = (hidden, c)
    shapes[f"{prefix}.b2"] = (c,)
