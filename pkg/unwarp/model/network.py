'''
Forward pass of the rectification network.

    image (H, W, 3)
      -> backbone                 (H/8, W/8, C)
      -> hierarchical encoder     E2 (H/8), E4 (H/16), E6 (H/32)
      -> query decoder            D6 (H/8, W/8, C), attending E6, E4 then E2
      -> flow head                backward flow (H, W, 2) in input pixels

Every function takes the parameters as a mapping of dotted names to
`NdValue`s, so the same code runs for inference and, inside a `Tape`, for
training.
'''
import typing as t
from dataclasses import dataclass, field

import numpy as np

from unwarp.core import autodiff as ad
from unwarp.core.autodiff import NdValue
from unwarp.core.flow import WarpFlow
from unwarp.core.raster import ImageRaster
from unwarp.model.config import UPSAMPLE_FACTOR, ConfigError, ModelConfig
from unwarp.model.params import ATTENTION_PARTS, NEIGHBORS

ParamValues = t.Mapping[str, NdValue]

POSITIONAL_TEMPERATURE = 10000.0


@dataclass(frozen=True)
class FeaturePyramid:
    e2: NdValue
    e4: NdValue
    e6: NdValue

    def levels(self) -> list[NdValue]:
        return [self.e2, self.e4, self.e6]


@dataclass
class ForwardTrace:
    '''
    Optional capture of intermediate results. Each cross-attention entry
    is (block, layer, weights) with weights shaped (heads, queries, tokens).
    '''
    cross_attention: list[tuple[int, int, np.ndarray]] = field(
        default_factory=list)
    coarse_flow: np.ndarray | None = None


def backbone_forward(image: NdValue, params: ParamValues,
                     config: ModelConfig) -> NdValue:
    '''Six residual blocks in three stride-2 stages, then a 1×1 projection.'''
    h, w = image.shape[:2]
    if h % UPSAMPLE_FACTOR or w % UPSAMPLE_FACTOR:
        raise ConfigError(f"Backbone input extents must be divisible by "
                          f"{UPSAMPLE_FACTOR}, got {h}×{w}")
    x = image
    for stage in range(len(config.backbone_channels)):
        for block in range(2):
            x = _residual_block(x, params, f"backbone.stage{stage}.block{block}",
                                stride=2 if block == 0 else 1)
    return _conv(x, params, "backbone.proj", padding=0)


def positional_embedding(h: int, w: int, c: int) -> np.ndarray:
    '''
    Fixed 2D sine embedding. Channels [0, c/2) encode the column and
    [c/2, c) the row, each as interleaved sin/cos pairs at geometrically
    spaced frequencies.
    '''
    if c % 4:
        raise ConfigError(f"Sine positional embedding needs channels "
                          f"divisible by 4, got {c}")
    quarter = c // 4
    frequencies = 1.0 / POSITIONAL_TEMPERATURE**(np.arange(quarter) / quarter)

    def _encode(positions: np.ndarray) -> np.ndarray:
        angles = positions[:, None] * frequencies[None, :]
        return np.stack([np.sin(angles), np.cos(angles)],
                        axis=-1).reshape(len(positions), 2 * quarter)

    columns = _encode(np.arange(w, dtype=np.float64))
    rows = _encode(np.arange(h, dtype=np.float64))
    embedding = np.concatenate([
        np.broadcast_to(columns[None, :, :], (h, w, 2 * quarter)),
        np.broadcast_to(rows[:, None, :], (h, w, 2 * quarter)),
    ],
                               axis=-1)
    return embedding.astype(ad.default_dtype())


def encoder_forward(features: NdValue, params: ParamValues,
                    config: ModelConfig) -> FeaturePyramid:
    expected = config.coarse_extents + (config.hidden_dim,)
    if features.shape != expected:
        raise ConfigError(f"Encoder expects features of shape {expected}, "
                          f"got {features.shape}")
    levels: list[NdValue] = []
    x = features
    for block in range(config.encoder_blocks):
        if block > 0:
            x = _conv(x, params, f"encoder.down{block}", stride=2)
        h, w, c = x.shape
        tokens = ad.reshape(
            ad.add(x, positional_embedding(h, w, c)), (h * w, c))
        for layer in range(config.encoder_layers_per_block):
            tokens = _encoder_layer(tokens, params,
                                    f"encoder.block{block}.layer{layer}",
                                    config.heads)
        x = ad.reshape(tokens, (h, w, c))
        levels.append(x)
    return FeaturePyramid(*levels)


def decoder_forward(pyramid: FeaturePyramid,
                    params: ParamValues,
                    config: ModelConfig,
                    trace: ForwardTrace | None = None) -> NdValue:
    '''
    Queries at the E6 resolution attend E6, are upsampled 2×, attend E4,
    are upsampled again and attend E2. Returns D6 at (H/8, W/8, C).
    '''
    c = config.hidden_dim
    extents = config.pyramid_extents()
    for level, (h, w) in zip(pyramid.levels(), extents):
        if level.shape != (h, w, c):
            raise ConfigError(f"Pyramid level {level.shape} does not match "
                              f"the configured {(h, w, c)}")

    top_h, top_w = extents[-1]
    top_pos = positional_embedding(top_h, top_w, c)
    if config.query_mode == "learned":
        x = ad.add(params["decoder.queries"], top_pos)
    else:
        x = ad.constant(top_pos)

    memories = [pyramid.e6, pyramid.e4, pyramid.e2]
    for block, memory in enumerate(memories):
        h, w = memory.shape[:2]
        if block > 0:
            x = ad.resize_bilinear(x, h, w)
            if config.decoder_pos_every_block:
                x = ad.add(x, positional_embedding(h, w, c))
        tokens = ad.reshape(x, (h * w, c))
        memory_tokens = ad.reshape(memory, (h * w, c))
        for layer in range(config.decoder_layers_per_block):
            tokens, attention = _decoder_layer(
                tokens, memory_tokens, params,
                f"decoder.block{block}.layer{layer}", config.heads)
            if trace is not None:
                trace.cross_attention.append(
                    (block, layer, attention.data.copy()))
        x = ad.reshape(tokens, (h, w, c))
    return x


def flow_head(decoded: NdValue,
              params: ParamValues,
              config: ModelConfig,
              trace: ForwardTrace | None = None) -> NdValue:
    '''
    Full-resolution backward flow (H, W, 2), channels (u, v) in input
    pixels. The coarse flow is the flow branch's output plus the coarse
    base grid. The learned upsampler writes every fine pixel as a softmax
    weighted combination of the coarse 3×3 neighborhood of its cell.
    '''
    h, w = decoded.shape[:2]
    hidden = ad.relu(_conv(decoded, params, "head.flow.conv1"))
    coarse = ad.add(_conv(hidden, params, "head.flow.conv2"),
                    coarse_base_grid(h, w, config.flow_base))
    if trace is not None:
        trace.coarse_flow = coarse.data.copy()

    if config.upsample_mode == "bilinear":
        return ad.resize_bilinear(coarse,
                                  h * UPSAMPLE_FACTOR,
                                  w * UPSAMPLE_FACTOR,
                                  extrapolate=True)

    factor = UPSAMPLE_FACTOR
    hidden = ad.relu(_conv(decoded, params, "head.mask.conv1"))
    logits = _conv(hidden, params, "head.mask.conv2", padding=0)
    weights = ad.softmax(ad.reshape(logits,
                                    (h * w, factor * factor, NEIGHBORS)),
                         axis=-1)
    neighbors = ad.reshape(
        ad.unfold3x3(ad.pad_edges(coarse, config.upsample_padding)),
        (h * w, NEIGHBORS, 2))
    fine = ad.reshape(ad.matmul(weights, neighbors),
                      (h, w, factor, factor, 2))
    return ad.reshape(ad.transpose(fine, (0, 2, 1, 3, 4)),
                      (h * factor, w * factor, 2))


def coarse_base_grid(h: int, w: int, base: str) -> np.ndarray:
    '''Pixel coordinates of the coarse cell centers, or zeros.'''
    grid = np.zeros((h, w, 2), dtype=ad.default_dtype())
    if base == "identity":
        center = (UPSAMPLE_FACTOR - 1) / 2
        grid[:, :, 0] = (UPSAMPLE_FACTOR * np.arange(w) + center)[None, :]
        grid[:, :, 1] = (UPSAMPLE_FACTOR * np.arange(h) + center)[:, None]
    return grid


def network_forward(image: NdValue,
                    params: ParamValues,
                    config: ModelConfig,
                    trace: ForwardTrace | None = None) -> NdValue:
    '''The whole network on an (H, W, 3) input; returns the (H, W, 2) flow.'''
    expected = (config.height, config.width, 3)
    if image.shape != expected:
        raise ConfigError(f"Network expects input {expected}, got "
                          f"{image.shape}")
    features = backbone_forward(ad.sub(image, 0.5), params, config)
    pyramid = encoder_forward(features, params, config)
    decoded = decoder_forward(pyramid, params, config, trace)
    return flow_head(decoded, params, config, trace)


def model_forward(image: ImageRaster,
                  params: ParamValues,
                  config: ModelConfig,
                  trace: ForwardTrace | None = None) -> WarpFlow:
    flow = network_forward(NdValue(image.pixels), params, config, trace)
    return WarpFlow.from_stacked(flow.data.astype(np.float64))


#
# Private helpers.
#


def _conv(x: NdValue,
          params: ParamValues,
          prefix: str,
          stride: int = 1,
          padding: int | None = None) -> NdValue:
    kernel = params[f"{prefix}.weight"]
    if padding is None:
        padding = kernel.shape[0] // 2
    return ad.conv2d(x,
                     kernel,
                     params[f"{prefix}.bias"],
                     stride=stride,
                     padding=padding)


def _residual_block(x: NdValue, params: ParamValues, prefix: str,
                    stride: int) -> NdValue:
    branch = ad.relu(_conv(x, params, f"{prefix}.conv1", stride=stride))
    branch = _conv(branch, params, f"{prefix}.conv2")
    if f"{prefix}.skip.weight" in params:
        skip = _conv(x, params, f"{prefix}.skip", stride=stride, padding=0)
    else:
        skip = x
    return ad.add(skip, branch)


def _attention_weights(params: ParamValues,
                       prefix: str) -> ad.AttentionWeights:
    return ad.AttentionWeights(
        **{part: params[f"{prefix}.{part}"] for part in ATTENTION_PARTS})


def _norm(x: NdValue, params: ParamValues, prefix: str) -> NdValue:
    return ad.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _ffn(x: NdValue, params: ParamValues, prefix: str) -> NdValue:
    hidden = ad.gelu(ad.linear(x, params[f"{prefix}.w1"],
                               params[f"{prefix}.b1"]))
    return ad.linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _encoder_layer(tokens: NdValue, params: ParamValues, prefix: str,
                   heads: int) -> NdValue:
    attended, _ = ad.multi_head_attention(
        tokens, tokens, tokens, heads,
        _attention_weights(params, f"{prefix}.attn"))
    tokens = _norm(ad.add(tokens, attended), params, f"{prefix}.norm1")
    return _norm(ad.add(tokens, _ffn(tokens, params, f"{prefix}.ffn")), params,
                 f"{prefix}.norm2")


def _decoder_layer(tokens: NdValue, memory: NdValue, params: ParamValues,
                   prefix: str, heads: int) -> tuple[NdValue, NdValue]:
    attended, _ = ad.multi_head_attention(
        tokens, tokens, tokens, heads,
        _attention_weights(params, f"{prefix}.self_attn"))
    tokens = _norm(ad.add(tokens, attended), params, f"{prefix}.norm1")
    attended, attention = ad.multi_head_attention(
        tokens, memory, memory, heads,
        _attention_weights(params, f"{prefix}.cross_attn"))
    tokens = _norm(ad.add(tokens, attended), params, f"{prefix}.norm2")
    tokens = _norm(ad.add(tokens, _ffn(tokens, params, f"{prefix}.ffn")),
                   params, f"{prefix}.norm3")
    return tokens, attention

