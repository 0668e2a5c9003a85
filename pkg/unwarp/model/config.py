import json
import logging
import typing as t
from dataclasses import dataclass, replace

import yaml
from mashumaro import DataClassDictMixin

LOG = logging.getLogger(__name__)

QUERY_MODES = ("learned", "fixed")
UPSAMPLE_MODES = ("learned", "bilinear")
UPSAMPLE_PADDINGS = ("extrapolate", "replicate")
FLOW_BASES = ("identity", "zero")
POSITIONAL_KINDS = ("sine",)

# The backbone works at 1/8 and the encoder halves that twice more.
SPATIAL_DIVISOR = 32
UPSAMPLE_FACTOR = 8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig(DataClassDictMixin):
    '''
    Every architectural hyperparameter of the rectification network.
    Instances are validated on construction.
    '''
    height: int = 288
    width: int = 288
    backbone_channels: tuple[int, int, int] = (32, 64, 128)
    hidden_dim: int = 256
    encoder_blocks: int = 3
    encoder_layers_per_block: int = 2
    decoder_blocks: int = 3
    decoder_layers_per_block: int = 2
    heads: int = 8
    ffn_dim: int = 512
    query_mode: str = "learned"
    upsample_mode: str = "learned"
    upsample_padding: str = "extrapolate"
    flow_base: str = "identity"
    positional: str = "sine"
    # Re-add the positional embedding to the decoder tokens at every block.
    decoder_pos_every_block: bool = True

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0 \
                or self.height % SPATIAL_DIVISOR or self.width % SPATIAL_DIVISOR:
            raise ConfigError(
                f"Input extents must be positive multiples of "
                f"{SPATIAL_DIVISOR}, got {self.height}×{self.width}")
        if len(self.backbone_channels) != 3 or min(self.backbone_channels) < 1:
            raise ConfigError(f"Backbone needs three positive stage widths, "
                              f"got {self.backbone_channels}")
        if self.hidden_dim % 4:
            raise ConfigError(f"hidden_dim must be divisible by 4 for the "
                              f"sine embedding, got {self.hidden_dim}")
        if self.heads < 1 or self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible "
                              f"by {self.heads} heads")
        if self.encoder_blocks != 3 or self.decoder_blocks != 3:
            raise ConfigError(
                "The feature hierarchy has exactly three levels, got "
                f"{self.encoder_blocks} encoder and {self.decoder_blocks} "
                f"decoder blocks")
        if self.encoder_layers_per_block < 0 or self.decoder_layers_per_block < 0:
            raise ConfigError("Layers per block cannot be negative")
        if self.ffn_dim < 1:
            raise ConfigError(f"Bad feed-forward width {self.ffn_dim}")
        for name, value, allowed in [
            ("query_mode", self.query_mode, QUERY_MODES),
            ("upsample_mode", self.upsample_mode, UPSAMPLE_MODES),
            ("upsample_padding", self.upsample_padding, UPSAMPLE_PADDINGS),
            ("flow_base", self.flow_base, FLOW_BASES),
            ("positional", self.positional, POSITIONAL_KINDS),
        ]:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got "
                                  f"{value!r}")

    @property
    def coarse_extents(self) -> tuple[int, int]:
        return self.height // UPSAMPLE_FACTOR, self.width // UPSAMPLE_FACTOR

    def pyramid_extents(self) -> list[tuple[int, int]]:
        '''(h, w) of E2, E4 and E6.'''
        h, w = self.coarse_extents
        return [(h, w), (h // 2, w // 2), (h // 4, w // 4)]

    def to_canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_overrides(self, **overrides: t.Any) -> "ModelConfig":
        '''Copy with the non-None `overrides` applied.'''
        changes = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(changes) - set(self.to_dict())
        if unknown:
            raise ConfigError(f"Unknown model config keys: {sorted(unknown)}")
        try:
            return replace(self, **changes)
        except TypeError as ex:
            raise ConfigError(str(ex)) from ex

    @staticmethod
    def full() -> "ModelConfig":
        return ModelConfig()

    @staticmethod
    def toy() -> "ModelConfig":
        return ModelConfig(height=64,
                           width=64,
                           backbone_channels=(16, 32, 64),
                           hidden_dim=64,
                           heads=4,
                           ffn_dim=128)

    @staticmethod
    def tiny() -> "ModelConfig":
        return ModelConfig(height=32,
                           width=32,
                           backbone_channels=(8, 16, 16),
                           hidden_dim=32,
                           heads=4,
                           ffn_dim=64)


PRESETS: dict[str, t.Callable[[], ModelConfig]] = {
    "full": ModelConfig.full,
    "toy": ModelConfig.toy,
    "tiny": ModelConfig.tiny,
}


def load_config(preset: str = "toy",
                yaml_path: str | None = None,
                **overrides: t.Any) -> ModelConfig:
    '''
    Preset, then the YAML file's keys (if any), then `overrides`. The YAML
    file is a flat mapping of ModelConfig fields.
    '''
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}, expected one of "
                          f"{sorted(PRESETS)}")
    config = PRESETS[preset]()
    if yaml_path is not None:
        with open(yaml_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{yaml_path} must hold a mapping of config keys")
        if "backbone_channels" in data:
            data["backbone_channels"] = tuple(data["backbone_channels"])
        LOG.debug("Applying config overrides from %s: %s", yaml_path, data)
        config = config.with_overrides(**data)
    return config.with_overrides(**overrides)
