import hashlib
import os
import struct

import numpy as np
import pytest

from unwarp.core.optim import AdamWState, adamw_step
from unwarp.core.raster import ImageRaster
from unwarp.model.checkpoint import (Checkpoint, CheckpointError,
                                     CheckpointMismatchError,
                                     decode_checkpoint, encode_checkpoint,
                                     load_checkpoint, save_checkpoint)
from unwarp.model.config import ModelConfig
from unwarp.model.network import model_forward
from unwarp.model.params import as_values, init_params


@pytest.fixture
def checkpoint(f32) -> Checkpoint:
    config = ModelConfig.tiny()
    return Checkpoint(config, init_params(config, seed=9, identity_head=False),
                      step=17)


def test_round_trip_keeps_the_forward_pass_bit_identical(checkpoint, rng):
    restored = decode_checkpoint(encode_checkpoint(checkpoint))
    assert restored.config == checkpoint.config
    assert restored.step == 17
    assert restored.optimizer is None
    assert list(restored.params) == list(checkpoint.params)
    for name, value in checkpoint.params.items():
        assert restored.params[name].dtype == np.float32
        np.testing.assert_array_equal(restored.params[name], value)

    image = ImageRaster(rng.uniform(size=(32, 32, 3)))
    before = model_forward(image, as_values(checkpoint.params),
                           checkpoint.config)
    after = model_forward(image, as_values(restored.params), restored.config)
    np.testing.assert_array_equal(before.u, after.u)
    np.testing.assert_array_equal(before.v, after.v)


def test_optimizer_state_round_trips(checkpoint, rng):
    grads = {
        name: rng.normal(size=value.shape).astype(np.float32)
        for name, value in checkpoint.params.items()
    }
    params, state = adamw_step(checkpoint.params, grads,
                               AdamWState.zeros_like(checkpoint.params), 1e-3)
    restored = decode_checkpoint(
        encode_checkpoint(Checkpoint(checkpoint.config, params, 1, state)))
    assert restored.optimizer is not None
    assert restored.optimizer.step == 1
    for name in params:
        np.testing.assert_array_equal(restored.optimizer.m[name], state.m[name])
        np.testing.assert_array_equal(restored.optimizer.v[name], state.v[name])


def test_corruption_is_detected(checkpoint):
    payload = bytearray(encode_checkpoint(checkpoint))
    payload[len(payload) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(payload))


def test_malformed_headers(checkpoint):
    payload = encode_checkpoint(checkpoint)
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOPE" + payload[4:])
    with pytest.raises(CheckpointError, match="Truncated"):
        decode_checkpoint(payload[:10])
    with pytest.raises(CheckpointError):
        decode_checkpoint(payload[:-40])


def test_unknown_version_is_named(checkpoint):
    body = bytearray(encode_checkpoint(checkpoint)[:-32])
    body[4:8] = struct.pack("<I", 2)
    repacked = bytes(body) + hashlib.sha256(bytes(body)).digest()
    with pytest.raises(CheckpointError, match="version 2"):
        decode_checkpoint(repacked)


def test_architecture_mismatch_names_both_shapes(checkpoint, tmp_path):
    path = str(tmp_path / "model.uwck")
    save_checkpoint(path, checkpoint)
    assert os.listdir(tmp_path) == ["model.uwck"]
    with pytest.raises(CheckpointMismatchError,
                       match=r"\(3, 3, 3, 8\).*\(3, 3, 3, 16\)"):
        load_checkpoint(path, expected=ModelConfig.toy())
    assert load_checkpoint(path, expected=ModelConfig.tiny()).step == 17


def test_incomplete_parameters_are_rejected(checkpoint):
    params = dict(checkpoint.params)
    params.pop("head.flow.conv2.bias")
    with pytest.raises(CheckpointMismatchError, match="missing"):
        encode_checkpoint(Checkpoint(checkpoint.config, params))
