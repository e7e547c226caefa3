import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json
import struct

import numpy as np
import pytest

from src.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from src.errors import (BadMagicError, CheckpointError, CheckpointStructureError, ConfigError,
                        TruncatedCheckpointError, VersionMismatchError)
from src.model import init_random
from src.schemas import ModelConfig


def random_config(rng):
    n_kv = int(rng.choice([1, 2]))
    n_heads = n_kv * int(rng.choice([1, 2]))
    head_dim = int(rng.choice([2, 4, 6]))
    return ModelConfig.create(n_layers=int(rng.integers(1, 5)), d_model=n_heads * head_dim, n_heads=n_heads,
                              n_kv_heads=n_kv, d_ff=int(rng.integers(1, 20)),
                              vocab_size=int(rng.integers(2, 40)), max_seq_len=int(rng.integers(2, 30)))


@pytest.mark.parametrize("seed", range(10))
def test_round_trip_is_bit_exact(tmp_path, seed):
    config = random_config(np.random.default_rng(seed))
    weights = init_random(config, seed)
    path = tmp_path / "model.skpt"
    save_checkpoint(weights, config, path)
    loaded_config, loaded = load_checkpoint(path)
    assert loaded_config == config
    original = weights.named_tensors()
    restored = loaded.named_tensors()
    assert list(original) == list(restored)
    for name in original:
        assert original[name].tobytes() == restored[name].tobytes(), name


def test_same_seed_gives_identical_files(tmp_path):
    config = random_config(np.random.default_rng(0))
    save_checkpoint(init_random(config, 1), config, tmp_path / "a.skpt")
    save_checkpoint(init_random(config, 1), config, tmp_path / "b.skpt")
    assert (tmp_path / "a.skpt").read_bytes() == (tmp_path / "b.skpt").read_bytes()


def test_header_layout(tmp_path):
    config = random_config(np.random.default_rng(3))
    save_checkpoint(init_random(config, 0), config, tmp_path / "m.skpt")
    data = (tmp_path / "m.skpt").read_bytes()
    assert data[:4] == MAGIC
    assert struct.unpack("<I", data[4:8])[0] == 1
    length = struct.unpack("<I", data[8:12])[0]
    assert json.loads(data[12:12 + length]) == config.model_dump()


def test_config_mismatch_on_save(tmp_path):
    config = random_config(np.random.default_rng(4))
    other = config.model_copy(update={"norm_eps": 0.5})
    with pytest.raises(ConfigError):
        save_checkpoint(init_random(config, 0), other, tmp_path / "m.skpt")


@pytest.fixture
def saved(tmp_path):
    config = ModelConfig.create(n_layers=2, d_model=8, n_heads=2, n_kv_heads=1, d_ff=12, vocab_size=10, max_seq_len=16)
    path = tmp_path / "m.skpt"
    save_checkpoint(init_random(config, 0), config, path)
    return path, config


def test_bad_magic(saved):
    path, _ = saved
    data = bytearray(path.read_bytes())
    data[:4] = b"XKPT"
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_version_mismatch(saved):
    path, _ = saved
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError) as info:
        load_checkpoint(path)
    assert info.value.version == 2


def test_truncated_payload(saved):
    path, _ = saved
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)


def test_layer_count_mismatch(saved):
    path, config = saved
    data = path.read_bytes()
    length = struct.unpack("<I", data[8:12])[0]
    fields = json.loads(data[12:12 + length])
    fields["n_layers"] = 3
    blob = json.dumps(fields, sort_keys=True).encode("utf-8")
    path.write_bytes(data[:8] + struct.pack("<I", len(blob)) + blob + data[12 + length:])
    with pytest.raises(CheckpointStructureError):
        load_checkpoint(path)


def test_trailing_bytes(saved):
    path, _ = saved
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointStructureError):
        load_checkpoint(path)


def test_load_errors_share_a_base(saved):
    path, _ = saved
    path.write_bytes(b"SK")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def _first_dim_offset(data):
    length = struct.unpack("<I", data[8:12])[0]
    # tensor count, name length, b"embed", ndims
    return 12 + length + 4 + 4 + len(b"embed") + 4


def test_corrupted_dim_is_a_structure_error(saved):
    path, _ = saved
    data = bytearray(path.read_bytes())
    offset = _first_dim_offset(data)
    data[offset:offset + 8] = struct.pack("<Q", 2 ** 40)
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointStructureError, match="embed"):
        load_checkpoint(path)


def test_oversized_name_length_is_truncation(saved):
    path, _ = saved
    data = bytearray(path.read_bytes())
    offset = _first_dim_offset(data) - 4 - len(b"embed") - 4
    data[offset:offset + 4] = struct.pack("<I", 2 ** 31)
    path.write_bytes(bytes(data))
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)


def test_corrupted_checkpoint_exits_with_io_code(saved):
    from src.main import main

    path, _ = saved
    data = bytearray(path.read_bytes())
    offset = _first_dim_offset(data)
    data[offset:offset + 8] = struct.pack("<Q", 2 ** 40)
    path.write_bytes(bytes(data))
    assert main(["plan", "attn,k=1,keep_last=false", "--checkpoint", str(path)]) == 1
