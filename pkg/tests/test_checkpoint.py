"""Parameter registry and binary checkpoint format."""

import struct

import numpy as np
import pytest

from mmdn import engine as E
from mmdn.checkpoint import (MAGIC, CheckpointError, load_checkpoint,
                             read_arrays, save_checkpoint, write_arrays)
from mmdn.params import ParamRegistry


class TestRegistry:
    def test_duplicate_names_rejected(self):
        reg = ParamRegistry()
        reg.add("a.w", np.ones(2))
        with pytest.raises(ValueError, match="duplicate"):
            reg.add("a.w", np.ones(2))

    def test_insertion_order_preserved(self):
        reg = ParamRegistry()
        for name in ("z", "a", "m"):
            reg.add(name, np.zeros(1))
        assert reg.names() == ["z", "a", "m"]

    def test_trainable_filter_and_counts(self):
        reg = ParamRegistry()
        reg.add("w", np.ones((2, 3)))
        reg.add("stats", np.zeros(4), trainable=False)
        assert [p.name for p in reg.trainable()] == ["w"]
        assert reg.num_scalars() == 6
        assert reg.num_scalars(trainable_only=False) == 10

    def test_load_values_shape_mismatch(self):
        reg = ParamRegistry()
        reg.add("w", np.ones((2, 2)))
        with pytest.raises(ValueError, match="shape mismatch"):
            reg.load_values({"w": np.ones((3, 3))})

    def test_load_values_missing_and_unknown(self):
        reg = ParamRegistry()
        reg.add("w", np.ones(2))
        with pytest.raises(KeyError, match="missing"):
            reg.load_values({})
        with pytest.raises(KeyError, match="unknown"):
            reg.load_values({"w": np.ones(2), "ghost": np.ones(1)})


class TestCheckpointFormat:
    def test_empty_registry_roundtrip(self, tmp_path):
        reg = ParamRegistry()
        path = tmp_path / "empty.ckpt"
        save_checkpoint(reg, path)
        assert len(load_checkpoint(path)) == 0

    def test_single_tensor_bit_exact(self, tmp_path):
        reg = ParamRegistry()
        reg.add("m", np.array([[1.25, -3.5], [0.1, 2.0]], dtype=np.float32))
        path = tmp_path / "one.ckpt"
        save_checkpoint(reg, path)
        loaded = load_checkpoint(path)
        got = loaded["m"].node.value
        assert got.dtype == np.float32
        assert np.array_equal(got.view(np.uint32), reg["m"].node.value.view(np.uint32))

    def test_header_layout(self, tmp_path):
        path = tmp_path / "h.ckpt"
        write_arrays(path, [("ab", np.zeros((2, 3), dtype=np.float64))])
        raw = path.read_bytes()
        assert raw[:4] == MAGIC == b"MMDN"
        version, count = struct.unpack_from("<II", raw, 4)
        assert (version, count) == (1, 1)
        (name_len,) = struct.unpack_from("<H", raw, 12)
        assert name_len == 2
        assert raw[14:16] == b"ab"
        code, ndim = struct.unpack_from("<BB", raw, 16)
        assert (code, ndim) == (1, 2)          # 1 = double
        assert struct.unpack_from("<II", raw, 18) == (2, 3)
        assert len(raw) == 26 + 6 * 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            read_arrays(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v9.ckpt"
        path.write_bytes(MAGIC + struct.pack("<II", 9, 0))
        with pytest.raises(CheckpointError, match="version"):
            read_arrays(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.ckpt"
        write_arrays(path, [("w", np.ones(4, dtype=np.float32))])
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(CheckpointError, match="truncated"):
            read_arrays(path)

    def test_duplicate_names_rejected_on_write(self, tmp_path):
        with pytest.raises(CheckpointError, match="duplicate"):
            write_arrays(tmp_path / "d.ckpt",
                         [("w", np.ones(1)), ("w", np.ones(1))])

    def test_mixed_dtype_roundtrip(self, tmp_path):
        items = [("single", np.ones(3, dtype=np.float32)),
                 ("double", np.ones(3, dtype=np.float64))]
        path = tmp_path / "mix.ckpt"
        write_arrays(path, items)
        out = read_arrays(path)
        assert out["single"].dtype == np.float32
        assert out["double"].dtype == np.float64

    def test_save_load_save_identical_bytes(self, tmp_path, rng):
        reg = ParamRegistry()
        for i in range(5):
            reg.add(f"layer{i}.w", rng.standard_normal((3, 2)))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(reg, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestModelRoundTrip:
    def test_full_model_forward_identical_to_the_bit(self, tmp_path, rng):
        from mmdn.densenet import MultimodalDenseNetConfig, build_mmdensenet
        cfg = MultimodalDenseNetConfig(num_classes=3, image_size=16,
                                       growth_rate=4, block_layers=[3, 3, 2])
        model = build_mmdensenet(cfg, seed=1)
        assert len(model.registry) >= 100
        path = tmp_path / "model.ckpt"
        save_checkpoint(model.registry, path)

        xa = rng.random((2, 3, 16, 16)).astype(np.float32)
        xb = rng.random((2, 1, 16, 16)).astype(np.float32)
        before = model.predict_logits(xa, xb)

        clone = build_mmdensenet(cfg, seed=99)
        clone.registry.load_values(read_arrays(path))
        after = clone.predict_logits(xa, xb)
        assert np.array_equal(before, after)
