import json
import struct

import numpy as np
import pytest

from histofusion.checkpoint import (MAGIC, VERSION, decode, encode, load_checkpoint, load_state,
                                    read_checkpoint, save_checkpoint)
from histofusion.config import ModelConfig
from histofusion.core.tensor import Tensor
from histofusion.errors import (CorruptHeaderError, MissingTensorError, ShapeMismatchError,
                                TruncatedPayloadError, UnknownTensorError, VersionMismatchError)
from histofusion.network import build_model, forward


@pytest.fixture(scope="module")
def model():
    return build_model(ModelConfig(seed=11))


@pytest.fixture
def saved(model, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    return path


def rewrite_header(blob: bytes, edit) -> bytes:
    """Apply ``edit`` to the decoded JSON header and re-pack the file."""
    _, version, hlen = struct.unpack_from("<8sIQ", blob)
    start = struct.calcsize("<8sIQ")
    header = json.loads(blob[start:start + hlen])
    edit(header)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return struct.pack("<8sIQ", MAGIC, version, len(text)) + text + blob[start + hlen:]


class TestRoundTrip:
    def test_save_load_save_byte_identical(self, saved, tmp_path):
        again = tmp_path / "again.ckpt"
        save_checkpoint(load_checkpoint(saved), again)
        assert again.read_bytes() == saved.read_bytes()

    def test_parameters_bit_exact(self, model, saved):
        loaded = load_checkpoint(saved)
        a, b = model.state_dict(), loaded.state_dict()
        assert list(a) == list(b)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_inference_bit_identical(self, model, saved):
        image = Tensor(np.random.default_rng(3).uniform(0, 1, (1, 3, 16, 16)))
        _, before, _ = forward(model, image)
        _, after, _ = forward(load_checkpoint(saved), image)
        assert before.data.tobytes() == after.data.tobytes()

    def test_config_echoed(self, model, saved):
        header, _ = read_checkpoint(saved)
        assert ModelConfig.from_dict(header["config"]) == model.config

    def test_extra_round_trip(self, model):
        header, _ = decode(encode(model.state_dict(), model.config.to_dict(), {"stage": 2}))
        assert header["extra"] == {"stage": 2}

    def test_encoding_is_little_endian_float32(self):
        blob = encode({"w": np.array([1.0, -2.0])}, {})
        assert blob[-8:] == struct.pack("<2f", 1.0, -2.0)


class TestCorruptFiles:
    def test_short_file(self, tmp_path):
        path = tmp_path / "short.ckpt"
        path.write_bytes(MAGIC[:5])
        with pytest.raises(CorruptHeaderError, match="short"):
            read_checkpoint(path)

    def test_bad_magic(self, saved):
        blob = b"NOTCKPT\0" + saved.read_bytes()[8:]
        with pytest.raises(CorruptHeaderError, match="magic"):
            decode(blob)

    def test_bad_json(self, saved):
        blob = bytearray(saved.read_bytes())
        blob[struct.calcsize("<8sIQ")] = ord("#")
        with pytest.raises(CorruptHeaderError, match="header"):
            decode(bytes(blob))

    def test_header_longer_than_file(self, saved):
        blob = saved.read_bytes()
        blob = blob[:12] + struct.pack("<Q", len(blob) * 2) + blob[20:]
        with pytest.raises(CorruptHeaderError):
            decode(blob)

    def test_version_mismatch(self, saved):
        blob = saved.read_bytes()
        blob = blob[:8] + struct.pack("<I", VERSION + 1) + blob[12:]
        with pytest.raises(VersionMismatchError, match=str(VERSION + 1)):
            decode(blob)

    def test_truncated_payload(self, saved, tmp_path):
        path = tmp_path / "cut.ckpt"
        path.write_bytes(saved.read_bytes()[:-100])
        with pytest.raises(TruncatedPayloadError):
            load_checkpoint(path)

    def test_unknown_tensor(self, saved):
        def rename(header):
            header["tensors"][0]["name"] = "no_such_weight"
        path = saved.with_name("renamed.ckpt")
        path.write_bytes(rewrite_header(saved.read_bytes(), rename))
        with pytest.raises(UnknownTensorError, match="no_such_weight"):
            load_checkpoint(path)

    def test_shape_mismatch_names_tensor(self, saved):
        def reshape(header):
            entry = next(e for e in header["tensors"] if e["name"] == "stem_w")
            entry["shape"] = list(reversed(entry["shape"]))
        path = saved.with_name("reshaped.ckpt")
        path.write_bytes(rewrite_header(saved.read_bytes(), reshape))
        with pytest.raises(ShapeMismatchError, match="stem_w"):
            load_checkpoint(path)

    def test_missing_tensor(self, model):
        state = model.state_dict()
        state.pop("head_b")
        with pytest.raises(MissingTensorError, match="head_b"):
            load_state(build_model(model.config), state)

    def test_failed_load_leaves_model_untouched(self, model):
        target = build_model(ModelConfig(seed=12))
        before = {k: v.copy() for k, v in target.state_dict().items()}
        state = model.state_dict()
        state["zz_unknown"] = np.zeros(1, np.float32)
        with pytest.raises(UnknownTensorError):
            load_state(target, state)
        assert all(before[k].tobytes() == v.tobytes() for k, v in target.state_dict().items())

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(CorruptHeaderError, match="missing.ckpt"):
            read_checkpoint(tmp_path / "missing.ckpt")

    def test_errors_are_distinct(self):
        kinds = [CorruptHeaderError, TruncatedPayloadError, UnknownTensorError,
                 ShapeMismatchError, VersionMismatchError, MissingTensorError]
        assert len(set(kinds)) == len(kinds)
        assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)


DROPS = {
    "use_histogram_blocks": "histogram.",
    "use_frequency_branch": "freq_branch.",
    "use_refinement": "refine.",
}


class TestAblationDiff:
    @pytest.mark.parametrize("flag,prefix", DROPS.items())
    def test_checkpoint_diff_is_exactly_the_dropped_module(self, flag, prefix, tmp_path):
        full, cut = tmp_path / "full.ckpt", tmp_path / "cut.ckpt"
        save_checkpoint(build_model(ModelConfig()), full)
        save_checkpoint(build_model(ModelConfig().replace(**{f"ablation.{flag}": False})), cut)
        names_full = set(read_checkpoint(full)[1])
        names_cut = set(read_checkpoint(cut)[1])
        removed = names_full - names_cut
        assert names_cut < names_full and removed
        assert all(n.startswith(prefix) for n in removed)
        assert not any(n.startswith(prefix) for n in names_cut)

    def test_stage1_checkpoint_loads_into_larger_model(self, tmp_path):
        path = tmp_path / "s1.ckpt"
        small = build_model(ModelConfig(seed=2).replace(**{"ablation.use_refinement": False}))
        save_checkpoint(small, path)
        model = load_checkpoint(path, config=ModelConfig(seed=2), strict=False)
        assert model.stem_w.data.tobytes() == small.stem_w.data.tobytes()
