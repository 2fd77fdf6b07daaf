import numpy as np
import pytest

from hopnet import checkpoint, formats
from hopnet.errors import FormatError
from hopnet.features import build_features, normalize
from hopnet.model import ModelParams, ModelSpec, forward
from test_model import micro_scene


def trained_like_params(spec):
    params = ModelParams.initialize(spec, seed=3)
    cc, hist, phys = micro_scene()
    normalize(build_features(hist, cc, phys), params.normalizers, update=True)
    return params, cc, hist, phys


@pytest.mark.parametrize("spec", [ModelSpec(hidden=8), ModelSpec(hidden=8, processor_steps=2, no_object_cells=True)])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, spec):
    params, *_ = trained_like_params(spec)
    path = tmp_path / "model.ckpt"
    digest = checkpoint.save(path, params, {"step": 12})
    back, extra = checkpoint.load(path)
    assert extra == {"step": 12}
    assert back.spec == params.spec
    assert list(back.arrays) == list(params.arrays)
    for name, arr in params.arrays.items():
        assert back.arrays[name].tobytes() == arr.tobytes()
    assert checkpoint.to_bytes(back, {"step": 12}) == path.read_bytes()
    assert digest == formats.sha256_file(path)


def test_loaded_checkpoint_predicts_identically(tmp_path):
    params, cc, hist, phys = trained_like_params(ModelSpec(hidden=8))
    bundle = normalize(build_features(hist, cc, phys), params.normalizers, update=False)
    before = forward(bundle, cc, params)
    back, _ = checkpoint.from_bytes(checkpoint.to_bytes(params))
    bundle_back = normalize(build_features(hist, cc, phys), back.normalizers, update=False)
    after = forward(bundle_back, cc, back)
    for a, b in zip(before, after):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_rejects_future_version_and_foreign_files():
    params, *_ = trained_like_params(ModelSpec(hidden=4))
    blob = checkpoint.to_bytes(params)
    _, version, hlen = formats._PREFIX.unpack_from(blob, 0)
    future = formats._PREFIX.pack(checkpoint.MAGIC, version + 1, hlen) + blob[formats._PREFIX.size:]
    with pytest.raises(FormatError, match="newer"):
        checkpoint.from_bytes(future)
    with pytest.raises(FormatError, match="magic"):
        checkpoint.from_bytes(b"HOPNTRJ\0" + blob[8:])
    with pytest.raises(FormatError):
        checkpoint.from_bytes(blob[:10])


def test_container_detects_truncated_payload():
    blob = formats.encode(b"TESTFMT\0", 1, {"k": 1}, {"a": np.arange(10.0)})
    version, meta, arrays = formats.decode(blob, b"TESTFMT\0", 1)
    assert meta == {"k": 1} and version == 1
    np.testing.assert_array_equal(arrays["a"], np.arange(10.0))
    with pytest.raises(FormatError, match="past end"):
        formats.decode(blob[:-8], b"TESTFMT\0", 1)


def test_container_keeps_integer_arrays_and_order():
    arrays = {"z": np.array([[1, 2], [3, 4]]), "a": np.array([True, False])}
    _, _, back = formats.decode(formats.encode(b"TESTFMT\0", 1, {}, arrays), b"TESTFMT\0", 1)
    assert list(back) == ["z", "a"]
    assert back["z"].dtype == np.int64
    np.testing.assert_array_equal(back["a"], [1, 0])
