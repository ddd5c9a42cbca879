import json
import struct

import numpy as np
import pytest

from lola.modelio import FormatError, load_csv_features, load_idx, load_input, load_model, save_idx, save_model
from lola.network import QuantizationPolicy, ShapeError
from lola.network.presets import mnist_network, toy_network


def test_model_roundtrip(tmp_path, rng):
    net = toy_network(rng)
    policy = QuantizationPolicy(2.0, 8.0, None, 15.0)
    path = save_model(tmp_path / "toy.json", net, policy)
    back, pol = load_model(path)
    assert pol == policy
    assert back.shapes() == net.shapes()
    x = rng.normal(size=int(np.prod(net.input_shape)))
    assert np.allclose(back.forward(x), net.forward(x))


def test_blobs_are_little_endian_float32(tmp_path):
    save_model(tmp_path / "m.json", mnist_network())
    manifest = json.loads((tmp_path / "m.json").read_text())
    conv = manifest["layers"][0]
    raw = (tmp_path / conv["weights"]["file"]).read_bytes()
    assert len(raw) == 4 * 5 * 25
    first = struct.unpack("<f", raw[:4])[0]
    assert first == np.float32(mnist_network().layers[0].weights[0, 0, 0, 0])


def test_manifest_errors(tmp_path):
    save_model(tmp_path / "m.json", mnist_network())
    m = json.loads((tmp_path / "m.json").read_text())

    def write(obj):
        (tmp_path / "bad.json").write_text(json.dumps(obj))
        return tmp_path / "bad.json"

    with pytest.raises(FormatError):
        load_model(write({k: v for k, v in m.items() if k != "version"}))
    with pytest.raises(FormatError):
        load_model(write({**m, "version": 99}))
    with pytest.raises(FormatError):
        load_model(write({**m, "layers": [{"type": "maxpool"}]}))
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(FormatError):
        load_model(tmp_path / "junk.json")
    blob = tmp_path / m["layers"][0]["bias"]["file"]
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(ShapeError):
        load_model(tmp_path / "m.json")


def test_declared_shape_must_match_layer(tmp_path):
    save_model(tmp_path / "m.json", mnist_network())
    m = json.loads((tmp_path / "m.json").read_text())
    m["layers"][2]["outputs"] = 99
    (tmp_path / "m.json").write_text(json.dumps(m))
    with pytest.raises(ShapeError):
        load_model(tmp_path / "m.json")


def test_idx_roundtrip_and_errors(tmp_path, rng):
    imgs = rng.integers(0, 256, (3, 28, 28)).astype(np.uint8)
    save_idx(tmp_path / "x.idx", imgs)
    raw = (tmp_path / "x.idx").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03" and raw[4:8] == (3).to_bytes(4, "big")
    assert np.array_equal(load_idx(tmp_path / "x.idx"), imgs)
    one = load_input(tmp_path / "x.idx", 2)
    assert one.shape == (784,) and one.min() >= 0 and one.max() <= 255
    assert np.array_equal(one, imgs[2].reshape(-1))
    (tmp_path / "t.idx").write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(tmp_path / "t.idx")
    (tmp_path / "m.idx").write_bytes(b"\x01\x00" + raw[2:])
    with pytest.raises(FormatError, match="magic"):
        load_idx(tmp_path / "m.idx")
    with pytest.raises(FormatError):
        load_input(tmp_path / "x.idx", 5)


def test_csv_features(tmp_path):
    vals = np.arange(4096) / 7.0
    (tmp_path / "f.csv").write_text(",".join(repr(float(v)) for v in vals) + "\n")
    got = load_csv_features(tmp_path / "f.csv")
    assert got.shape == (4096,) and np.array_equal(got, vals)
    (tmp_path / "g.csv").write_text("1,2\n3,abc\n")
    with pytest.raises(FormatError, match="non-numeric"):
        load_csv_features(tmp_path / "g.csv")
