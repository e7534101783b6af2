import numpy as np
import pytest

from mimicmap import nn


def small_net(seed=0):
    rng = np.random.default_rng(seed)
    net = nn.Network([
        nn.Dense.init(6, 5, rng),
        nn.BatchNorm(5, momentum=0.95, epsilon=1e-4),
        nn.LeakyRelu(0.02),
        nn.Dropout(0.25),
        nn.Dense.init(5, 3, rng),
        nn.Relu(),
        nn.Softmax(),
    ])
    net.forward(rng.normal(size=(8, 6)), train=True)  # move the bn stats off init
    return net


def test_round_trip_preserves_structure_and_values():
    net = small_net()
    blob = nn.serialize_network(net, {"stage": "test", "seed": 1})
    loaded, meta = nn.deserialize_network(blob)
    assert meta == {"stage": "test", "seed": 1}
    assert [type(l).__name__ for l in loaded.layers] == [
        type(l).__name__ for l in net.layers
    ]
    assert loaded.layers[1].momentum == 0.95
    assert loaded.layers[1].epsilon == 1e-4
    assert loaded.layers[2].slope == 0.02
    assert loaded.layers[3].rate == 0.25
    x = np.random.default_rng(3).normal(size=(4, 6))
    np.testing.assert_allclose(
        loaded.forward(x), net.forward(x), atol=1e-6
    )  # f32 storage rounds parameters


def test_reload_and_reserialize_is_byte_identical():
    blob = nn.serialize_network(small_net(), {"seed": 9, "stage": "x"})
    loaded, meta = nn.deserialize_network(blob)
    assert nn.serialize_network(loaded, meta) == blob


def test_magic_and_version_checked():
    with pytest.raises(ValueError, match="magic"):
        nn.deserialize_network(b"XXXX" + b"\x00" * 10)
    blob = bytearray(nn.serialize_network(small_net(), {}))
    blob[4] = 99
    with pytest.raises(ValueError, match="version"):
        nn.deserialize_network(bytes(blob))


def test_file_round_trip(tmp_path):
    net = small_net(5)
    path = tmp_path / "model.mmck"
    nn.save_checkpoint(path, net, {"stage": "unit"})
    loaded, meta = nn.load_checkpoint(path)
    assert meta["stage"] == "unit"
    assert path.read_bytes()[:4] == b"MMCK"
    assert nn.serialize_network(loaded, meta) == path.read_bytes()


def test_same_seed_builds_identical_checkpoints():
    a = nn.serialize_network(small_net(7), {})
    b = nn.serialize_network(small_net(7), {})
    assert a == b
