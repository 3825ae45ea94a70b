import numpy as np
import pytest

from nsseg.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from nsseg.errors import FormatError
from nsseg.formats import (
    FRAME_MAGIC,
    decode_grid,
    encode_grid,
    read_frame,
    read_mask,
    read_probmap,
    write_frame,
    write_mask,
    write_probmap,
)
from nsseg.model import TinyFCN, forward
from nsseg.train import TrainConfig


def test_frame_layout():
    data = encode_grid(FRAME_MAGIC, np.array([[0.5, 1.0, 0.0]], dtype=np.float32))
    assert data[:4] == b"NSF1"
    assert data[4:8] == (1).to_bytes(4, "little")
    assert data[8:12] == (3).to_bytes(4, "little")
    assert np.frombuffer(data[12:], "<f4").tolist() == [0.5, 1.0, 0.0]


def test_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    f = rng.random((9, 13)).astype(np.float32)
    m = rng.choice([0, 1, 255], size=(9, 13)).astype(np.uint8)
    write_frame(tmp_path / "f", f)
    write_mask(tmp_path / "m", m)
    write_probmap(tmp_path / "p", f)
    assert np.array_equal(read_frame(tmp_path / "f"), f)
    assert np.array_equal(read_mask(tmp_path / "m"), m)
    assert np.array_equal(read_probmap(tmp_path / "p"), f)
    assert (tmp_path / "m").read_bytes()[:4] == b"NSM1"
    assert (tmp_path / "p").read_bytes()[:4] == b"NSP1"


def test_grid_errors():
    data = encode_grid(FRAME_MAGIC, np.zeros((2, 2), np.float32))
    with pytest.raises(FormatError):
        decode_grid(b"NSM1", data)
    with pytest.raises(FormatError) as exc:
        decode_grid(FRAME_MAGIC, data[:-1])
    assert exc.value.offset is not None


def test_checkpoint_round_trip(tmp_path):
    model = TinyFCN.init(3)
    cfg = TrainConfig(epochs=7)
    save_checkpoint(model, tmp_path / "m.nsc", cfg)
    loaded = load_checkpoint(tmp_path / "m.nsc")
    assert loaded.channels == model.channels
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert a.tobytes() == b.tobytes()
    frame = np.random.default_rng(1).random((20, 20)).astype(np.float32)
    assert forward(model, frame).tobytes() == forward(loaded, frame).tobytes()
    _, cfg_dict = decode_checkpoint((tmp_path / "m.nsc").read_bytes())
    assert cfg_dict["epochs"] == 7
    assert (tmp_path / "m.nsc").read_bytes()[:4] == b"NSC1"


def test_checkpoint_zero_model(tmp_path):
    save_checkpoint(TinyFCN.zeros(), tmp_path / "z.nsc")
    probs = forward(load_checkpoint(tmp_path / "z.nsc"), np.random.default_rng(0).random((10, 10)))
    assert np.all(probs == 0.5)


@pytest.mark.parametrize("cut", [0, 3, 10, 40, -1])
def test_checkpoint_truncated(tmp_path, cut):
    data = encode_checkpoint(TinyFCN.init(0))
    (tmp_path / "t.nsc").write_bytes(data[:cut])
    with pytest.raises(FormatError) as exc:
        load_checkpoint(tmp_path / "t.nsc")
    assert "offset" in str(exc.value)


def test_checkpoint_bad_magic():
    data = bytearray(encode_checkpoint(TinyFCN.init(0)))
    data[0:4] = b"XXXX"
    with pytest.raises(FormatError):
        decode_checkpoint(bytes(data))
