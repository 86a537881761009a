import hashlib
import struct

import numpy as np
import pytest
from PIL import Image

from inrcine.fileformats import (
    CHECKPOINT_MAGIC,
    DATASET_MAGIC,
    FormatError,
    atomic_write,
    checkpoint_bytes,
    dataset_bytes,
    export_magnitudes,
    load_checkpoint,
    load_dataset,
    read_pgm16,
    save_checkpoint,
    save_dataset,
    sha256_file,
    write_pgm16,
)
from inrcine.kfmlp import KFMLPModel
from inrcine.model import FMLPModel, FourierFeatureConfig, MLPConfig
from inrcine.train import evaluate_ser

from .test_train import tiny_data, tiny_fmlp


class TestDataset:
    def test_roundtrip(self, tmp_path):
        meas = tiny_data()
        save_dataset(tmp_path / "d.inrd", meas)
        back = load_dataset(tmp_path / "d.inrd")
        np.testing.assert_array_equal(back.lines, meas.lines)
        np.testing.assert_array_equal(back.sens.maps, meas.sens.maps)
        np.testing.assert_array_equal(back.val_mask, meas.val_mask)
        np.testing.assert_array_equal(back.ground_truth, meas.ground_truth)
        np.testing.assert_array_equal(back.frame_times, meas.frame_times)
        assert back.fov == meas.fov and back.phantom == meas.phantom

    def test_bytes_deterministic(self):
        assert dataset_bytes(tiny_data()) == dataset_bytes(tiny_data())

    def test_header_layout(self):
        raw = dataset_bytes(tiny_data())
        assert raw[:8] == DATASET_MAGIC
        version, hlen = struct.unpack("<II", raw[8:16])
        assert version == 1 and hlen > 0

    def test_without_ground_truth(self, tmp_path):
        meas = tiny_data()
        meas.ground_truth = None
        meas.val_ground_truth = None
        save_dataset(tmp_path / "d.inrd", meas)
        assert load_dataset(tmp_path / "d.inrd").ground_truth is None

    def test_bad_magic_and_truncation(self, tmp_path):
        raw = dataset_bytes(tiny_data())
        (tmp_path / "a").write_bytes(b"NOTMAGIC" + raw[8:])
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "a")
        (tmp_path / "b").write_bytes(raw[:-5])
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "b")


class TestCheckpoint:
    def test_fmlp_roundtrip_reproduces_ser(self, tmp_path):
        meas = tiny_data()
        m = FMLPModel(tiny_fmlp().ff, tiny_fmlp().mlp, seed=0, origin=(0.01, 0.0))
        for p in m.parameters():
            p.value += np.random.default_rng(0).standard_normal(p.value.shape) * 0.1
        save_checkpoint(tmp_path / "c.inrc", m, {"best_ser_db": 1.5})
        back, meta = load_checkpoint(tmp_path / "c.inrc")
        assert meta == {"best_ser_db": 1.5}
        assert back.origin == m.origin
        assert evaluate_ser(back, meas).ser_db == evaluate_ser(m, meas).ser_db

    def test_kfmlp_kind_tag(self, tmp_path):
        ff = FourierFeatureConfig(n_spatial=4, n_temporal=2, mode="joint", n_joint=5)
        m = KFMLPModel(ff, MLPConfig(n_hidden=1, width=4, s_out=100.0), 3, 8, 8, seed=1)
        save_checkpoint(tmp_path / "k.inrc", m)
        back, _ = load_checkpoint(tmp_path / "k.inrc")
        assert isinstance(back, KFMLPModel) and back.C == 3 and back.ff.mode == "joint"
        np.testing.assert_array_equal(back.forward_full(0.2), m.forward_full(0.2))

    def test_payload_is_little_endian_doubles_in_order(self):
        m = tiny_fmlp()
        raw = checkpoint_bytes(m)
        assert raw[:8] == CHECKPOINT_MAGIC
        _, hlen = struct.unpack("<II", raw[8:16])
        payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
        expected = np.concatenate([p.value.ravel() for p in m.parameters()])
        np.testing.assert_array_equal(payload, expected)


class TestAtomicWrite:
    def test_failed_write_leaves_nothing(self, tmp_path, monkeypatch):
        import inrcine.fileformats as ff

        def boom(src, dst):
            raise KeyboardInterrupt

        monkeypatch.setattr(ff.os, "replace", boom)
        with pytest.raises(KeyboardInterrupt):
            atomic_write(tmp_path / "x.bin", b"data")
        assert list(tmp_path.iterdir()) == []

    def test_overwrite(self, tmp_path):
        atomic_write(tmp_path / "x", b"1")
        atomic_write(tmp_path / "x", b"22")
        assert (tmp_path / "x").read_bytes() == b"22"

    def test_sha256(self, tmp_path):
        (tmp_path / "x").write_bytes(b"abc")
        assert sha256_file(tmp_path / "x") == hashlib.sha256(b"abc").hexdigest()


class TestImages:
    def test_pgm_roundtrip_and_header(self, tmp_path):
        img = np.linspace(0, 1, 12).reshape(3, 4)
        write_pgm16(tmp_path / "a.pgm", img, 0.0, 1.0)
        raw = (tmp_path / "a.pgm").read_bytes()
        assert raw.startswith(b"P5\n4 3\n65535\n")
        q = read_pgm16(tmp_path / "a.pgm")
        assert q[0, 0] == 0 and q[-1, -1] == 65535
        np.testing.assert_array_equal(q, np.rint(img * 65535).astype(np.uint16))
        # Pillow reads the same pixel values
        with Image.open(tmp_path / "a.pgm") as im:
            np.testing.assert_array_equal(np.asarray(im, dtype=np.uint16), q)

    def test_export_window_and_png(self, tmp_path):
        imgs = np.stack([np.full((4, 4), 2.0), np.full((4, 4), 4.0)])
        rows = export_magnitudes(tmp_path, imgs, "f", png=True)
        assert len(rows) == 4
        assert all(r["window"] == [2.0, 4.0] for r in rows)
        with Image.open(tmp_path / "f_0001.png") as im:
            assert np.asarray(im).max() == 255
