"""Binary containers for datasets and checkpoints, plus image export.

Both containers share one framing::

    magic      8 bytes  (b"INRDSET\\0" or b"INRCKPT\\0")
    version    uint32 little-endian
    hdr_len    uint32 little-endian
    header     hdr_len bytes of UTF-8 JSON (sorted keys)
    payload    raw little-endian arrays, in the order listed in header["arrays"]

Each ``header["arrays"]`` entry is ``{"name", "dtype", "shape"}``; dtypes are
numpy strings such as ``"<f8"`` or ``"<c16"``. Checkpoint payloads hold only
``<f8`` parameter tensors in layer declaration order (weight then bias).
Files are written to a temporary sibling and renamed into place, so readers
never observe a partial file.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .kfmlp import KFMLPModel
from .model import FMLPModel, FourierFeatureConfig, FourierMLP, MLPConfig
from .mri import LineSchedule, Measurements, SensitivityMaps

DATASET_MAGIC = b"INRDSET\0"
CHECKPOINT_MAGIC = b"INRCKPT\0"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file does not follow the expected container layout."""


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _pack(magic: bytes, header: dict, arrays: list[tuple[str, np.ndarray, str]]) -> bytes:
    header = dict(header)
    header["arrays"] = [
        {"name": name, "dtype": dtype, "shape": list(arr.shape)} for name, arr, dtype in arrays
    ]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    for _, arr, dtype in arrays:
        parts.append(np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes())
    return b"".join(parts)


def _unpack(raw: bytes, magic: bytes):
    if raw[:8] != magic:
        raise FormatError(f"bad magic {raw[:8]!r}, expected {magic!r}")
    if len(raw) < 16:
        raise FormatError("truncated header")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"payload truncated in array {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(raw):
        raise FormatError("trailing bytes after payload")
    return header, arrays


# ----------------------------------------------------------------- dataset


def dataset_bytes(meas: Measurements) -> bytes:
    s = meas.schedule
    header = {
        "kind": "dataset",
        "H": s.H,
        "W": s.W,
        "C": meas.sens.C,
        "fov": list(meas.fov),
        "dt_line": s.dt_line,
        "n_lines": meas.n_lines,
        "phantom": meas.phantom,
    }
    arrays = [
        ("ky", s.ky, "<i8"),
        ("t", s.t, "<f8"),
        ("index", s.index, "<i8"),
        ("val_mask", meas.val_mask, "u1"),
        ("sens", meas.sens.maps, "<c16"),
        ("lines", meas.lines, "<c16"),
    ]
    if meas.ground_truth is not None:
        arrays.append(("ground_truth", meas.ground_truth, "<c16"))
    if meas.val_ground_truth is not None:
        arrays.append(("val_ground_truth", meas.val_ground_truth, "<c16"))
    return _pack(DATASET_MAGIC, header, arrays)


def save_dataset(path, meas: Measurements) -> None:
    atomic_write(path, dataset_bytes(meas))


def load_dataset(path) -> Measurements:
    header, a = _unpack(Path(path).read_bytes(), DATASET_MAGIC)
    sched = LineSchedule(a["ky"], a["t"], header["H"], header["W"], header["dt_line"], a["index"])
    return Measurements(
        sched,
        a["lines"],
        SensitivityMaps(a["sens"]),
        tuple(header["fov"]),
        a["val_mask"].astype(bool),
        header["n_lines"],
        ground_truth=a.get("ground_truth"),
        val_ground_truth=a.get("val_ground_truth"),
        phantom=header.get("phantom"),
    )


# -------------------------------------------------------------- checkpoint


def checkpoint_bytes(model: FourierMLP, meta: dict | None = None) -> bytes:
    header = {
        "kind": model.kind,
        "fourier": model.ff.to_dict(),
        "mlp": {k: getattr(model.mlp, k) for k in ("n_hidden", "width", "sigma_linear", "s_out")},
        "seed": model.seed,
        "meta": meta or {},
    }
    if isinstance(model, KFMLPModel):
        header.update(C=model.C, H=model.H, W=model.W)
    else:
        header["origin"] = list(model.origin)
    arrays = []
    for i, (W, b) in enumerate(model.layers):
        arrays.append((f"layer{i}.weight", W.value, "<f8"))
        arrays.append((f"layer{i}.bias", b.value, "<f8"))
    return _pack(CHECKPOINT_MAGIC, header, arrays)


def save_checkpoint(path, model: FourierMLP, meta: dict | None = None) -> None:
    atomic_write(path, checkpoint_bytes(model, meta))


def load_checkpoint(path):
    """Returns ``(model, meta)`` with the stored parameters loaded."""
    header, arrays = _unpack(Path(path).read_bytes(), CHECKPOINT_MAGIC)
    ff = FourierFeatureConfig(**header["fourier"])
    mlp = MLPConfig(**header["mlp"])
    if header["kind"] == KFMLPModel.kind:
        model = KFMLPModel(ff, mlp, header["C"], header["H"], header["W"], seed=header["seed"])
    elif header["kind"] == FMLPModel.kind:
        model = FMLPModel(ff, mlp, seed=header["seed"], origin=tuple(header["origin"]))
    else:
        raise FormatError(f"unknown model kind {header['kind']!r}")
    model.load_state(list(arrays.values()))
    return model, header["meta"]


# ------------------------------------------------------------------ images


def write_pgm16(path, img: np.ndarray, lo: float, hi: float) -> None:
    """Binary 16-bit PGM (big-endian samples, maxval 65535) windowed to [lo, hi]."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM export expects a 2-D image")
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    q = np.rint(np.clip((img - lo) * scale, 0, 65535)).astype(">u2")
    head = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii")
    atomic_write(path, head + q.tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 65535:
        raise FormatError("not a 16-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw, dtype=">u2", count=w * h, offset=pos + 1)
    return data.reshape(h, w).astype(np.uint16)


def write_png8(path, img: np.ndarray, lo: float, hi: float) -> None:
    from PIL import Image

    img = np.asarray(img, dtype=float)
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    q = np.rint(np.clip((img - lo) * scale, 0, 255)).astype(np.uint8)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(q, mode="L").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_magnitudes(out_dir, images, stem: str, png: bool = False) -> list[dict]:
    """Write |image| frames sharing one min-max window; returns manifest rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mags = np.abs(np.asarray(images))
    lo, hi = float(mags.min()), float(mags.max())
    rows = []
    for i, m in enumerate(mags):
        pgm = out_dir / f"{stem}_{i:04d}.pgm"
        write_pgm16(pgm, m, lo, hi)
        rows.append({"file": pgm.name, "sha256": sha256_file(pgm), "window": [lo, hi]})
        if png:
            p = out_dir / f"{stem}_{i:04d}.png"
            write_png8(p, m, lo, hi)
            rows.append({"file": p.name, "sha256": sha256_file(p), "window": [lo, hi]})
    return rows
