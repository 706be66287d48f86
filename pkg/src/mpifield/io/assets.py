"""Binary asset formats: MPI files and appearance checkpoints.

MPI file ("MPI1", little-endian throughout)::

    magic   4 bytes  b"MPI1"
    version u16      currently 1
    W, H    u32 each plane width/height
    D       u32      plane count
    F_dim   u32      latent feature channels (0 = none)
    flags   u32      bit 0: feature planes present
    camera  9+3+6 f64  rotation (row-major), translation, intrinsics
                       (fx, fy, cx, cy, width, height)
    depths  f32[D]
    B       f32[D,3,H,W]
    alpha   f32[D,1,H,W]
    F       f32[D,F_dim,H,W]   iff flags bit 0
    crc     u32      zlib CRC32 of everything above

Appearance checkpoint ("APC1")::

    magic   4 bytes  b"APC1"
    version u16
    hlen    u32      JSON header length
    header  JSON     {"z_dim", "feature_dim", "no_adain", "no_features",
                      "no_deepbuffer", "iterations", "arrays": [{name, shape}]}
    arrays  f32 raw buffers in header order
    crc     u32      zlib CRC32 of everything above

Both loaders verify magic, version, and CRC and reject truncated files.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..geometry import CameraView, Intrinsics, PlaneStack
from ..mpi import MultiplaneImage

MPI_MAGIC = b"MPI1"
MPI_VERSION = 1
CKPT_MAGIC = b"APC1"
CKPT_VERSION = 1


class _Writer:
    def __init__(self):
        self.chunks = []
        self.crc = 0

    def write(self, data):
        data = bytes(data)
        self.chunks.append(data)
        self.crc = zlib.crc32(data, self.crc)

    def pack(self, fmt, *values):
        self.write(struct.pack("<" + fmt, *values))

    def array(self, arr, dtype):
        self.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def finish(self, path):
        tail = struct.pack("<I", self.crc & 0xFFFFFFFF)
        Path(path).write_bytes(b"".join(self.chunks) + tail)


class _Reader:
    def __init__(self, path):
        raw = Path(path).read_bytes()
        if len(raw) < 8:
            raise DataError(f"{path}: file truncated")
        body, tail = raw[:-4], raw[-4:]
        (crc,) = struct.unpack("<I", tail)
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise DataError(f"{path}: CRC mismatch (corrupt or truncated file)")
        self.body = body
        self.pos = 0
        self.path = path

    def read(self, n):
        if self.pos + n > len(self.body):
            raise DataError(f"{self.path}: file truncated")
        out = self.body[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.read(size))

    def array(self, count, dtype):
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.read(count * dt.itemsize), dtype=dt).astype(dtype)


def mpi_file_size(width, height, depth_count, feature_dim):
    """Exact on-disk size in bytes, computable from the layout."""
    header = 4 + 2 + 4 * 5 + 18 * 8
    depths = 4 * depth_count
    chans = 4 if feature_dim == 0 else 4 + feature_dim
    planes = 4 * chans * depth_count * height * width
    return header + depths + planes + 4


def save_mpi(path, mpi):
    w = _Writer()
    w.write(MPI_MAGIC)
    w.pack("H", MPI_VERSION)
    fdim = mpi.feature_dim
    w.pack("IIIII", mpi.width, mpi.height, mpi.depth_count, fdim,
           1 if fdim else 0)
    cam = mpi.ref_cam
    w.array(cam.rotation.reshape(-1), np.float64)
    w.array(cam.translation, np.float64)
    k = cam.intrinsics
    w.array([k.fx, k.fy, k.cx, k.cy, float(k.width), float(k.height)], np.float64)
    w.array(mpi.planes.depths, np.float32)
    w.array(mpi.base_color, np.float32)
    w.array(mpi.alpha, np.float32)
    if fdim:
        w.array(mpi.features, np.float32)
    w.finish(path)
    return Path(path)


def load_mpi(path):
    r = _Reader(path)
    if r.read(4) != MPI_MAGIC:
        raise DataError(f"{path}: not an MPI file (bad magic)")
    (version,) = r.unpack("H")
    if version != MPI_VERSION:
        raise DataError(f"{path}: unsupported MPI version {version}")
    width, height, depth, fdim, flags = r.unpack("IIIII")
    R = r.array(9, np.float64).reshape(3, 3)
    t = r.array(3, np.float64)
    fx, fy, cx, cy, iw, ih = r.array(6, np.float64)
    cam = CameraView(Intrinsics(fx, fy, cx, cy, int(iw), int(ih)), R, t)
    depths = r.array(depth, np.float32).astype(np.float64)
    base = r.array(depth * 3 * height * width, np.float32).reshape(depth, 3, height, width)
    alpha = r.array(depth * 1 * height * width, np.float32).reshape(depth, 1, height, width)
    features = None
    if flags & 1:
        features = r.array(depth * fdim * height * width, np.float32).reshape(
            depth, fdim, height, width)
    if r.pos != len(r.body):
        raise DataError(f"{path}: trailing bytes after payload")
    return MultiplaneImage(cam, PlaneStack(depths), base, alpha, features)


def save_checkpoint(path, model):
    """Serialize a fitted AppearanceModel's parameters (not the MPI)."""
    arrays = _named_arrays(model)
    header = {
        "z_dim": model.z_dim,
        "feature_dim": model.feature_dim,
        "no_adain": model.no_adain,
        "no_features": model.no_features,
        "no_deepbuffer": model.no_deepbuffer,
        "iterations": int(getattr(model, "iterations_done_", 0)),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header).encode()
    w = _Writer()
    w.write(CKPT_MAGIC)
    w.pack("H", CKPT_VERSION)
    w.pack("I", len(blob))
    w.write(blob)
    for _, a in arrays:
        w.array(a, np.float32)
    w.finish(path)
    return Path(path)


def load_checkpoint(path, model_cls=None):
    """Rebuild an AppearanceModel (minus its MPI) from a checkpoint.

    The caller attaches the MPI afterwards (``model.mpi_ = ...``) or uses
    the CLI which loads both.
    """
    from ..appearance.model import AppearanceModel
    from ..appearance.nets import EncoderParams, RendererParams
    from ..autodiff import parameter

    r = _Reader(path)
    if r.read(4) != CKPT_MAGIC:
        raise DataError(f"{path}: not an appearance checkpoint (bad magic)")
    (version,) = r.unpack("H")
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = r.unpack("I")
    try:
        header = json.loads(r.read(hlen).decode())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}") from e

    model = (model_cls or AppearanceModel)(
        z_dim=header["z_dim"], feature_dim=header["feature_dim"],
        no_adain=header["no_adain"], no_features=header["no_features"],
        no_deepbuffer=header["no_deepbuffer"])
    model.iterations_done_ = header["iterations"]

    loaded = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        loaded[meta["name"]] = r.array(count, np.float32).reshape(shape)
    if r.pos != len(r.body):
        raise DataError(f"{path}: trailing bytes after payload")

    model.features_ = parameter(loaded["features"], name="features")
    rng = np.random.default_rng(0)
    enc = EncoderParams.init(rng, z_dim=model.z_dim)
    ren = RendererParams.init(rng, z_dim=model.z_dim, no_adain=model.no_adain)
    for obj, prefix in ((enc, "encoder"), (ren, "renderer")):
        for name, param in _object_params(obj, prefix):
            if name not in loaded:
                raise DataError(f"{path}: checkpoint missing array '{name}'")
            if loaded[name].shape != param.data.shape:
                raise DataError(f"{path}: array '{name}' has shape "
                                f"{loaded[name].shape}, expected {param.data.shape}")
            param.data = np.ascontiguousarray(loaded[name])
    model.encoder_ = enc
    model.renderer_ = ren
    return model


def _object_params(obj, prefix):
    names = []
    if prefix == "encoder":
        for i, (w, b) in enumerate(zip(obj.conv_w, obj.conv_b)):
            names += [(f"encoder.conv{i}.w", w), (f"encoder.conv{i}.b", b)]
        names += [("encoder.head.w", obj.head_w), ("encoder.head.b", obj.head_b)]
    else:
        names += [("renderer.conv1.w", obj.conv1_w), ("renderer.conv1.b", obj.conv1_b),
                  ("renderer.conv2.w", obj.conv2_w), ("renderer.conv2.b", obj.conv2_b),
                  ("renderer.out.w", obj.out_w), ("renderer.out.b", obj.out_b)]
        if not obj.no_adain:
            names += [("renderer.mlp1.w", obj.mlp_w1), ("renderer.mlp1.b", obj.mlp_b1),
                      ("renderer.mlp2.w", obj.mlp_w2), ("renderer.mlp2.b", obj.mlp_b2)]
    return names


def _named_arrays(model):
    arrays = [("features", model.features_.data)]
    for obj, prefix in ((model.encoder_, "encoder"), (model.renderer_, "renderer")):
        for name, param in _object_params(obj, prefix):
            arrays.append((name, param.data))
    return arrays
