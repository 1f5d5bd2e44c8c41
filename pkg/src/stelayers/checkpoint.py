"""Binary checkpoint format.

Layout, all integers little-endian, all reals little-endian float64::

    "STEC"  u16 version  u64 seed
    u32 n_layers, then per layer:
        u8 kind (0 dense, 1 ste)  u8 act  u8 noise  u8 has_output_dropout
        u32 A  u32 N  u32 M  f64 p  f64 p_out
    parameter arrays in network order (W, b or Ws, bs), raw float64
    u8 has_optimizer [u64 n, velocity arrays in parameter order]
    i64 epoch  f64 val_loss
    u32 n_streams, then per stream:
        u8 key_len  u32[key_len] key  u64 state_hi  u64 state_lo
        u64 inc_hi  u64 inc_lo  u8 has_uint32  u32 uinteger

For a dense layer ``p`` holds its dropout keep probability and ``p_out`` is 0.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DataError
from .layers import ACTIVATIONS, NOISE_MODES, DenseLayer, STELayer
from .network import Network
from .optimizer import OptState

MAGIC = b"STEC"
VERSION = 1
_MASK64 = (1 << 64) - 1


class CheckpointError(DataError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    network: Network
    opt: Optional[OptState] = None
    epoch: int = -1
    val_loss: float = float("nan")
    rng_state: dict = field(default_factory=dict)
    seed: int = 0


def _pack_arrays(out: io.BytesIO, arrays) -> None:
    for a in arrays:
        out.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def dumps(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HQ", VERSION, ckpt.seed))
    net = ckpt.network
    out.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        if isinstance(layer, STELayer):
            has_out = layer.p_out is not None
            out.write(struct.pack("<4B3I2d", 1, ACTIVATIONS.index(layer.act), NOISE_MODES.index(layer.noise),
                                  has_out, layer.A, layer.n_out, layer.n_in, layer.p,
                                  layer.p_out if has_out else 0.0))
        else:
            has_out = layer.dropout is not None
            out.write(struct.pack("<4B3I2d", 0, ACTIVATIONS.index(layer.act), 0, has_out, 1,
                                  layer.n_out, layer.n_in, layer.dropout if has_out else 0.0, 0.0))
    _pack_arrays(out, net.params())
    if ckpt.opt is None:
        out.write(struct.pack("<B", 0))
    else:
        out.write(struct.pack("<BQ", 1, ckpt.opt.n))
        _pack_arrays(out, ckpt.opt.velocity)
    out.write(struct.pack("<qd", ckpt.epoch, ckpt.val_loss))
    out.write(struct.pack("<I", len(ckpt.rng_state)))
    for key, st in sorted(ckpt.rng_state.items()):
        if st["bit_generator"] != "PCG64":
            raise CheckpointError(f"cannot store {st['bit_generator']} state")
        s, inc = st["state"]["state"], st["state"]["inc"]
        out.write(struct.pack(f"<B{len(key)}I", len(key), *key))
        out.write(struct.pack("<4QBI", s >> 64, s & _MASK64, inc >> 64, inc & _MASK64,
                              st["has_uint32"], st["uinteger"]))
    return out.getvalue()


class _Reader:
    def __init__(self, raw: bytes, name: str):
        self.raw, self.pos, self.name = raw, 0, name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.name}: truncated checkpoint (needed {n} bytes at offset {self.pos})")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def loads(raw: bytes, name: str = "<bytes>") -> Checkpoint:
    r = _Reader(raw, name)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    version, seed = r.unpack("HQ")
    if version != VERSION:
        raise CheckpointVersionError(f"{name}: checkpoint format version {version}, this reader supports {VERSION}")
    (n_layers,) = r.unpack("I")
    if n_layers == 0:
        raise CheckpointError(f"{name}: checkpoint has no layers")
    descs = [r.unpack("4B3I2d") for _ in range(n_layers)]
    layers = []
    try:
        for kind, act, noise, has_out, A, N, M, p, p_out in descs:
            if kind == 1:
                Ws, bs = r.array((A, N, M)), r.array((A, N))
                layers.append(STELayer(Ws, bs, p, NOISE_MODES[noise], p_out if has_out else None, ACTIVATIONS[act]))
            elif kind == 0:
                W, b = r.array((N, M)), r.array((N,))
                layers.append(DenseLayer(W, b, ACTIVATIONS[act], p if has_out else None))
            else:
                raise CheckpointError(f"{name}: unknown layer kind {kind}")
        net = Network(layers)
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{name}: invalid topology: {exc}") from exc
    (has_opt,) = r.unpack("B")
    opt = None
    if has_opt:
        (n,) = r.unpack("Q")
        opt = OptState([r.array(p.shape) for p in net.params()], n)
    epoch, val_loss = r.unpack("qd")
    (n_streams,) = r.unpack("I")
    rng_state = {}
    for _ in range(n_streams):
        (klen,) = r.unpack("B")
        key = r.unpack(f"{klen}I")
        s_hi, s_lo, i_hi, i_lo, has32, uint = r.unpack("4QBI")
        rng_state[tuple(key)] = {
            "bit_generator": "PCG64",
            "state": {"state": (s_hi << 64) | s_lo, "inc": (i_hi << 64) | i_lo},
            "has_uint32": has32,
            "uinteger": uint,
        }
    if r.pos != len(raw):
        raise CheckpointError(f"{name}: {len(raw) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(net, opt, epoch, val_loss, rng_state, seed)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return loads(raw, str(path))
