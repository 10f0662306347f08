"""Binary checkpoint format.

Layout::

    FSPEC1\\n
    layer kind=<kind> key=value ...\\n     one line per layer, in order
    input shape=<d0,d1,...>\\n
    meta <key>=<value>\\n                  free-form metadata, value runs to EOL
    end\\n
    tensor name=<name> shape=<d0,d1,...>\\n  followed by raw float32 LE values
    ...
    <8-byte little-endian CRC-64/XZ of everything above>

Parameters and buffers (batchnorm running statistics) are both stored as
tensors. Values are always written as 32-bit floats.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from ..exceptions import ChecksumMismatch, HeaderMismatch, TruncatedPayload
from .layers import layer_from_config
from .network import INIT_SCHEME, Sequential

MAGIC = b"FSPEC1\n"

_CRC64_POLY = 0xC96C5795D7870F42
_CRC64_TABLE = []
for _i in range(256):
    _c = _i
    for _ in range(8):
        _c = (_c >> 1) ^ _CRC64_POLY if _c & 1 else _c >> 1
    _CRC64_TABLE.append(_c)


def crc64(data: bytes, crc: int = 0) -> int:
    """CRC-64/XZ (reflected ECMA-182 polynomial)."""
    crc ^= 0xFFFFFFFFFFFFFFFF
    table = _CRC64_TABLE
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def dumps(network: Sequential, meta: dict | None = None) -> bytes:
    meta = dict(meta or {})
    meta.setdefault("init", INIT_SCHEME)
    meta.setdefault("seed", network.seed)
    buf = io.BytesIO()
    buf.write(MAGIC)
    for layer in network.layers:
        fields = " ".join(f"{k}={_fmt(v)}" for k, v in layer.config().items())
        buf.write(f"layer kind={layer.kind} {fields}".rstrip().encode() + b"\n")
    buf.write(f"input shape={','.join(map(str, network.input_shape))}\n".encode())
    for key, value in meta.items():
        if " " in key or "=" in key or "\n" in str(value):
            raise HeaderMismatch(f"meta entry {key!r} cannot be stored")
        buf.write(f"meta {key}={_fmt(value)}\n".encode())
    buf.write(b"end\n")
    for name, value in network.state_dict().items():
        shape = ",".join(map(str, value.shape))
        buf.write(f"tensor name={name} shape={shape}\n".encode())
        buf.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    payload = buf.getvalue()
    return payload + struct.pack("<Q", crc64(payload))


def loads(blob: bytes) -> tuple[Sequential, dict]:
    if not blob.startswith(MAGIC):
        raise HeaderMismatch("not a checkpoint (bad magic)")
    if len(blob) < len(MAGIC) + 8:
        raise TruncatedPayload("checkpoint too short")
    payload, tail = blob[:-8], blob[-8:]
    if struct.unpack("<Q", tail)[0] != crc64(payload):
        raise ChecksumMismatch("checkpoint CRC does not match payload")

    stream = io.BytesIO(payload)
    stream.read(len(MAGIC))
    layers, meta, input_shape = [], {}, None
    while True:
        line = stream.readline()
        if not line.endswith(b"\n"):
            raise TruncatedPayload("unterminated architecture block")
        text = line.decode("utf-8").rstrip("\n")
        if text == "end":
            break
        head, _, rest = text.partition(" ")
        if head == "layer":
            kw = dict(item.split("=", 1) for item in rest.split())
            kind = kw.pop("kind")
            layers.append(layer_from_config(kind, **{k: _parse_value(v) for k, v in kw.items()}))
        elif head == "input":
            input_shape = tuple(int(d) for d in rest.split("=", 1)[1].split(",") if d)
        elif head == "meta":
            key, _, value = rest.partition("=")
            meta[key] = _parse_value(value)
        else:
            raise HeaderMismatch(f"unexpected header line {text!r}")
    if input_shape is None:
        raise HeaderMismatch("checkpoint lacks an input shape")

    net = Sequential(layers, input_shape, seed=meta.get("seed", 0), init=True)
    state = {}
    while stream.tell() < len(payload):
        line = stream.readline().decode("utf-8").rstrip("\n")
        head, _, rest = line.partition(" ")
        if head != "tensor":
            raise HeaderMismatch(f"expected tensor header, got {line!r}")
        kw = dict(item.split("=", 1) for item in rest.split())
        shape = tuple(int(d) for d in kw["shape"].split(",") if d)
        nbytes = 4 * int(np.prod(shape))
        raw = stream.read(nbytes)
        if len(raw) != nbytes:
            raise TruncatedPayload(f"tensor {kw['name']} is truncated")
        state[kw["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    expected = set(net.state_dict())
    if set(state) != expected:
        raise HeaderMismatch(f"tensor set mismatch: {sorted(expected ^ set(state))}")
    net.load_state_dict(state)
    return net, meta


def save(path, network: Sequential, meta: dict | None = None) -> None:
    blob = dumps(network, meta)
    with open(os.fspath(path), "wb") as fh:
        fh.write(blob)


def load(path) -> tuple[Sequential, dict]:
    with open(os.fspath(path), "rb") as fh:
        return loads(fh.read())
