"""Canonical byte encoding for protocol records.

Rules, applied uniformly so digests and signatures are well-defined:

* integers: unsigned big-endian, 8 bytes
* coordinates (floats): IEEE-754 binary64, big-endian
* strings / byte fields: 4-byte big-endian length prefix, then the bytes
* nested records: encoded recursively, then length-prefixed (4 bytes)
* sequences of records: 4-byte big-endian count, then each element
  length-prefixed

Fields encode in declaration order.  ``decode`` is the exact inverse and
rejects trailing bytes.
"""

from __future__ import annotations

import dataclasses
import struct
import typing

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")


class DecodeError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class _Field:
    name: str
    kind: str          # "int" | "float" | "str" | "bytes" | "record" | "seq"
    record_type: type | None = None


_SCHEMAS: dict[type, tuple[_Field, ...]] = {}


def _resolve_schema(cls: type) -> tuple[_Field, ...]:
    schema = _SCHEMAS.get(cls)
    if schema is not None:
        return schema
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls!r} is not an encodable record")
    hints = typing.get_type_hints(cls)
    fields = []
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        origin = typing.get_origin(tp)
        if tp is int:
            fields.append(_Field(f.name, "int"))
        elif tp is float:
            fields.append(_Field(f.name, "float"))
        elif tp is str:
            fields.append(_Field(f.name, "str"))
        elif tp is bytes:
            fields.append(_Field(f.name, "bytes"))
        elif origin is tuple:
            args = typing.get_args(tp)
            if len(args) != 2 or args[1] is not Ellipsis:
                raise TypeError(f"{cls.__name__}.{f.name}: only homogeneous tuple[T, ...] supported")
            fields.append(_Field(f.name, "seq", args[0]))
        elif dataclasses.is_dataclass(tp):
            fields.append(_Field(f.name, "record", tp))
        else:
            raise TypeError(f"{cls.__name__}.{f.name}: unencodable type {tp!r}")
    schema = tuple(fields)
    _SCHEMAS[cls] = schema
    return schema


def _encode_into(out: list[bytes], value, kind: str) -> None:
    if kind == "int":
        out.append(_U64.pack(value))
    elif kind == "float":
        out.append(_F64.pack(value))
    elif kind == "str":
        raw = value.encode("utf-8")
        out.append(_U32.pack(len(raw)))
        out.append(raw)
    elif kind == "bytes":
        out.append(_U32.pack(len(value)))
        out.append(value)
    else:  # record
        body = encode(value)
        out.append(_U32.pack(len(body)))
        out.append(body)


def encode(record) -> bytes:
    """Canonical bytes of ``record`` (a registered protocol dataclass)."""
    out: list[bytes] = []
    for f in _resolve_schema(type(record)):
        value = getattr(record, f.name)
        if f.kind == "seq":
            out.append(_U32.pack(len(value)))
            for item in value:
                _encode_into(out, item, "record")
        else:
            _encode_into(out, value, f.kind)
    return b"".join(out)


def encode_fields(record, names: tuple[str, ...]) -> bytes:
    """Canonical bytes of a subset of fields, in the order given.

    Used for signature scopes that cover only part of a record (the unsigned
    core of an envelope).
    """
    schema = {f.name: f for f in _resolve_schema(type(record))}
    out: list[bytes] = []
    for name in names:
        f = schema[name]
        value = getattr(record, name)
        if f.kind == "seq":
            out.append(_U32.pack(len(value)))
            for item in value:
                _encode_into(out, item, "record")
        else:
            _encode_into(out, value, f.kind)
    return b"".join(out)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated record")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _decode_value(r: _Reader, f: _Field):
    if f.kind == "int":
        return _U64.unpack(r.take(8))[0]
    if f.kind == "float":
        return _F64.unpack(r.take(8))[0]
    if f.kind == "str":
        raw = r.take(r.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError(str(e)) from None
    if f.kind == "bytes":
        return r.take(r.u32())
    if f.kind == "record":
        return _decode_record(r.take(r.u32()), f.record_type)
    # seq
    count = r.u32()
    items = []
    for _ in range(count):
        items.append(_decode_record(r.take(r.u32()), f.record_type))
    return tuple(items)


def _decode_record(data: bytes, cls: type):
    r = _Reader(data)
    values = {}
    for f in _resolve_schema(cls):
        values[f.name] = _decode_value(r, f)
    if r.pos != len(data):
        raise DecodeError(f"{cls.__name__}: {len(data) - r.pos} trailing bytes")
    return cls(**values)


def decode(cls: type, data: bytes):
    """Inverse of :func:`encode`; raises DecodeError on malformed input."""
    try:
        return _decode_record(data, cls)
    except struct.error as e:
        raise DecodeError(str(e)) from None
