"""Canonical binary codecs.

Fixed field order, little-endian fixed-width integers, u32 length prefixes
for byte strings and sequences. Decoding is strict: truncation, trailing
bytes and out-of-range tags all raise DecodeError.
"""
import struct


class DecodeError(ValueError):
    pass


class Codec:
    def write(self, value, out: bytearray):
        raise NotImplementedError

    def read(self, buf, pos: int):
        raise NotImplementedError

    def encode(self, value) -> bytes:
        out = bytearray()
        self.write(value, out)
        return bytes(out)

    def decode(self, data: bytes):
        buf = memoryview(bytes(data))
        value, pos = self.read(buf, 0)
        if pos != len(buf):
            raise DecodeError(f"{len(buf) - pos} trailing bytes")
        return value


class Int(Codec):
    def __init__(self, fmt: str):
        self.st = struct.Struct("<" + fmt)

    def write(self, value, out):
        try:
            out += self.st.pack(value)
        except struct.error as e:
            raise ValueError(f"integer {value!r} out of range") from e

    def read(self, buf, pos):
        end = pos + self.st.size
        if end > len(buf):
            raise DecodeError("truncated integer")
        return self.st.unpack_from(buf, pos)[0], end


U8 = Int("B")
U32 = Int("I")
U64 = Int("Q")
I64 = Int("q")


class _Bool(Codec):
    def write(self, value, out):
        out.append(1 if value else 0)

    def read(self, buf, pos):
        if pos >= len(buf):
            raise DecodeError("truncated bool")
        b = buf[pos]
        if b > 1:
            raise DecodeError(f"bad bool byte {b}")
        return b == 1, pos + 1


BOOL = _Bool()


class _Bytes(Codec):
    def write(self, value, out):
        out += U32.st.pack(len(value))
        out += value

    def read(self, buf, pos):
        n, pos = U32.read(buf, pos)
        end = pos + n
        if end > len(buf):
            raise DecodeError("truncated byte string")
        return bytes(buf[pos:end]), end


BYTES = _Bytes()


class FixedBytes(Codec):
    def __init__(self, size: int):
        self.size = size

    def write(self, value, out):
        if len(value) != self.size:
            raise ValueError(f"expected {self.size} bytes, got {len(value)}")
        out += value

    def read(self, buf, pos):
        end = pos + self.size
        if end > len(buf):
            raise DecodeError("truncated fixed bytes")
        return bytes(buf[pos:end]), end


HASH = FixedBytes(32)


class Seq(Codec):
    """Length-prefixed sequence, decoded as a tuple."""

    def __init__(self, item):
        self.item = item

    def write(self, value, out):
        out += U32.st.pack(len(value))
        w = self.item.write
        for v in value:
            w(v, out)

    def read(self, buf, pos):
        n, pos = U32.read(buf, pos)
        if n > len(buf) - pos:
            raise DecodeError("sequence length exceeds buffer")
        items = []
        r = self.item.read
        for _ in range(n):
            v, pos = r(buf, pos)
            items.append(v)
        return tuple(items), pos


class SortedSeq(Seq):
    """Sequence whose elements must be strictly ascending by key(item)."""

    def __init__(self, item, key):
        super().__init__(item)
        self.key = key

    def read(self, buf, pos):
        items, pos = super().read(buf, pos)
        keys = [self.key(i) for i in items]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise DecodeError("map keys not strictly ascending")
        return items, pos


class Opt(Codec):
    def __init__(self, item):
        self.item = item

    def write(self, value, out):
        if value is None:
            out.append(0)
        else:
            out.append(1)
            self.item.write(value, out)

    def read(self, buf, pos):
        present, pos = BOOL.read(buf, pos)
        if not present:
            return None, pos
        return self.item.read(buf, pos)


class Record(Codec):
    """Fields written in declaration order; decoded via cls(*values)."""

    def __init__(self, cls, fields):
        self.cls = cls
        self.fields = tuple(fields)

    def write(self, value, out):
        for name, codec in self.fields:
            codec.write(getattr(value, name), out)

    def read(self, buf, pos):
        vals = []
        for _, codec in self.fields:
            v, pos = codec.read(buf, pos)
            vals.append(v)
        try:
            return self.cls(*vals), pos
        except (TypeError, ValueError) as e:
            raise DecodeError(f"invalid {self.cls.__name__}: {e}") from e


class Tagged(Codec):
    """Union of record types, prefixed by a one-byte tag."""

    def __init__(self, variants: dict):
        self.by_tag = dict(variants)
        self.by_cls = {c.cls: (t, c) for t, c in variants.items()}

    def write(self, value, out):
        try:
            tag, codec = self.by_cls[type(value)]
        except KeyError:
            raise ValueError(f"{type(value).__name__} is not part of this union") from None
        out.append(tag)
        codec.write(value, out)

    def read(self, buf, pos):
        if pos >= len(buf):
            raise DecodeError("truncated tag")
        tag = buf[pos]
        codec = self.by_tag.get(tag)
        if codec is None:
            raise DecodeError(f"unknown tag {tag}")
        return codec.read(buf, pos + 1)


class Lazy(Codec):
    """Defers codec construction, for recursive schemas."""

    def __init__(self, thunk):
        self.thunk = thunk
        self._codec = None

    @property
    def codec(self):
        if self._codec is None:
            self._codec = self.thunk()
        return self._codec

    def write(self, value, out):
        self.codec.write(value, out)

    def read(self, buf, pos):
        return self.codec.read(buf, pos)


class Tuple(Codec):
    """Fixed-arity heterogeneous tuple."""

    def __init__(self, *codecs):
        self.codecs = codecs

    def write(self, value, out):
        if len(value) != len(self.codecs):
            raise ValueError("tuple arity mismatch")
        for c, v in zip(self.codecs, value):
            c.write(v, out)

    def read(self, buf, pos):
        vals = []
        for c in self.codecs:
            v, pos = c.read(buf, pos)
            vals.append(v)
        return tuple(vals), pos
