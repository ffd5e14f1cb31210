"""Bounds-checked little-endian reader used by the binary file formats."""

import struct

import numpy as np

from gesturelift.errors import ParseError


class Reader:
    def __init__(self, data: bytes, what="file"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n, field):
        if n < 0 or self.pos + n > len(self.data):
            raise ParseError(f"truncated {self.what} while reading {field}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))

    def array(self, dtype, count, field):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, field), dtype=dt)

    def at_end(self):
        return self.pos == len(self.data)
