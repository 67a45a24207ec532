"""MSB-first bit writer/reader with order-0 exp-Golomb codes."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import FormatError


@lru_cache(maxsize=4096)
def ue_code(k: int) -> str:
    b = bin(k + 1)[2:]
    return "0" * (len(b) - 1) + b


@lru_cache(maxsize=4096)
def se_code(v: int) -> str:
    return ue_code(2 * v - 1 if v > 0 else -2 * v)


def se_lengths(levels: np.ndarray) -> np.ndarray:
    """Signed exp-Golomb code length of every entry (vectorised)."""
    v = np.asarray(levels, dtype=np.int64)
    k = np.where(v > 0, 2 * v - 1, -2 * v)
    # frexp(k + 1) = m * 2**e with m in [0.5, 1): floor(log2(k + 1)) = e - 1
    _, e = np.frexp((k + 1).astype(np.float64))
    return 2 * e.astype(np.int64) - 1


def se_bits(levels: np.ndarray) -> int:
    return int(se_lengths(levels).sum())


class BitWriter:
    def __init__(self):
        self._chunks = []
        self.nbits = 0

    def write_bit(self, bit: int) -> None:
        self._chunks.append("1" if bit else "0")
        self.nbits += 1

    def write_bits(self, value: int, n: int) -> None:
        if n:
            self._chunks.append(format(value, f"0{n}b"))
            self.nbits += n

    def write_ue(self, k: int) -> None:
        code = ue_code(k)
        self._chunks.append(code)
        self.nbits += len(code)

    def write_se(self, v: int) -> None:
        code = se_code(v)
        self._chunks.append(code)
        self.nbits += len(code)

    def write_se_array(self, levels: np.ndarray) -> None:
        codes = "".join(map(se_code, np.asarray(levels).ravel().tolist()))
        self._chunks.append(codes)
        self.nbits += len(codes)

    def align(self) -> None:
        pad = -self.nbits % 8
        if pad:
            self.write_bits(0, pad)

    def getvalue(self) -> bytes:
        """Stream contents, zero-padded to a whole byte."""
        s = "".join(self._chunks)
        s += "0" * (-len(s) % 8)
        return int(s, 2).to_bytes(len(s) // 8, "big") if s else b""


class BitReader:
    def __init__(self, data: bytes, offset: int = 0):
        self._bits = "".join(format(b, "08b") for b in data[offset:]) if data else ""
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self._bits) - self.pos

    def read_bit(self) -> int:
        if self.pos >= len(self._bits):
            raise FormatError("truncated bitstream")
        self.pos += 1
        return 1 if self._bits[self.pos - 1] == "1" else 0

    def read_bits(self, n: int) -> int:
        if n == 0:
            return 0
        if self.pos + n > len(self._bits):
            raise FormatError("truncated bitstream")
        v = int(self._bits[self.pos : self.pos + n], 2)
        self.pos += n
        return v

    def read_ue(self) -> int:
        one = self._bits.find("1", self.pos)
        if one < 0:
            raise FormatError("truncated exp-Golomb code")
        zeros = one - self.pos
        end = one + zeros + 1
        if end > len(self._bits):
            raise FormatError("truncated exp-Golomb code")
        k = int(self._bits[one:end], 2) - 1
        self.pos = end
        return k

    def read_se(self) -> int:
        k = self.read_ue()
        return (k + 1) // 2 if k & 1 else -(k // 2)

    def read_se_array(self, count: int) -> list:
        return [self.read_se() for _ in range(count)]

    def align(self) -> None:
        self.pos += -self.pos % 8
