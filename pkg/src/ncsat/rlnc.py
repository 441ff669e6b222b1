"""Random linear network coding over GF(2^8).

The field uses the AES reduction polynomial x^8 + x^4 + x^3 + x + 1 (0x11B)
with generator 3.  Addition is XOR; multiplication goes through log/antilog
tables and a full 256x256 product table for vectorized payload mixing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GF_POLY",
    "gf_mul",
    "gf_inv",
    "Generation",
    "CodedPacket",
    "Decoder",
    "NotDecodableError",
    "encode",
    "full_rank_probability",
]

GF_POLY = 0x11B


def _build_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for k in range(255):
        exp[k] = x
        log[x] = k
        # multiply by the generator 3 = x + 1
        x ^= (x << 1)
        if x & 0x100:
            x ^= GF_POLY
    exp[255:510] = exp[:255]
    a = np.arange(256)
    mul = exp[(log[a][:, None] + log[a][None, :]) % 255].astype(np.uint8)
    mul[0, :] = 0
    mul[:, 0] = 0
    return exp, log, mul


_EXP, _LOG, MUL = _build_tables()
INV = np.zeros(256, dtype=np.uint8)
INV[1:] = _EXP[(255 - _LOG[1:]) % 255]


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return int(INV[a])


def _scale(row: np.ndarray, c: int) -> np.ndarray:
    return MUL[c][row]


class NotDecodableError(RuntimeError):
    def __init__(self, missing: int):
        super().__init__(f"decoder is missing {missing} degree(s) of freedom")
        self.missing = missing


@dataclass(frozen=True)
class Generation:
    packets: tuple[bytes, ...]

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(bytes(p) for p in self.packets))
        if not self.packets:
            raise ValueError("generation must hold at least one packet")
        if len({len(p) for p in self.packets}) != 1:
            raise ValueError("all packets in a generation must have equal length")

    @property
    def size(self) -> int:
        return len(self.packets)

    @property
    def payload_bytes(self) -> int:
        return len(self.packets[0])

    def as_array(self) -> np.ndarray:
        return np.frombuffer(b"".join(self.packets), dtype=np.uint8).reshape(self.size, -1)


@dataclass(frozen=True)
class CodedPacket:
    coefficients: bytes
    payload: bytes


def encode(gen: Generation, n: int, seed: int | np.random.Generator) -> list[CodedPacket]:
    """``n`` coded packets with uniform random non-zero coefficient vectors."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    src = gen.as_array()
    coeffs = rng.integers(0, 256, size=(n, gen.size), dtype=np.uint8)
    zero = ~coeffs.any(axis=1)
    while zero.any():
        coeffs[zero] = rng.integers(0, 256, size=(int(zero.sum()), gen.size), dtype=np.uint8)
        zero = ~coeffs.any(axis=1)
    out = []
    for row in coeffs:
        mixed = np.zeros(gen.payload_bytes, dtype=np.uint8)
        for c, s in zip(row.tolist(), src):
            if c:
                mixed ^= MUL[c][s]
        out.append(CodedPacket(row.tobytes(), mixed.tobytes()))
    return out


@dataclass
class Decoder:
    """Incremental Gauss-Jordan decoder for one generation.

    Accepted rows are kept in reduced row-echelon form, so ``decode`` is a
    reordering once the rank is full.
    """

    gen_size: int
    payload_bytes: int
    _coeffs: list[np.ndarray] = field(default_factory=list, repr=False)
    _payloads: list[np.ndarray] = field(default_factory=list, repr=False)
    _pivots: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.gen_size < 1:
            raise ValueError("gen_size must be >= 1")

    @property
    def rank(self) -> int:
        return len(self._pivots)

    @property
    def missing(self) -> int:
        return self.gen_size - self.rank

    def is_complete(self) -> bool:
        return self.rank == self.gen_size

    def absorb(self, pkt: CodedPacket) -> bool:
        """Add a packet; True when it raised the rank."""
        c = np.frombuffer(pkt.coefficients, dtype=np.uint8).copy()
        if c.size != self.gen_size:
            raise ValueError(f"coefficient vector has length {c.size}, expected {self.gen_size}")
        p = np.frombuffer(pkt.payload, dtype=np.uint8).copy()
        if p.size != self.payload_bytes:
            raise ValueError(f"payload has {p.size} bytes, expected {self.payload_bytes}")
        for row_c, row_p, piv in zip(self._coeffs, self._payloads, self._pivots):
            f = int(c[piv])
            if f:
                c ^= _scale(row_c, f)
                p ^= _scale(row_p, f)
        nz = np.flatnonzero(c)
        if nz.size == 0:
            return False
        piv = int(nz[0])
        inv = gf_inv(int(c[piv]))
        c = _scale(c, inv)
        p = _scale(p, inv)
        for k, (row_c, row_p) in enumerate(zip(self._coeffs, self._payloads)):
            f = int(row_c[piv])
            if f:
                self._coeffs[k] = row_c ^ _scale(c, f)
                self._payloads[k] = row_p ^ _scale(p, f)
        self._coeffs.append(c)
        self._payloads.append(p)
        self._pivots.append(piv)
        return True

    def decode(self) -> list[bytes]:
        if not self.is_complete():
            raise NotDecodableError(self.missing)
        order = np.argsort(self._pivots)
        return [self._payloads[k].tobytes() for k in order]


def full_rank_probability(i: int, q: int = 256) -> float:
    """P(i uniformly random vectors in GF(q)^i are linearly independent)."""
    prob = 1.0
    for k in range(1, i + 1):
        prob *= 1.0 - float(q) ** (-k)
    return prob
