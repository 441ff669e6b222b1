"""Modulation table, bit/packet error models and energy bookkeeping.

All signal-to-noise arguments are per-symbol E_s/N0 in dB.  Functions accept
scalars or numpy arrays and return the same kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erfc

__all__ = [
    "Modulation",
    "BPSK",
    "QPSK",
    "PSK8",
    "QAM16",
    "MODULATIONS",
    "PhyConfig",
    "qfunc",
    "db_to_linear",
    "ebn0_from_esn0",
    "bit_error_prob",
    "erasure_prob",
    "symbol_energy",
    "packet_symbols",
    "batch_symbols",
    "batch_duration",
]


class Modulation(Enum):
    BPSK = (2, "BPSK")
    QPSK = (4, "QPSK")
    PSK8 = (8, "8PSK")
    QAM16 = (16, "16QAM")

    def __init__(self, order: int, label: str):
        self.order = order
        self.label = label

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @classmethod
    def from_name(cls, name: str) -> "Modulation":
        for mod in cls:
            if name.upper() in (mod.name, mod.label):
                return mod
        raise ValueError(f"unknown modulation {name!r}")

    def __repr__(self) -> str:
        return self.label


BPSK = Modulation.BPSK
QPSK = Modulation.QPSK
PSK8 = Modulation.PSK8
QAM16 = Modulation.QAM16

# Ascending order; adaptive modulation picks the last qualifying entry.
MODULATIONS: tuple[Modulation, ...] = (BPSK, QPSK, PSK8, QAM16)


@dataclass(frozen=True)
class PhyConfig:
    """Physical-layer constants shared by every scheme.

    Attributes
    ----------
    packet_bits : int
        Payload bits per coded packet.
    n0_dbm : float
        Noise spectral level in dBm.
    symbol_rate : float
        Symbols per second; fixes the packet airtime.
    qos_pb_threshold : float
        Largest bit error probability at which a transmitter may send.
    """

    packet_bits: int = 1000
    n0_dbm: float = -107.0
    symbol_rate: float = 1.0e6
    qos_pb_threshold: float = 1.0e-5

    def __post_init__(self):
        if int(self.packet_bits) != self.packet_bits or self.packet_bits < 1:
            raise ValueError(f"packet_bits must be a positive integer, got {self.packet_bits}")
        if not self.symbol_rate > 0:
            raise ValueError(f"symbol_rate must be positive, got {self.symbol_rate}")
        if not 0.0 < self.qos_pb_threshold < 1.0:
            raise ValueError(f"qos_pb_threshold must lie in (0, 1), got {self.qos_pb_threshold}")


def db_to_linear(value_db):
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def _like(value, template):
    return float(value) if np.ndim(template) == 0 else value


def qfunc(x):
    """Gaussian tail probability, Q(x) = erfc(x / sqrt(2)) / 2."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def ebn0_from_esn0(esn0_db, mod: Modulation):
    """Energy per bit over N0 (dB) for a given energy per symbol over N0 (dB)."""
    return esn0_db - 10.0 * math.log10(mod.bits_per_symbol)


# Gauss-Legendre nodes for the finite-range phase integrals of 8PSK.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(128)


def _phase_tail(gamma: np.ndarray, psi: float) -> np.ndarray:
    """P(received phase error > psi) for unit-energy PSK in AWGN, 0 <= psi <= pi.

    One-sided form of the finite-range integral
    (1 / 2pi) * int_0^{pi - psi} exp(-gamma sin^2(psi) / sin^2(phi)) dphi.
    Each node contributes a term that is non-increasing in gamma, so the
    quadrature keeps the monotonicity of the exact value.
    """
    upper = math.pi - psi
    phi = 0.5 * upper * (_GL_X + 1.0)
    weights = 0.5 * upper * _GL_W
    ratio = math.sin(psi) ** 2 / np.sin(phi) ** 2
    terms = np.exp(-np.multiply.outer(gamma, ratio))
    return terms @ weights / (2.0 * math.pi)


def bit_error_prob(esn0_db, mod: Modulation):
    """Gray-coded AWGN bit error probability at the given E_s/N0 (dB).

    BPSK and QPSK use the exact Q(sqrt(2 Eb/N0)).  8PSK integrates the exact
    phase-error distribution over the Gray sectors and 16QAM uses the exact
    Gray square-constellation expression.  Results are clamped to [0, 0.5].
    """
    gamma = db_to_linear(esn0_db)
    if mod is BPSK:
        pb = qfunc(np.sqrt(2.0 * gamma))
    elif mod is QPSK:
        pb = qfunc(np.sqrt(gamma))
    elif mod is PSK8:
        # Average Gray distances per sector offset are (1, 2, 2, 2) for the
        # offsets 1..4, so the boundary terms at 5pi/8 and 7pi/8 cancel.
        g = np.atleast_1d(gamma)
        pb = (2.0 / 3.0) * (_phase_tail(g, math.pi / 8) + _phase_tail(g, 3 * math.pi / 8))
        pb = pb.reshape(np.shape(gamma))
    elif mod is QAM16:
        x = np.sqrt(gamma / 5.0)
        pb = 0.75 * qfunc(x) + 0.5 * qfunc(3.0 * x) - 0.25 * qfunc(5.0 * x)
    else:
        raise ValueError(f"unsupported modulation {mod!r}")
    return _like(np.clip(pb, 0.0, 0.5), esn0_db)


def erasure_prob(p_b, packet_bits: int):
    """Probability that a packet of ``packet_bits`` bits contains a bit error.

    Evaluated as -expm1(B * log1p(-p_b)) so that tiny p_b keeps full precision.
    """
    p = np.asarray(p_b, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("bit error probability must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        pe = -np.expm1(packet_bits * np.log1p(-p))
    return _like(np.clip(pe, 0.0, 1.0), p_b)


def symbol_energy(esn0_db, n0_dbm: float):
    """Transmit energy per symbol in mW per Hz (E_s = N0 * E_s/N0)."""
    return _like(db_to_linear(n0_dbm) * db_to_linear(esn0_db), esn0_db)


def packet_symbols(packet_bits: int, mod: Modulation) -> int:
    """Symbols needed to carry one packet (rounded up)."""
    return -(-packet_bits // mod.bits_per_symbol)


def batch_symbols(n_packets: int, packet_bits: int, mod: Modulation) -> int:
    """Symbols in a back-to-back batch; padding is applied once per batch."""
    return -(-(n_packets * packet_bits) // mod.bits_per_symbol)


def batch_duration(n_packets: int, phy: PhyConfig, mod: Modulation,
                   t_p: float | None = None) -> float:
    """Airtime of a batch in seconds.

    ``t_p`` overrides the BPSK packet duration; other modulations scale it by
    their symbol count.
    """
    symbols = batch_symbols(n_packets, phy.packet_bits, mod)
    if t_p is None:
        return symbols / phy.symbol_rate
    return t_p * (symbols / packet_symbols(phy.packet_bits, BPSK))
